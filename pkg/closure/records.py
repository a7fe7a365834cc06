# -*- coding: utf-8 -*-
"""
运行记录与实验结果的数据结构
引擎负责产生，reporting 负责持久化和展示
"""
import math
import statistics
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from closure.stimulus import Phase, StimulusSource
from duts.base_dut import ResponseVector, StimulusVector, TestStatus


@dataclass(frozen=True)
class RunRecord:
    """一次事务的完整记录：输入、输出、覆盖率和通过/失败状态"""

    iteration: int
    phase: Phase
    source: StimulusSource
    stimulus: StimulusVector
    response: ResponseVector
    status: TestStatus
    newly_hit: Tuple[int, ...]
    # 保留 6 位小数，与日志格式一致
    coverage: float


@dataclass(frozen=True)
class ConvergenceCurve:
    points: Tuple[Tuple[int, float], ...]

    def __post_init__(self):
        for (x0, y0), (x1, y1) in zip(self.points, self.points[1:]):
            if x1 <= x0 or y1 < y0:
                raise ValueError("收敛曲线必须迭代号严格递增、覆盖率不下降")

    @classmethod
    def from_records(cls, records: Sequence[RunRecord], start_coverage: float = 0.0) -> "ConvergenceCurve":
        """
        只保留覆盖率发生变化的点，横轴为记录序号（从 1 开始）
        """
        points = [(0, round(start_coverage, 6))]
        for i, record in enumerate(records, start=1):
            if record.coverage > points[-1][1]:
                points.append((i, record.coverage))
        end = max(1, len(records))
        if points[-1][0] < end:
            points.append((end, points[-1][1]))
        return cls(tuple(points))


@dataclass(frozen=True)
class SeedResult:
    seed: int
    converged: bool
    # 未收敛时为 None
    iterations: Optional[int]
    total_iterations: int
    coverage: float
    curve: Optional[ConvergenceCurve] = None


def _median(values: List[float]) -> Optional[float]:
    """未收敛按无穷大参与排序，中位数落到无穷大时返回 None"""
    if not values:
        return None
    m = statistics.median(values)
    return None if math.isinf(m) else m


@dataclass
class CellResult:
    """表格中的一个格子：某个位宽下某种方法的全部种子结果"""

    width: int
    method: str
    seeds: List[SeedResult] = field(default_factory=list)

    def _values(self) -> List[float]:
        return [s.iterations if s.converged else math.inf for s in self.seeds]

    @property
    def median(self) -> Optional[float]:
        return _median(self._values())

    @property
    def min(self) -> Optional[int]:
        done = [s.iterations for s in self.seeds if s.converged]
        return min(done) if done else None

    @property
    def max(self) -> Optional[int]:
        if not self.seeds or not all(s.converged for s in self.seeds):
            return None
        return max(s.iterations for s in self.seeds)

    @property
    def converged_seeds(self) -> int:
        return sum(1 for s in self.seeds if s.converged)

    @property
    def converged(self) -> bool:
        """中位数有限即视为该格子收敛"""
        return self.median is not None


@dataclass
class ExperimentReport:
    dut: str
    widths: List[int]
    seeds_per_width: int
    iteration_cap: int
    methods: List[str]
    cells: Dict[Tuple[int, str], CellResult] = field(default_factory=dict)
    config: Dict = field(default_factory=dict)
    version: str = ""
    timestamp: str = ""

    def cell(self, width: int, method: str) -> Optional[CellResult]:
        return self.cells.get((width, method))
