# -*- coding: utf-8 -*-
"""
功能覆盖率模型
coverpoint / bin / cross 的定义、命中统计、覆盖空洞枚举，以及提供给神经网络的向量编码

bin 编号规则：先按声明顺序排列所有 coverpoint 的 bin，再排列 cross 的 bin；
cross 的 bin 号是成员 bin 号的混合进制组合，第一个成员为最高位
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
from treelib import Tree

from closure.errors import ConfigError, ModelCompletenessError, PreconditionError
from duts.base_dut import BaseDut, Direction, DutSpec, ResponseVector, StimulusVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Bin:
    """连续区间 [lo, hi] 或显式取值集合"""

    lo: int = 0
    hi: int = 0
    values: Optional[FrozenSet[int]] = None

    @classmethod
    def single(cls, value: int) -> "Bin":
        return cls(value, value)

    def contains(self, value: int) -> bool:
        if self.values is not None:
            return value in self.values
        return self.lo <= value <= self.hi

    def intervals(self) -> List[Tuple[int, int]]:
        if self.values is not None:
            return [(v, v) for v in self.values]
        return [(self.lo, self.hi)]

    @property
    def label(self) -> str:
        if self.values is not None:
            return "{" + ",".join(str(v) for v in sorted(self.values)) + "}"
        if self.lo == self.hi:
            return str(self.lo)
        return f"[{self.lo}:{self.hi}]"

    def describe(self) -> Union[int, list, dict]:
        if self.values is not None:
            return {"values": sorted(self.values)}
        if self.lo == self.hi:
            return self.lo
        return [self.lo, self.hi]


class Coverpoint:
    """对某个端口采样的 coverpoint"""

    def __init__(self, name: str, direction: Direction, port_index: int, bins: Sequence[Bin]):
        if not bins:
            raise ConfigError(f"coverpoint {name} 没有任何 bin")
        self.name = name
        self.direction = direction
        self.port_index = port_index
        self.bins: Tuple[Bin, ...] = tuple(bins)
        self._lookup: Dict[int, int] = {}
        self._ranges: List[Tuple[int, int, int]] = []
        intervals = []
        for i, b in enumerate(self.bins):
            for lo, hi in b.intervals():
                intervals.append((lo, hi, i))
                if lo == hi:
                    self._lookup[lo] = i
                else:
                    self._ranges.append((lo, hi, i))
        intervals.sort()
        for (lo1, hi1, i1), (lo2, _, i2) in zip(intervals, intervals[1:]):
            if lo2 <= hi1:
                raise ConfigError(f"coverpoint {name} 的 bin {i1} 与 bin {i2} 重叠")

    def __len__(self):
        return len(self.bins)

    @property
    def source_kind(self) -> str:
        return "in" if self.direction == Direction.IN else "out"

    def value_of(self, stimulus: StimulusVector, response: ResponseVector) -> int:
        if self.direction == Direction.IN:
            return stimulus.values[self.port_index]
        return response.values[self.port_index]

    def bin_index(self, value: int) -> int:
        index = self._lookup.get(value)
        if index is not None:
            return index
        for lo, hi, i in self._ranges:
            if lo <= value <= hi:
                return i
        raise ModelCompletenessError(f"coverpoint {self.name} 的采样值 {value} 不属于任何 bin")


class CrossSpec:
    """若干 coverpoint 的笛卡尔积"""

    def __init__(self, members: Sequence[int], coverpoints: Sequence[Coverpoint]):
        if len(members) < 2:
            raise ConfigError("cross 至少需要两个 coverpoint")
        if len(set(members)) != len(members):
            raise ConfigError("cross 成员重复")
        self.members: Tuple[int, ...] = tuple(members)
        self.radices: Tuple[int, ...] = tuple(len(coverpoints[m]) for m in members)
        self.name = "×".join(coverpoints[m].name for m in members)
        self.size = int(np.prod(self.radices, dtype=np.int64))

    def __len__(self):
        return self.size

    def compose(self, member_bins: Sequence[int]) -> int:
        index = 0
        for radix, b in zip(self.radices, member_bins):
            index = index * radix + b
        return index

    def decompose(self, index: int) -> List[int]:
        member_bins = []
        for radix in reversed(self.radices):
            member_bins.append(index % radix)
            index //= radix
        return member_bins[::-1]


class CoverageModel:
    """
    覆盖率模型，与某个 DutSpec 绑定
    cross_only 为真时只有 cross 的 bin 参与统计和编码
    """

    def __init__(
        self,
        spec: DutSpec,
        coverpoints: Sequence[Coverpoint],
        crosses: Sequence[Sequence[str]] = (),
        cross_only: bool = False,
    ):
        self.spec = spec
        self.coverpoints: Tuple[Coverpoint, ...] = tuple(coverpoints)
        names = [cp.name for cp in self.coverpoints]
        if len(set(names)) != len(names):
            raise ConfigError("coverpoint 名称重复")
        self.crosses: List[CrossSpec] = []
        for members in crosses:
            try:
                indices = [names.index(m) for m in members]
            except ValueError:
                raise ConfigError(f"cross 引用了不存在的 coverpoint: {members}") from None
            self.crosses.append(CrossSpec(indices, self.coverpoints))
        self.cross_only = cross_only
        if cross_only and not self.crosses:
            raise ConfigError("cross_only 模型至少需要一个 cross")

        # 每个分组（coverpoint 或 cross）在扁平 bin 列表中的起始位置
        self.groups: List[Tuple[str, Union[Coverpoint, CrossSpec], int]] = []
        offset = 0
        if not cross_only:
            for cp in self.coverpoints:
                self.groups.append(("coverpoint", cp, offset))
                offset += len(cp)
        for cross in self.crosses:
            self.groups.append(("cross", cross, offset))
            offset += len(cross)
        self.total_bins = offset
        self._cp_offset = {
            id(group): start for kind, group, start in self.groups if kind == "coverpoint"
        }
        logger.debug(
            f"覆盖率模型 {spec.name}: {len(self.coverpoints)} coverpoint, "
            f"{len(self.crosses)} cross, 共 {self.total_bins} bins"
        )

    def bins_for(self, stimulus: StimulusVector, response: ResponseVector) -> List[int]:
        """一次采样落入的 bin：每个 coverpoint、每个 cross 各一个"""
        member_bins = [
            cp.bin_index(cp.value_of(stimulus, response)) for cp in self.coverpoints
        ]
        ids = []
        if not self.cross_only:
            for i, cp in enumerate(self.coverpoints):
                ids.append(self._cp_offset[id(cp)] + member_bins[i])
        for kind, group, start in self.groups:
            if kind == "cross":
                ids.append(start + group.compose([member_bins[m] for m in group.members]))
        return ids

    def locate(self, bin_id: int) -> Tuple[str, Union[Coverpoint, CrossSpec], int]:
        """bin 号 -> (分组类型, 分组, 组内序号)"""
        if not 0 <= bin_id < self.total_bins:
            raise PreconditionError(f"bin 号越界: {bin_id}，总数 {self.total_bins}")
        for kind, group, start in reversed(self.groups):
            if bin_id >= start:
                return kind, group, bin_id - start
        raise AssertionError("unreachable")

    def cross_members(self, bin_id: int) -> List[Tuple[Coverpoint, int]]:
        """
        把 cross bin 拆成成员 coverpoint 及其组内 bin 序号
        coverpoint bin 返回它自身
        """
        kind, group, local = self.locate(bin_id)
        if kind == "coverpoint":
            return [(group, local)]
        return [
            (self.coverpoints[m], b) for m, b in zip(group.members, group.decompose(local))
        ]

    def coverpoint_bin_id(self, coverpoint: Coverpoint, local: int) -> Optional[int]:
        """coverpoint 组内序号 -> 扁平 bin 号；cross_only 模型中返回 None"""
        start = self._cp_offset.get(id(coverpoint))
        if start is None:
            return None
        return start + local

    def bin_name(self, bin_id: int) -> str:
        kind, group, local = self.locate(bin_id)
        if kind == "coverpoint":
            return f"{group.name}={group.bins[local].label}"
        members = self.cross_members(bin_id)
        labels = ",".join(cp.bins[b].label for cp, b in members)
        return f"{group.name}=({labels})"


def _parse_bins(port_width: int, bins) -> List[Bin]:
    if bins == "each":
        return [Bin.single(v) for v in range(1 << port_width)]
    parsed = []
    for item in bins:
        if isinstance(item, int):
            parsed.append(Bin.single(item))
        elif isinstance(item, list) and len(item) == 2:
            lo, hi = int(item[0]), int(item[1])
            if lo > hi:
                raise ConfigError(f"bin 区间非法: {item}")
            parsed.append(Bin(lo, hi))
        elif isinstance(item, dict) and set(item) == {"values"} and item["values"]:
            parsed.append(Bin(values=frozenset(int(v) for v in item["values"])))
        else:
            raise ConfigError(f"无法识别的 bin 描述: {item!r}")
    return parsed


def model_from_description(spec: DutSpec, description: Dict) -> CoverageModel:
    """
    从配置描述构建覆盖率模型
    Args:
        description: {"coverpoints": [{"name", "source": "in:a", "bins": "each" | [...]}],
                      "crosses": [["a", "b"]], "cross_only": false}
    """
    unknown = set(description) - {"coverpoints", "crosses", "cross_only"}
    if unknown:
        raise ConfigError(f"覆盖率模型存在未知字段: {', '.join(sorted(unknown))}")
    coverpoints = []
    for item in description.get("coverpoints", []):
        unknown = set(item) - {"name", "source", "bins"}
        if unknown:
            raise ConfigError(f"coverpoint 存在未知字段: {', '.join(sorted(unknown))}")
        try:
            name, source = item["name"], item["source"]
        except KeyError as e:
            raise ConfigError(f"coverpoint 缺少字段 {e}") from None
        prefix, _, port_name = source.partition(":")
        direction, index = spec.locate(port_name)
        if prefix not in ("in", "out") or (prefix == "in") != (direction == Direction.IN):
            raise ConfigError(f"coverpoint {name} 的 source 非法: {source}")
        ports = spec.inputs if direction == Direction.IN else spec.outputs
        bins = _parse_bins(ports[index].width, item.get("bins", "each"))
        coverpoints.append(Coverpoint(name, direction, index, bins))
    if not coverpoints:
        raise ConfigError("覆盖率模型没有任何 coverpoint")
    return CoverageModel(
        spec,
        coverpoints,
        description.get("crosses", []),
        bool(description.get("cross_only", False)),
    )


def describe_model(model: CoverageModel) -> Dict:
    """模型序列化，重新载入后 bin 编号保持不变"""
    coverpoints = []
    for cp in model.coverpoints:
        ports = model.spec.inputs if cp.direction == Direction.IN else model.spec.outputs
        coverpoints.append(
            {
                "name": cp.name,
                "source": f"{cp.source_kind}:{ports[cp.port_index].name}",
                "bins": [b.describe() for b in cp.bins],
            }
        )
    return {
        "coverpoints": coverpoints,
        "crosses": [[model.coverpoints[m].name for m in c.members] for c in model.crosses],
        "cross_only": model.cross_only,
    }


def default_model(dut: BaseDut, width: Optional[int] = None, cross_only: bool = False) -> CoverageModel:
    """
    默认覆盖率模型
    comparator: a、b 每个取值一个 bin，加上 cross(a, b)
    alu: op、a、b 每个取值一个 bin，加上 cross(op, a)
    """
    width = dut.width if width is None else width
    if dut.DUT_TYPE == "comparator":
        description = {
            "coverpoints": [
                {"name": "a", "source": "in:a", "bins": "each"},
                {"name": "b", "source": "in:b", "bins": "each"},
            ],
            "crosses": [["a", "b"]],
        }
    elif dut.DUT_TYPE == "alu":
        description = {
            "coverpoints": [
                {"name": "op", "source": "in:op", "bins": "each"},
                {"name": "a", "source": "in:a", "bins": "each"},
                {"name": "b", "source": "in:b", "bins": "each"},
            ],
            "crosses": [["op", "a"]],
        }
    else:
        raise ConfigError(f"{dut.DUT_TYPE} 没有默认覆盖率模型")
    if width != dut.width:
        raise PreconditionError(f"位宽 {width} 与 DUT 位宽 {dut.width} 不符")
    description["cross_only"] = cross_only
    return model_from_description(dut.spec, description)


class CoverageDatabase:
    """单次回归独占的命中计数"""

    def __init__(self, model: CoverageModel):
        self.model = model
        self.total_bins = model.total_bins
        self.hits: List[int] = [0] * model.total_bins
        self.covered = 0

    def sample(self, stimulus: StimulusVector, response: ResponseVector) -> List[int]:
        return self.sample_bins(stimulus, response)[1]

    def sample_bins(self, stimulus: StimulusVector, response: ResponseVector) -> Tuple[List[int], List[int]]:
        """
        Returns:
            (本次落入的全部 bin, 其中由 0 变为 1 的 bin)
        """
        bins = self.model.bins_for(stimulus, response)
        newly_hit = []
        for bin_id in bins:
            if self.hits[bin_id] == 0:
                newly_hit.append(bin_id)
                self.covered += 1
            self.hits[bin_id] += 1
        return bins, newly_hit

    def goal_reached(self, goal: float) -> bool:
        # 避免 goal * total 的浮点误差
        return self.covered >= math.ceil(goal * self.total_bins - 1e-9)

    def coverage_fraction(self) -> float:
        if self.total_bins == 0:
            return 1.0
        return self.covered / self.total_bins

    def uncovered(self) -> List[int]:
        return [i for i, h in enumerate(self.hits) if h == 0]

    def is_covered(self, bin_id: int) -> bool:
        return self.hits[bin_id] > 0

    def encode_target(self, bin_id: int) -> np.ndarray:
        if not 0 <= bin_id < self.total_bins:
            raise PreconditionError(f"bin 号越界: {bin_id}，总数 {self.total_bins}")
        vector = np.zeros(self.total_bins)
        vector[bin_id] = 1.0
        return vector

    def bin_name(self, bin_id: int) -> str:
        return self.model.bin_name(bin_id)

    def hit_counts(self) -> Dict[str, int]:
        """以扁平 bin 号为键的命中次数，用于写入报告"""
        return {str(i): h for i, h in enumerate(self.hits)}

    def hit_summary(self) -> Dict[str, float]:
        """已覆盖 bin 的命中次数分布，衡量激励是否集中在容易的场景"""
        hit = [h for h in self.hits if h > 0]
        if not hit:
            return {"covered": 0, "min": 0, "max": 0, "mean": 0.0}
        return {
            "covered": len(hit),
            "min": min(hit),
            "max": max(hit),
            "mean": round(sum(hit) / len(hit), 6),
        }


def sample(db: CoverageDatabase, stimulus: StimulusVector, response: ResponseVector) -> List[int]:
    return db.sample(stimulus, response)


def coverage_fraction(db: CoverageDatabase) -> float:
    return db.coverage_fraction()


def uncovered(db: CoverageDatabase) -> List[int]:
    return db.uncovered()


def encode_target(db: CoverageDatabase, bin_id: int) -> np.ndarray:
    return db.encode_target(bin_id)


def hole_tree(db: CoverageDatabase, limit: int = 32) -> Tree:
    """按 coverpoint / cross 分组展示覆盖空洞，每组最多列出 limit 个"""
    tree = Tree()
    tree.create_node(
        f"📊 {db.model.spec.name} {db.covered}/{db.total_bins} bins", "root"
    )
    for kind, group, start in db.model.groups:
        holes = [i for i in range(start, start + len(group)) if db.hits[i] == 0]
        icon = "✅" if not holes else "🕳️"
        node_id = f"{kind}:{group.name}"
        tree.create_node(
            f"{icon}{kind} {group.name} ({len(group) - len(holes)}/{len(group)})",
            node_id,
            parent="root",
        )
        for bin_id in holes[:limit]:
            tree.create_node(f"#{bin_id} {db.bin_name(bin_id)}", bin_id, parent=node_id)
        if len(holes) > limit:
            tree.create_node(f"... 还有 {len(holes) - limit} 个", f"{node_id}:more", parent=node_id)
    return tree
