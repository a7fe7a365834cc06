# -*- coding: utf-8 -*-
"""
约束随机激励
splitmix64 伪随机数发生器、端口约束、随机/模型激励多路选择器
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from closure.errors import ConfigError, PreconditionError
from duts.base_dut import DutSpec, StimulusVector

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class Prng:
    """splitmix64，同一种子在任何平台上产生相同序列"""

    def __init__(self, seed: int = 0):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def next_u64_array(self, n: int) -> np.ndarray:
        """连续 n 次 next_u64 的向量化版本，结果与逐次调用逐位相同"""
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA)
        z = np.uint64(self.state) + steps
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def skip(self, n: int):
        """跳过 n 个输出"""
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64

    def random(self) -> float:
        """[0, 1) 区间的浮点数"""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def random_array(self, n: int) -> np.ndarray:
        return (self.next_u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def randbelow(self, n: int) -> int:
        # 取模偏差在 2^64 面前可以忽略
        return self.next_u64() % n

    def shuffle(self, items: list):
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]


def next_u64(prng: Prng) -> int:
    return prng.next_u64()


class Phase(str, Enum):
    TRAIN = "TRAIN"
    TEST = "TEST"


class StimulusSource(str, Enum):
    RANDOM = "RANDOM"
    MODEL = "MODEL"


def mux_select(phase: Phase, model_ready: bool, fallback: bool) -> StimulusSource:
    """训练阶段固定随机激励，测试阶段在模型可用且未回退时切到模型激励"""
    if phase == Phase.TEST and model_ready and not fallback:
        return StimulusSource.MODEL
    return StimulusSource.RANDOM


@dataclass(frozen=True)
class Constraint:
    """
    单个输入端口的约束
    kind: full / range / weighted
    """

    kind: str
    lo: int = 0
    hi: int = 0
    weights: Tuple[Tuple[int, int], ...] = ()

    @classmethod
    def full(cls, width: int) -> "Constraint":
        return cls("full", 0, (1 << width) - 1)

    @classmethod
    def range(cls, lo: int, hi: int) -> "Constraint":
        return cls("range", lo, hi)

    @classmethod
    def weighted(cls, weights: Sequence[Tuple[int, int]]) -> "Constraint":
        return cls("weighted", weights=tuple((int(v), int(w)) for v, w in weights))

    @property
    def total_weight(self) -> int:
        return sum(w for _, w in self.weights)

    def validate(self, width: int, port: str = "?"):
        limit = 1 << width
        if self.kind in ("full", "range"):
            if not 0 <= self.lo <= self.hi < limit:
                raise ConfigError(f"端口 {port} 约束范围非法: [{self.lo}, {self.hi}]")
        elif self.kind == "weighted":
            if not self.weights:
                raise ConfigError(f"端口 {port} 权重列表为空")
            for value, weight in self.weights:
                if not 0 <= value < limit:
                    raise ConfigError(f"端口 {port} 权重取值越界: {value}")
                if weight <= 0:
                    raise ConfigError(f"端口 {port} 权重必须为正整数: {weight}")
        else:
            raise ConfigError(f"端口 {port} 未知约束类型: {self.kind}")

    def draw(self, u: int) -> int:
        if self.kind == "weighted":
            r = u % self.total_weight
            for value, weight in self.weights:
                if r < weight:
                    return value
                r -= weight
            raise AssertionError("unreachable")
        return self.lo + u % (self.hi - self.lo + 1)

    def allows(self, value: int) -> bool:
        if self.kind == "weighted":
            return any(value == v for v, _ in self.weights)
        return self.lo <= value <= self.hi


def default_constraints(spec: DutSpec) -> List[Constraint]:
    """所有输入端口取全范围"""
    return [Constraint.full(port.width) for port in spec.inputs]


def validate_constraints(spec: DutSpec, constraints: Sequence[Constraint]):
    if len(constraints) != len(spec.inputs):
        raise ConfigError(f"约束数量 {len(constraints)} 与输入端口数量 {len(spec.inputs)} 不符")
    for port, constraint in zip(spec.inputs, constraints):
        constraint.validate(port.width, port.name)


def constraints_from_description(spec: DutSpec, description: Optional[Dict]) -> List[Constraint]:
    """
    解析配置文件中的约束描述
    Args:
        description: {端口名: "full" | [lo, hi] | {"weights": [[value, weight], ...]}}
    Returns:
        按端口顺序排列的约束列表
    """
    description = dict(description or {})
    constraints = []
    for port in spec.inputs:
        item = description.pop(port.name, "full")
        if item == "full":
            constraint = Constraint.full(port.width)
        elif isinstance(item, list) and len(item) == 2:
            constraint = Constraint.range(int(item[0]), int(item[1]))
        elif isinstance(item, dict) and set(item) == {"weights"}:
            constraint = Constraint.weighted(item["weights"])
        else:
            raise ConfigError(f"端口 {port.name} 约束格式无法识别: {item!r}")
        constraint.validate(port.width, port.name)
        constraints.append(constraint)
    if description:
        raise ConfigError(f"约束中存在未知端口: {', '.join(sorted(description))}")
    return constraints


def random_stimulus(constraints: Sequence[Constraint], prng: Prng) -> StimulusVector:
    """按端口顺序每个端口抽取一次"""
    return StimulusVector(tuple(c.draw(prng.next_u64()) for c in constraints))


def stimulus_to_bits(spec: DutSpec, stimulus: StimulusVector) -> List[int]:
    """按端口顺序拼接位向量，端口内高位在前"""
    bits = []
    for port, value in zip(spec.inputs, stimulus.values):
        bits.extend((value >> (port.width - 1 - i)) & 1 for i in range(port.width))
    return bits


def bits_to_stimulus(spec: DutSpec, bits: Sequence[int]) -> StimulusVector:
    if len(bits) != spec.input_bits:
        raise PreconditionError(f"位向量长度 {len(bits)} 与输入位宽 {spec.input_bits} 不符")
    values = []
    offset = 0
    for port in spec.inputs:
        value = 0
        for bit in bits[offset:offset + port.width]:
            value = (value << 1) | (1 if bit else 0)
        values.append(value)
        offset += port.width
    return StimulusVector(tuple(values))
