# -*- coding: utf-8 -*-
"""
DUT 基类
定义所有事务级 DUT 模型必须实现的接口，以及端口、激励、响应等公共类型
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Sequence, Tuple

from closure.errors import PreconditionError, StructuralError


class Direction(str, Enum):
    IN = "IN"
    OUT = "OUT"


class TestStatus(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"

    # 防止 pytest 把它当成测试类收集
    __test__ = False


@dataclass(frozen=True)
class PortSpec:
    name: str
    width: int
    direction: Direction = Direction.IN

    def __post_init__(self):
        if not self.name or not self.name.isidentifier():
            raise PreconditionError(f"非法端口名: {self.name!r}")
        if not 1 <= self.width <= 64:
            raise PreconditionError(f"端口 {self.name} 位宽越界: {self.width}")

    @property
    def max_value(self) -> int:
        return (1 << self.width) - 1


@dataclass(frozen=True)
class DutSpec:
    """
    DUT 端口描述
    端口顺序即位向量拼接顺序（首个端口的最高位在最前）
    """

    name: str
    inputs: Tuple[PortSpec, ...]
    outputs: Tuple[PortSpec, ...]
    _index: Dict[str, Tuple[Direction, int]] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self):
        if not self.inputs or not self.outputs:
            raise PreconditionError(f"{self.name}: 至少需要一个输入端口和一个输出端口")
        for port in self.inputs:
            if port.direction != Direction.IN:
                raise PreconditionError(f"{self.name}: 输入端口 {port.name} 方向错误")
        for port in self.outputs:
            if port.direction != Direction.OUT:
                raise PreconditionError(f"{self.name}: 输出端口 {port.name} 方向错误")
        for direction, ports in ((Direction.IN, self.inputs), (Direction.OUT, self.outputs)):
            for i, port in enumerate(ports):
                if port.name in self._index:
                    raise PreconditionError(f"{self.name}: 端口名重复 {port.name}")
                self._index[port.name] = (direction, i)

    @property
    def input_bits(self) -> int:
        """输入端口总位数 D"""
        return sum(port.width for port in self.inputs)

    def locate(self, port_name: str) -> Tuple[Direction, int]:
        """根据端口名返回 (方向, 序号)"""
        try:
            return self._index[port_name]
        except KeyError:
            raise PreconditionError(f"{self.name}: 不存在的端口 {port_name}") from None

    def check_stimulus(self, values: Sequence[int]):
        _check_values(self.inputs, values, "激励")

    def check_response(self, values: Sequence[int]):
        _check_values(self.outputs, values, "响应")


def _check_values(ports: Sequence[PortSpec], values: Sequence[int], what: str):
    if len(values) != len(ports):
        raise StructuralError(f"{what}端口数量不符: 期望 {len(ports)}，实际 {len(values)}")
    for port, value in zip(ports, values):
        if not 0 <= value <= port.max_value:
            raise PreconditionError(f"{what} {port.name}={value} 超出 {port.width} 位范围")


@dataclass(frozen=True)
class StimulusVector:
    values: Tuple[int, ...]

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, index):
        return self.values[index]


@dataclass(frozen=True)
class ResponseVector:
    values: Tuple[int, ...]

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, index):
        return self.values[index]


def check(dut_response: ResponseVector, golden_response: ResponseVector) -> TestStatus:
    """比较 DUT 响应与参考模型响应"""
    if len(dut_response) != len(golden_response):
        raise StructuralError(
            f"响应端口数量不符: {len(dut_response)} != {len(golden_response)}"
        )
    if tuple(dut_response) == tuple(golden_response):
        return TestStatus.PASS
    return TestStatus.FAIL


class BaseDut(ABC):
    """DUT 抽象基类"""

    # DUT 类型标识
    DUT_TYPE = "base"

    def __init__(self, width: int):
        self.width = width
        self.spec = self.build_spec()

    @abstractmethod
    def build_spec(self) -> DutSpec:
        """
        构造端口描述
        Returns:
            DutSpec
        """
        pass

    @abstractmethod
    def evaluate(self, stimulus: StimulusVector) -> ResponseVector:
        """
        被测设计本身
        Args:
            stimulus: 输入激励
        Returns:
            DUT 响应
        """
        pass

    def reference(self, stimulus: StimulusVector) -> ResponseVector:
        """参考模型（golden model），默认与设计一致"""
        return self.evaluate(stimulus)

    def run(self, stimulus: StimulusVector) -> Tuple[ResponseVector, TestStatus]:
        """驱动一次事务：求值并与参考模型比对"""
        self.spec.check_stimulus(stimulus.values)
        response = self.evaluate(stimulus)
        return response, check(response, self.reference(stimulus))

    def all_stimuli(self) -> List[StimulusVector]:
        """穷举全部输入组合，只用于小位宽"""
        values = [()]
        for port in self.spec.inputs:
            values = [v + (x,) for v in values for x in range(port.max_value + 1)]
        return [StimulusVector(v) for v in values]
