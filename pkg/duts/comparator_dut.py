# -*- coding: utf-8 -*-
"""
比较器 DUT
两个 W 位无符号输入 a、b，一个 2 位输出 result：LT=0，EQ=1，GT=2
"""
from closure.errors import PreconditionError
from duts.base_dut import (
    BaseDut,
    Direction,
    DutSpec,
    PortSpec,
    ResponseVector,
    StimulusVector,
)

LT = 0
EQ = 1
GT = 2


def comparator_eval(a: int, b: int, width: int) -> ResponseVector:
    """组合逻辑比较器"""
    limit = 1 << width
    if not (0 <= a < limit and 0 <= b < limit):
        raise PreconditionError(f"比较器操作数越界: a={a}, b={b}, W={width}")
    if a > b:
        return ResponseVector((GT,))
    if a == b:
        return ResponseVector((EQ,))
    return ResponseVector((LT,))


class ComparatorDut(BaseDut):

    DUT_TYPE = "comparator"

    def build_spec(self) -> DutSpec:
        return DutSpec(
            name=self.DUT_TYPE,
            inputs=(
                PortSpec("a", self.width, Direction.IN),
                PortSpec("b", self.width, Direction.IN),
            ),
            outputs=(PortSpec("result", 2, Direction.OUT),),
        )

    def evaluate(self, stimulus: StimulusVector) -> ResponseVector:
        a, b = stimulus.values
        return comparator_eval(a, b, self.width)
