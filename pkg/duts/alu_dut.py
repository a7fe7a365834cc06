# -*- coding: utf-8 -*-
"""
ALU DUT
带注入缺陷的 ALU：SUB 且 a == b 时返回 1 而不是 0
参考模型为 golden_alu_eval，用于失败导向测试
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

ADD = 0
SUB = 1
AND = 2
OR = 3

OPCODES = {"ADD": ADD, "SUB": SUB, "AND": AND, "OR": OR}


def _check_operands(op: int, a: int, b: int, width: int):
    if op not in (ADD, SUB, AND, OR):
        raise PreconditionError(f"非法操作码: {op}")
    limit = 1 << width
    if not (0 <= a < limit and 0 <= b < limit):
        raise PreconditionError(f"ALU 操作数越界: a={a}, b={b}, W={width}")


def golden_alu_eval(op: int, a: int, b: int, width: int) -> int:
    """参考模型"""
    _check_operands(op, a, b, width)
    mask = (1 << width) - 1
    if op == ADD:
        return (a + b) & mask
    if op == SUB:
        return (a - b) & mask
    if op == AND:
        return a & b
    return a | b


def buggy_alu_eval(op: int, a: int, b: int, width: int) -> int:
    """被测设计，只在 SUB 且 a == b 时与参考模型不同"""
    result = golden_alu_eval(op, a, b, width)
    if op == SUB and a == b:
        return 1
    return result


class AluDut(BaseDut):

    DUT_TYPE = "alu"

    def __init__(self, width: int, inject_bug: bool = True):
        self.inject_bug = inject_bug
        super().__init__(width)

    def build_spec(self) -> DutSpec:
        return DutSpec(
            name=self.DUT_TYPE,
            inputs=(
                PortSpec("op", 2, Direction.IN),
                PortSpec("a", self.width, Direction.IN),
                PortSpec("b", self.width, Direction.IN),
            ),
            outputs=(PortSpec("result", self.width, Direction.OUT),),
        )

    def evaluate(self, stimulus: StimulusVector) -> ResponseVector:
        op, a, b = stimulus.values
        if self.inject_bug:
            return ResponseVector((buggy_alu_eval(op, a, b, self.width),))
        return ResponseVector((golden_alu_eval(op, a, b, self.width),))

    def reference(self, stimulus: StimulusVector) -> ResponseVector:
        op, a, b = stimulus.values
        return ResponseVector((golden_alu_eval(op, a, b, self.width),))
