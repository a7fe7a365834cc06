# -*- coding: utf-8 -*-
"""
DUT 模型模块
事务级参考设计的统一接口
"""

from duts.base_dut import (
    BaseDut,
    Direction,
    DutSpec,
    PortSpec,
    ResponseVector,
    StimulusVector,
    TestStatus,
    check,
)
from duts.comparator_dut import ComparatorDut, comparator_eval
from duts.alu_dut import AluDut, buggy_alu_eval, golden_alu_eval
from duts.dut_factory import DutFactory

__all__ = [
    "BaseDut",
    "Direction",
    "DutSpec",
    "PortSpec",
    "ResponseVector",
    "StimulusVector",
    "TestStatus",
    "check",
    "ComparatorDut",
    "comparator_eval",
    "AluDut",
    "buggy_alu_eval",
    "golden_alu_eval",
    "DutFactory",
]
