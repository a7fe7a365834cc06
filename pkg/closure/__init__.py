# -*- coding: utf-8 -*-
"""
覆盖率闭环框架
约束随机仿真自动生成训练数据，神经网络学习从覆盖率目标到输入激励的映射，
回归引擎用网络预测填补覆盖空洞和寻找 bug
"""

from closure.errors import (
    ClosureError,
    ConfigError,
    ModelCompletenessError,
    PreconditionError,
    ReportError,
    StructuralError,
)

__all__ = [
    "ClosureError",
    "ConfigError",
    "ModelCompletenessError",
    "PreconditionError",
    "ReportError",
    "StructuralError",
]

__version__ = "1.0.0"

LOG_FORMAT = "[%(asctime)s][%(levelname)s] %(message)s"
LOG_DATEFMT = "%m-%d %H:%M:%S"
