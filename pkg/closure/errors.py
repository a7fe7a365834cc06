# -*- coding: utf-8 -*-
"""
异常定义
库代码只抛出异常，由命令行入口统一转换为退出码
"""


class ClosureError(Exception):
    """框架内所有异常的基类"""


class PreconditionError(ClosureError, ValueError):
    """调用前置条件不满足：操作数越界、非法操作码、维度不匹配等"""


class StructuralError(ClosureError, ValueError):
    """响应结构不一致，例如端口数量不同"""


class ModelCompletenessError(ClosureError):
    """采样值没有落入任何 bin，说明覆盖率模型不完整"""


class ConfigError(ClosureError, ValueError):
    """配置非法或包含未知字段"""


class ReportError(ClosureError):
    """报告文件无法读取或格式不符"""
