# -*- coding: utf-8 -*-
"""
DUT 工厂类
负责根据名称和位宽创建 DUT 实例
"""
import logging
from typing import Dict, List, Tuple, Type

from closure.errors import ConfigError
from duts.base_dut import BaseDut
from duts.comparator_dut import ComparatorDut
from duts.alu_dut import AluDut

logger = logging.getLogger(__name__)


class DutFactory:
    """DUT 工厂"""

    # DUT 映射表
    DUT_MAP: Dict[str, Type[BaseDut]] = {
        "comparator": ComparatorDut,
        "alu": AluDut,
    }

    # 实例缓存: (dut_type, width, options) -> dut_instance
    # DUT 都是纯函数模型，可以在多个回归之间共享
    _instance_cache: Dict[Tuple, BaseDut] = {}

    @classmethod
    def register_dut(cls, dut_type: str, dut_class: Type[BaseDut]):
        """
        注册新的 DUT
        Args:
            dut_type: DUT 类型标识
            dut_class: DUT 类
        """
        cls.DUT_MAP[dut_type] = dut_class
        cls.clear_cache()

    @classmethod
    def create_dut(cls, dut_type: str, width: int, **options) -> BaseDut:
        """
        创建或获取缓存的 DUT 实例
        Args:
            dut_type: DUT 类型（comparator, alu）
            width: 数据位宽
            options: 传给 DUT 构造函数的额外参数，例如 inject_bug
        Returns:
            DUT 实例
        """
        dut_class = cls.DUT_MAP.get(dut_type)
        if not dut_class:
            raise ConfigError(
                f"未知的 DUT 类型: {dut_type}，可选: {', '.join(cls.get_supported_types())}"
            )
        if not isinstance(width, int) or width < 1:
            raise ConfigError(f"位宽必须为正整数: {width}")

        cache_key = (dut_type, width, tuple(sorted(options.items())))
        cached = cls._instance_cache.get(cache_key)
        if cached is not None:
            return cached

        try:
            dut = dut_class(width, **options)
        except TypeError as e:
            raise ConfigError(f"创建 DUT {dut_type} 失败: {e}") from e
        logger.debug(f"创建 DUT {dut_type} W={width} {options or ''}")
        cls._instance_cache[cache_key] = dut
        return dut

    @classmethod
    def clear_cache(cls):
        """清空实例缓存"""
        cls._instance_cache.clear()

    @classmethod
    def get_supported_types(cls) -> List[str]:
        """获取支持的 DUT 类型列表"""
        return list(cls.DUT_MAP.keys())
