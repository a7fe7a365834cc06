# -*- coding: utf-8 -*-
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from closure.coverage import CoverageDatabase, default_model  # noqa: E402
from duts import AluDut, ComparatorDut, DutFactory  # noqa: E402


@pytest.fixture(autouse=True)
def _clean_factory():
    DutFactory.clear_cache()
    yield
    DutFactory.clear_cache()


@pytest.fixture
def comparator2():
    return ComparatorDut(2)


@pytest.fixture
def cross_model2(comparator2):
    """W=2 比较器，只统计 a×b 的 16 个 bin"""
    return default_model(comparator2, cross_only=True)


@pytest.fixture
def cross_db2(cross_model2):
    return CoverageDatabase(cross_model2)


@pytest.fixture
def alu4():
    return AluDut(4)
