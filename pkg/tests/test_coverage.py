# -*- coding: utf-8 -*-
"""
覆盖率模型：bin 编号、采样、空洞枚举、目标编码
"""
import itertools

import numpy as np
import pytest

from closure.coverage import (
    CoverageDatabase,
    coverage_fraction,
    default_model,
    describe_model,
    encode_target,
    hole_tree,
    model_from_description,
    sample,
    uncovered,
)
from closure.errors import ConfigError, ModelCompletenessError, PreconditionError
from duts import AluDut, ComparatorDut, StimulusVector, comparator_eval


def _apply(db, dut, a, b):
    stimulus = StimulusVector((a, b))
    return sample(db, stimulus, dut.evaluate(stimulus))


def test_cross_bin_index(comparator2, cross_db2):
    assert _apply(cross_db2, comparator2, 2, 1) == [9]
    assert _apply(cross_db2, comparator2, 2, 1) == []
    assert cross_db2.hits[9] == 2


def test_exhaustive_sweep_hits_every_cross_bin_once(comparator2, cross_db2):
    for a, b in itertools.product(range(4), repeat=2):
        assert len(_apply(cross_db2, comparator2, a, b)) == 1
    assert cross_db2.hits == [1] * 16
    assert coverage_fraction(cross_db2) == 1.0
    assert uncovered(cross_db2) == []


def test_coverage_fraction(comparator2, cross_db2):
    assert coverage_fraction(cross_db2) == 0.0
    _apply(cross_db2, comparator2, 2, 1)
    assert coverage_fraction(cross_db2) == 0.0625


def test_uncovered_is_ordered(comparator2, cross_db2):
    assert uncovered(cross_db2) == list(range(16))
    _apply(cross_db2, comparator2, 2, 1)
    assert uncovered(cross_db2) == list(range(9)) + list(range(10, 16))


def test_encode_target(cross_db2):
    vector = encode_target(cross_db2, 9)
    assert vector.tolist() == [0.0] * 9 + [1.0] + [0.0] * 6
    for bin_id in range(16):
        assert int(np.argmax(encode_target(cross_db2, bin_id))) == bin_id
    with pytest.raises(PreconditionError):
        encode_target(cross_db2, 16)


def test_encode_target_three_bins(comparator2):
    model = model_from_description(
        comparator2.spec,
        {"coverpoints": [{"name": "result", "source": "out:result", "bins": [0, 1, 2]}]},
    )
    db = CoverageDatabase(model)
    assert encode_target(db, 0).tolist() == [1.0, 0.0, 0.0]


@pytest.mark.parametrize("width, cross_bins", [(1, 4), (2, 16), (3, 64)])
def test_default_comparator_model(width, cross_bins):
    model = default_model(ComparatorDut(width))
    values = 1 << width
    assert len(model.crosses[0]) == cross_bins
    assert model.total_bins == 2 * values + cross_bins
    assert default_model(ComparatorDut(width), cross_only=True).total_bins == cross_bins


def test_full_model_samples_coverpoints_and_cross(comparator2):
    db = CoverageDatabase(default_model(comparator2))
    # a=2 -> 2，b=1 -> 4 + 1，cross -> 8 + 9
    assert _apply(db, comparator2, 2, 1) == [2, 5, 17]
    assert _apply(db, comparator2, 2, 3) == [7, 19]


def test_default_alu_model():
    model = default_model(AluDut(4))
    assert [cp.name for cp in model.coverpoints] == ["op", "a", "b"]
    assert model.crosses[0].name == "op×a"
    assert model.total_bins == 4 + 16 + 16 + 64


def test_output_coverpoint_and_range_bins(comparator2):
    model = model_from_description(
        comparator2.spec,
        {
            "coverpoints": [
                {"name": "result", "source": "out:result", "bins": [0, 1, 2]},
                {"name": "a", "source": "in:a", "bins": [[0, 1], {"values": [2, 3]}]},
            ],
            "crosses": [["result", "a"]],
        },
    )
    assert model.total_bins == 3 + 2 + 6
    db = CoverageDatabase(model)
    stimulus = StimulusVector((3, 1))
    assert sample(db, stimulus, comparator_eval(3, 1, 2)) == [2, 4, 5 + 2 * 2 + 1]
    assert model.bin_name(4) == "a={2,3}"
    assert model.bin_name(10) == "result×a=(2,{2,3})"


def test_incomplete_model_raises(comparator2):
    model = model_from_description(
        comparator2.spec,
        {"coverpoints": [{"name": "result", "source": "out:result", "bins": [0, 1]}]},
    )
    db = CoverageDatabase(model)
    with pytest.raises(ModelCompletenessError):
        _apply(db, comparator2, 3, 0)


@pytest.mark.parametrize(
    "description",
    [
        {"coverpoints": []},
        {"coverpoints": [{"name": "a", "source": "in:a", "bins": [[0, 2], [2, 3]]}]},
        {"coverpoints": [{"name": "a", "source": "out:a"}]},
        {"coverpoints": [{"name": "a", "source": "in:a"}], "crosses": [["a", "b"]]},
        {"coverpoints": [{"name": "a", "source": "in:a"}], "weights": 1},
        {"coverpoints": [{"name": "a", "source": "in:a"}], "cross_only": True},
    ],
)
def test_bad_descriptions(comparator2, description):
    with pytest.raises(ConfigError):
        model_from_description(comparator2.spec, description)


def test_describe_model_round_trip_keeps_bin_ids(comparator2):
    model = default_model(comparator2)
    reloaded = model_from_description(comparator2.spec, describe_model(model))
    assert reloaded.total_bins == model.total_bins
    assert [reloaded.bin_name(i) for i in range(model.total_bins)] == [
        model.bin_name(i) for i in range(model.total_bins)
    ]


def test_goal_reached_fraction(comparator2, cross_db2):
    for a in range(4):
        for b in range(2):
            _apply(cross_db2, comparator2, a, b)
    assert cross_db2.goal_reached(0.5)
    assert not cross_db2.goal_reached(0.51)
    assert not cross_db2.goal_reached(1.0)


def test_hit_summary(comparator2, cross_db2):
    assert cross_db2.hit_summary()["covered"] == 0
    _apply(cross_db2, comparator2, 0, 0)
    _apply(cross_db2, comparator2, 0, 0)
    _apply(cross_db2, comparator2, 1, 0)
    assert cross_db2.hit_summary() == {"covered": 2, "min": 1, "max": 2, "mean": 1.5}
    assert cross_db2.hit_counts()["0"] == 2


def test_hole_tree(comparator2):
    db = CoverageDatabase(default_model(comparator2))
    for a, b in itertools.product(range(4), repeat=2):
        if (a, b) != (3, 3):
            _apply(db, comparator2, a, b)
    tree = hole_tree(db)
    holes = [node.identifier for node in tree.leaves() if isinstance(node.identifier, int)]
    assert holes == [8 + 15]
    assert "a×b=(3,3)" in str(tree)


def test_cross_members(comparator2, cross_model2):
    members = cross_model2.cross_members(9)
    assert [(cp.name, local) for cp, local in members] == [("a", 2), ("b", 1)]
    full = default_model(comparator2)
    assert [(cp.name, local) for cp, local in full.cross_members(8 + 9)] == [("a", 2), ("b", 1)]
    assert [(cp.name, local) for cp, local in full.cross_members(5)] == [("b", 1)]


def _expected_bins(dut, stimulus):
    """按扁平编号规则直接算出默认模型应命中的 bin"""
    n = 1 << dut.width
    if dut.DUT_TYPE == "comparator":
        a, b = stimulus.values
        return [a, n + b, 2 * n + a * n + b]
    op, a, b = stimulus.values
    return [op, 4 + a, 4 + n + b, 4 + 2 * n + op * n + a]


@pytest.mark.parametrize(
    "dut_class, width",
    [(ComparatorDut, 1), (ComparatorDut, 2), (ComparatorDut, 3), (AluDut, 1), (AluDut, 2), (AluDut, 3)],
)
def test_exhaustive_sweep_matches_recount(dut_class, width):
    """逐步对照：命中计数、未覆盖集合、新命中 bin 与独立重算一致"""
    dut = dut_class(width)
    model = default_model(dut)
    db = CoverageDatabase(model)
    counts = [0] * model.total_bins
    stimuli = dut.all_stimuli()
    closed_at = None
    for step, stimulus in enumerate(stimuli, start=1):
        before = set(uncovered(db))
        newly_hit = sample(db, stimulus, dut.run(stimulus)[0])
        for bin_id in _expected_bins(dut, stimulus):
            counts[bin_id] += 1
        after = set(uncovered(db))
        assert after == {i for i, c in enumerate(counts) if c == 0}
        assert sorted(newly_hit) == sorted(before - after)
        assert (coverage_fraction(db) == 1.0) == (not after)
        if closed_at is None and not after:
            closed_at = step
    assert db.hit_counts() == {str(i): c for i, c in enumerate(counts)}
    assert coverage_fraction(db) == 1.0
    if dut_class is ComparatorDut:
        # (max, max) 是最后一个输入，也是它那个 cross bin 的唯一来源
        assert closed_at == len(stimuli)
