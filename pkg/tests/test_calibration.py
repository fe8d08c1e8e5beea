import numpy as np
import pytest

from bsner.calibration import (
    bin_entities, bin_index, bin_outcomes, ece, parse_reliability_csv, reliability_csv,
)
from bsner.corpus import Span
from bsner.decoding import PredictedEntity
from oracles import reference_ece

WORKED_CONFS = [0.95, 0.95, 0.85, 0.55]
WORKED_CORRECT = [True, False, True, True]


def test_bin_edges_are_left_open():
    assert bin_index(0.1, 10) == 1
    assert bin_index(0.1000001, 10) == 2
    assert bin_index(1.0, 10) == 10
    assert bin_index(0.3, 10) == 3          # 0.3 * 10 rounds to 3.0000000000000004
    assert bin_index(0.7, 10) == 7
    assert bin_index(1e-9, 10) == 1
    for bad in (0.0, -0.2, 1.2):
        with pytest.raises(ValueError):
            bin_index(bad, 10)


def test_every_decimal_edge_lands_in_lower_bin():
    for K in (5, 10, 15, 20):
        for k in range(1, K + 1):
            assert bin_index(k / K, K) == k


def test_single_bin_all_correct():
    bins = bin_outcomes([0.3, 0.9], [True, True], K=1)
    assert len(bins) == 1 and bins[0].precision == 1.0 and bins[0].count == 2


def test_worked_example_bins():
    bins = bin_outcomes(WORKED_CONFS, WORKED_CORRECT, 10)
    b = {x.k: x for x in bins}
    assert (b[10].count, b[10].precision, b[10].avg_confidence) == (2, 0.5, 0.95)
    assert (b[9].count, b[9].precision, b[9].avg_confidence) == (1, 1.0, 0.85)
    assert (b[6].count, b[6].precision, b[6].avg_confidence) == (1, 1.0, 0.55)
    assert sum(x.count for x in bins) == 4
    assert all(x.count == 0 and x.precision is None for x in bins if x.k not in (6, 9, 10))


def test_worked_example_ece_value():
    # bin 10 gives 0.5 * 0.45, bin 9 gives 0.25 * 0.15, bin 6 gives 0.25 * 0.45
    value = ece(bin_outcomes(WORKED_CONFS, WORKED_CORRECT, 10))
    assert value == pytest.approx(0.375, abs=1e-12)
    assert value == pytest.approx(reference_ece(WORKED_CONFS, WORKED_CORRECT), abs=1e-12)


def test_ece_examples():
    assert ece(bin_outcomes([0.9] * 10, [True] * 9 + [False], 10)) == pytest.approx(0.0, abs=1e-12)
    assert ece(bin_outcomes([0.9] * 5, [True] * 4 + [False], 1)) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        ece(bin_outcomes([], [], 10))


def test_properties_partition_range_permutation():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 200))
        confs = rng.uniform(1e-6, 1.0, size=n)
        correct = rng.random(n) < confs
        bins = bin_outcomes(confs, correct, 10)
        assert sum(b.count for b in bins) == n
        for b in bins:
            if b.count:
                assert b.lower < b.avg_confidence <= b.upper + 1e-15
                assert 0 <= b.precision <= 1
        value = ece(bins)
        assert 0.0 <= value <= 1.0
        assert value == pytest.approx(reference_ece(list(confs), list(correct)), abs=1e-12)
        perm = rng.permutation(n)
        assert ece(bin_outcomes(confs[perm], correct[perm], 10)) == pytest.approx(value, abs=1e-12)


def test_inflating_confidences_increases_ece():
    confs = np.repeat([0.35, 0.55, 0.75], 20)
    correct = np.concatenate([np.arange(20) < 7, np.arange(20) < 11, np.arange(20) < 15])
    calibrated = ece(bin_outcomes(confs, correct, 10))
    inflated = ece(bin_outcomes(confs + 0.5 * (1 - confs), correct, 10))
    assert inflated > calibrated


def test_bernoulli_generator_is_nearly_calibrated():
    rng = np.random.default_rng(1)
    confs = rng.uniform(0.01, 1.0, size=10_000)
    correct = rng.random(10_000) < confs
    assert ece(bin_outcomes(confs, correct, 10)) <= 0.02


def test_bin_entities_exact_match():
    preds = [
        PredictedEntity(Span(0, 1, "PER"), 0.95, 0),
        PredictedEntity(Span(2, 2, "LOC"), 0.95, 0),
        PredictedEntity(Span(0, 0, "ORG"), 0.85, 1),
        PredictedEntity(Span(1, 3, "PER"), 0.55, 1),
    ]
    gold = {0: {(0, 1, "PER"), (2, 2, "PER")}, 1: {(0, 0, "ORG"), (1, 3, "PER")}}
    assert ece(bin_entities(preds, gold)) == pytest.approx(0.375)


def test_reliability_csv_round_trip():
    bins = bin_outcomes(WORKED_CONFS, WORKED_CORRECT, 10)
    text = reliability_csv(bins)
    lines = text.strip().splitlines()
    assert lines[0] == "bin,lower,upper,count,precision,avg_confidence"
    assert len(lines) == 11
    assert lines[1] == "1,0.0,0.1,0,,"
    assert parse_reliability_csv(text) == bins
