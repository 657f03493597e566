import pytest

from src import seeding
from src.stats import affine_fit, mean_ci, proportion_trend, wilson_interval


def test_wilson_interval_brackets_the_proportion():
    lo, hi = wilson_interval(95, 100)
    assert lo < 0.95 < hi
    assert 0.0 <= lo and hi <= 1.0
    assert wilson_interval(0, 0) == (0.0, 0.0)


def test_wilson_interval_narrows_with_sample_size():
    assert wilson_interval(990, 1000)[0] > wilson_interval(99, 100)[0]
    assert wilson_interval(10, 10)[0] < 1.0


def test_mean_ci():
    assert mean_ci([]) == (0.0, 0.0, 0.0)
    assert mean_ci([0.7]) == (0.7, 0.7, 0.7)
    mean, lo, hi = mean_ci([0.0, 1.0, 1.0, 1.0])
    assert mean == pytest.approx(0.75)
    assert lo < mean < hi


def test_affine_fit_exact_line():
    slope, intercept, r2 = affine_fit([1, 2, 3, 4], [12, 22, 32, 42])
    assert slope == pytest.approx(10.0)
    assert intercept == pytest.approx(2.0)
    assert r2 == pytest.approx(1.0)
    with pytest.raises(ValueError):
        affine_fit([1], [1])


def test_proportion_trend_detects_only_real_slopes():
    flat = proportion_trend([0.5, 1.0, 1.5, 2.0], [9960, 9958, 9961, 9959], [10000] * 4)
    assert not flat[2]
    falling = proportion_trend([0.5, 1.0, 1.5, 2.0], [9990, 9700, 9400, 9100], [10000] * 4)
    assert falling[0] < 0
    assert falling[2]


def test_seed_streams_are_independent_and_repeatable():
    a = seeding.node_rng(1, 3).random()
    assert seeding.node_rng(1, 3).random() == a
    assert seeding.node_rng(1, 4).random() != a
    assert seeding.medium_rng(1).random() != seeding.medium_rng(2).random()
    assert seeding.replicate_seed(7, 0) == 7
    assert seeding.replicate_seed(7, 1) != seeding.replicate_seed(7, 2)


def test_sweep_seeds_are_distinct_per_point_and_stable():
    seeds = [seeding.sweep_seed(7, i) for i in range(4)]
    assert len(set(seeds)) == 4
    assert 7 not in seeds
    assert seeds == [seeding.sweep_seed(7, i) for i in range(4)]
    assert seeding.sweep_seed(7, 1) != seeding.replicate_seed(7, 1)
