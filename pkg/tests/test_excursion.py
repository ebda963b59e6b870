import numpy as np
import pytest

from snakelab.excursion import (DowncrossReport, Excursion, GridPath, count_downcrossings,
                                default_dt, local_time_occupation, polyline,
                                sample_excursion_conditioned, sample_reflecting_bm)


def test_reflecting_bm_nonnegative_and_length():
    p = sample_reflecting_bm(1.0, 1e-3, 0.0, np.random.default_rng(1))
    assert len(p.values) == 1001
    assert p.values.min() >= 0.0
    assert p.values[0] == 0.0


def test_reflecting_bm_terminal_mean():
    rng = np.random.default_rng(2)
    ends = np.array([sample_reflecting_bm(1.0, 1e-2, 0.0, rng).values[-1] for _ in range(10_000)])
    se = ends.std() / np.sqrt(ends.size)
    assert abs(ends.mean() - np.sqrt(2 / np.pi)) < 3 * se


def test_reflecting_bm_raw_increment_variance():
    # the signs are lost after reflection, so redraw the raw increments from the same seeds
    dt, n = 1e-3, 1000
    v = []
    for seed in range(1000):
        v.append(np.random.default_rng(seed).standard_normal(n) * np.sqrt(dt))
    assert abs(np.var(np.concatenate(v)) / dt - 1.0) < 0.05
    # and the sampler uses exactly those increments
    p = sample_reflecting_bm(n * dt, dt, 0.0, np.random.default_rng(0))
    assert np.allclose(p.values, np.abs(np.cumsum(np.r_[0.0, v[0]])))


@pytest.mark.parametrize("kw", [dict(duration=1.0, dt=0.0, r0=0.0),
                                dict(duration=1e-4, dt=1e-3, r0=0.0),
                                dict(duration=1.0, dt=1e-3, r0=-1.0)])
def test_reflecting_bm_rejects_bad_input(kw):
    with pytest.raises(ValueError):
        sample_reflecting_bm(rng=np.random.default_rng(0), **kw)


def test_excursion_invariants_over_seeds():
    h = 0.5
    for seed in range(300):
        exc = sample_excursion_conditioned(h, default_dt(h, 1e-2), np.random.default_rng(seed),
                                           height_cap=3.0)
        v = exc.path.values
        assert v[0] == 0.0 and v[-1] == 0.0
        assert v.min() >= 0.0
        assert exc.max_height >= h
        # the crossing of h happens in the cell that ends at t_hit
        assert exc.cell_hi[exc.t_hit - 1] >= h
        assert np.all(v[:exc.t_hit] < h + 1e-12) or exc.t_hit == 0
        assert np.all(exc.cell_lo <= np.minimum(v[:-1], v[1:]))
        assert np.all(exc.cell_hi >= np.maximum(v[:-1], v[1:]))
        assert exc.cell_hi.max() <= 3.0
        assert np.all(exc.cell_lo[1:-1] > 0.0)
        assert not exc.truncated


def test_excursion_level_ratios():
    h = 0.5
    rng = np.random.default_rng(11)
    n = 10_000
    mx = np.array([sample_excursion_conditioned(h, default_dt(h, 1e-2), rng,
                                                height_cap=2.5).max_height for _ in range(n)])
    for level, target in ((2 * h, 0.5), (4 * h, 0.25)):
        frac = np.mean(mx > level)
        assert abs(frac - target) < 3 * np.sqrt(target * (1 - target) / n)


def test_excursion_truncation_flag():
    exc = sample_excursion_conditioned(0.5, 1e-4, np.random.default_rng(3), max_points=500)
    assert exc.truncated
    assert len(exc.path.values) <= 500


def test_excursion_rejects_bad_input():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sample_excursion_conditioned(0.0, 1e-3, rng)
    with pytest.raises(ValueError):
        sample_excursion_conditioned(0.5, -1.0, rng)
    with pytest.raises(ValueError):
        sample_excursion_conditioned(0.5, 1e-3, rng, height_cap=0.4)


def test_excursion_is_deterministic():
    a = sample_excursion_conditioned(0.5, 1e-3, np.random.default_rng(7))
    b = sample_excursion_conditioned(0.5, 1e-3, np.random.default_rng(7))
    assert np.array_equal(a.path.values, b.path.values)
    assert np.array_equal(a.cell_lo, b.cell_lo)


def test_polyline_contains_cell_extrema_in_order():
    exc = sample_excursion_conditioned(0.5, 1e-3, np.random.default_rng(4), height_cap=2.0)
    t, v = polyline(exc)
    assert np.all(np.diff(t) > 0)
    assert v.max() == pytest.approx(exc.max_height)
    assert v.min() == 0.0
    # every grid point survives in the refined contour
    grid = exc.path.times()
    assert np.isin(np.round(grid, 12), np.round(t, 12)).all()


def test_from_values_polyline_is_the_interpolation():
    exc = Excursion.from_values([0, 2, 0.5, 1.8, 0])
    t, v = polyline(exc)
    assert list(v) == [0, 2, 0.5, 1.8, 0]
    assert list(t) == [0, 1, 2, 3, 4]


def test_occupation_constant_path_outside_band():
    p = GridPath(0.01, np.full(100, 0.3))
    assert local_time_occupation(p, 0.1, 0.1) == 0.0


def test_occupation_unit_ramp():
    dt = 1e-4
    p = GridPath(dt, np.arange(0, 1.0, dt))
    assert local_time_occupation(p, 0.4, 0.05) == pytest.approx(1.0, abs=2 * dt / 0.05)


def test_occupation_rejects_bad_band():
    with pytest.raises(ValueError):
        local_time_occupation(GridPath(0.1, np.zeros(3)), 0.0, 0.0)


def test_downcrossings_monotone_path():
    p = GridPath(0.1, np.linspace(0, 5, 51))
    assert count_downcrossings(p, 0.0, 0.5).count == 0


def test_downcrossings_sawtooth_strict_threshold():
    h = 0.5
    p = GridPath(1.0, np.array([0, 2 * h, 0, h / 2, 0]))
    rep = count_downcrossings(p, 0.0, h)
    assert isinstance(rep, DowncrossReport)
    assert rep.count == 1
    assert list(rep.completion_indices) == [2]
    # touching level + h exactly does not arm an episode
    assert count_downcrossings(GridPath(1.0, np.array([0, h, 0])), 0.0, h).count == 0


def test_downcrossings_refinement_invariance():
    rng = np.random.default_rng(5)
    v = np.abs(np.cumsum(rng.standard_normal(400))) * 0.1
    coarse = GridPath(1.0, v)
    fine = GridPath(0.5, np.interp(np.arange(0, len(v) - 0.5, 0.5), np.arange(len(v)), v))
    for level, h in ((0.2, 0.1), (0.5, 0.3)):
        assert count_downcrossings(coarse, level, h).count == count_downcrossings(fine, level, h).count


def test_downcrossings_rejects_bad_h():
    with pytest.raises(ValueError):
        count_downcrossings(GridPath(1.0, np.zeros(3)), 0.0, 0.0)
