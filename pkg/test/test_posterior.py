import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from bclim import dists, posterior
from bclim.mixtures import LayerMDP, MixtureComponent, MixtureTable, gaussian_mdp
from bclim.model import ChainRecord, ChronologySet
from bclim.posterior import GridSpec


def rng(seed=0):
    return np.random.default_rng(seed)


def record(n, m=1, iteration=0, v=1.0, k=None):
    return ChainRecord(
        iteration,
        0,
        np.full((n - 1, m), v),
        np.zeros(n, dtype=int) if k is None else np.asarray(k),
        np.ones(m),
        np.full(m, 2.0),
    )


def test_grid():
    grid = GridSpec()
    points = grid.points()
    assert grid.cells == 140
    assert len(points) == 141
    assert points[0] == 0.0 and points[-1] == pytest.approx(14.0)
    with pytest.raises(ValueError):
        GridSpec(1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        GridSpec(0.0, 1.0, 0.0)


class TestBridges:
    @given(
        st.floats(1e-3, 1e3),
        st.floats(1e-2, 10.0),
        st.floats(1e-2, 10.0),
        st.integers(0, 2**32 - 1),
    )
    def test_split_adds_up(self, v, d1, d2, seed):
        v1, v2 = posterior.ig_bridge_split(v, d1, d2, 1.3, 2.0, rng(seed))
        assert v1 > 0 and v2 > 0
        assert v1 + v2 == pytest.approx(v, rel=1e-12)

    def test_split_invalid(self):
        with pytest.raises(ValueError):
            posterior.ig_bridge_split(0.0, 1.0, 1.0, 1.0, 1.0, rng())

    def test_symmetric_split(self):
        g = rng(1)
        fractions = np.array([posterior.ig_bridge_split(2.0, 0.5, 0.5, 1.0, 3.0, g)[0] / 2.0 for _ in range(20_000)])
        assert fractions.mean() == pytest.approx(0.5, abs=0.01)

    @pytest.mark.slow
    def test_split_matches_joint_law(self):
        # splitting an IG2 draw must reproduce the law of its first piece
        eta, phi, d1, d2 = 1.0, 2.0, 0.3, 0.7
        g = rng(2)
        bridged = []
        for _ in range(20_000):
            v = dists.ig2_sample(g, dists.IG2Params(eta, phi).over(d1 + d2))
            bridged.append(posterior.ig_bridge_split(v, d1, d2, eta, phi, g)[0])
        direct = [dists.ig2_sample(g, dists.IG2Params(eta, phi).over(d1)) for _ in range(20_000)]
        assert stats.ks_2samp(bridged, direct).pvalue > 0.01

    def test_brownian_bridge(self):
        g = rng(3)
        draws = np.array([posterior.brownian_bridge_point(0.0, 3.0, 1.0, 2.0, g) for _ in range(20_000)])
        assert draws.mean() == pytest.approx(1.0, abs=0.03)
        assert draws.var() == pytest.approx(2.0 / 3.0, rel=0.05)

    def test_increments_conserve_mass(self):
        times = np.array([0.0, 1.0, 2.5, 4.0])
        v = np.array([1.0, 2.0, 0.5])
        knots, pieces = posterior.bridge_increments(times, v, np.arange(0.0, 5.0, 0.5), 1.0, 2.0, rng(4))
        assert list(knots) == [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]
        assert pieces.sum() == pytest.approx(3.5)
        assert pieces[:2].sum() == pytest.approx(1.0)
        assert pieces[2:5].sum() == pytest.approx(2.0)

    def test_brownian_split_is_proportional(self):
        times = np.array([0.0, 1.0, 2.5, 4.0])
        v = 1.5 * np.diff(times)
        bounds = np.arange(0.0, 5.0, 0.5)
        knots, pieces = posterior.bridge_increments(times, v, bounds, 1.5, 2.0, rng(4), "brownian")
        assert np.allclose(pieces, 1.5 * np.diff(knots))
        _, again = posterior.bridge_increments(times, v, bounds, 1.5, 2.0, rng(9), "brownian")
        assert np.array_equal(pieces, again)

    def test_unknown_evolution(self):
        with pytest.raises(ValueError):
            posterior.bridge_increments(np.array([0.0, 1.0]), np.array([1.0]), np.array([0.5]), 1.0, 2.0, rng(), "levy")

    def test_refinement(self):
        # bridging onto a grid, then onto a finer one, keeps coarse cell masses
        times = np.array([0.0, 1.0, 2.0])
        v = np.array([1.0, 1.5])
        coarse = posterior.cell_volatility(times, v, np.array([0.0, 0.5, 1.0, 1.5, 2.0]), 1.0, 2.0, rng(5))
        fine = posterior.cell_volatility(times, v, np.arange(0.0, 2.01, 0.25), 1.0, 2.0, rng(5))
        assert np.nansum(coarse**2) == pytest.approx(np.nansum(fine**2))
        assert coarse[0] ** 2 + coarse[1] ** 2 == pytest.approx((fine[:4] ** 2).sum())


class TestInterpolation:
    def test_pinned_at_layers(self):
        times = np.array([1.0, 2.0, 3.0])
        c = np.array([0.5, -1.0, 2.0])
        points = np.arange(0.0, 4.01, 0.5)
        c_grid, vol = posterior.interpolate_path(times, c, np.array([1.0, 1.0]), points, 1.0, 2.0, rng(6))
        assert c_grid[2] == 0.5 and c_grid[4] == -1.0 and c_grid[6] == 2.0
        assert np.all(np.isnan(c_grid[:2])) and np.all(np.isnan(c_grid[7:]))
        assert np.all(np.isfinite(c_grid[2:7]))
        assert np.all(np.isnan(vol[:2])) and np.all(np.isnan(vol[6:]))
        assert np.nansum(vol**2) == pytest.approx(2.0)

    def test_brownian_cells(self):
        times = np.array([1.0, 2.0, 3.0])
        c = np.array([0.5, -1.0, 2.0])
        points = np.arange(0.0, 4.01, 0.5)
        c_grid, vol = posterior.interpolate_path(
            times, c, np.array([1.0, 1.0]), points, 1.0, 2.0, rng(6), "brownian"
        )
        assert np.allclose(vol[2:6], np.sqrt(0.5))
        assert np.all(np.isnan(vol[:2])) and np.all(np.isnan(vol[6:]))
        assert c_grid[2] == 0.5 and np.isfinite(c_grid[3])

    def test_bridge_mean(self):
        times = np.array([0.0, 1.0])
        points = np.array([0.0, 0.5, 1.0])
        g = rng(7)
        mids = [
            posterior.interpolate_path(times, np.array([0.0, 2.0]), np.array([1.0]), points, 1.0, 2.0, g)[0][1]
            for _ in range(5000)
        ]
        assert np.mean(mids) == pytest.approx(1.0, abs=0.05)

    def test_precise_mdp(self):
        # with very precise layers the climate draws sit on the layer means
        means = [0.0, 1.0, -1.0, 2.0]
        table = MixtureTable.from_layers([gaussian_mdp(i + 1, [mu], 1e10) for i, mu in enumerate(means)])
        draw = posterior.draw_climate(record(4), table, rng(8))
        assert np.allclose(draw.c[:, 0], means, atol=1e-3)

    def test_selects_components(self):
        layer = LayerMDP(
            1, (MixtureComponent(0.5, (-5.0,), (1e10,)), MixtureComponent(0.5, (5.0,), (1e10,)))
        )
        table = MixtureTable.from_layers([layer, gaussian_mdp(2, [0.0], 1e10)])
        draw = posterior.draw_climate(record(2, k=[1, 0]), table, rng(9))
        assert draw.c[0, 0] == pytest.approx(5.0, abs=1e-3)

    def test_dimension_mismatch(self):
        table = MixtureTable.from_layers([gaussian_mdp(i, [0.0], 1.0) for i in (1, 2, 3)])
        with pytest.raises(ValueError):
            posterior.draw_climate(record(4), table, rng())

    def test_interpolate(self):
        n, m = 8, 2
        table = MixtureTable.from_layers([gaussian_mdp(i + 1, [float(i), -float(i)], 4.0) for i in range(n)])
        chronologies = ChronologySet(np.array([np.linspace(1.0, 13.0, n), np.linspace(0.5, 12.0, n)]))
        records = [record(n, m, iteration=it) for it in (3, 7, 11)]
        records[1] = ChainRecord(7, 1, records[1].v, records[1].k, records[1].eta, records[1].phi)
        draws = posterior.draw_climates(records, table, seed=5)
        result = posterior.interpolate(draws, chronologies, GridSpec(), seed=5)
        assert result.c.shape == (3, 141, m)
        assert list(result.iterations) == [3, 7, 11]

        frame = result.frame()
        assert list(frame.columns) == ["grid_ka", "dim", "iter", "c", "vol"]
        assert len(frame) == 3 * 141 * m
        assert frame.groupby(["iter", "dim"]).size().eq(141).all()
        # the first chronology starts at 1 ka
        early = frame[(frame["iter"] == 3) & (frame["grid_ka"] < 0.95)]
        assert early["c"].isna().all()

        again = posterior.interpolate(
            posterior.draw_climates(records, table, seed=5), chronologies, GridSpec(), seed=5, threads=2
        )
        assert np.array_equal(result.c, again.c, equal_nan=True)
        assert np.array_equal(result.vol, again.vol, equal_nan=True)

        summary = posterior.summarize(result)
        assert list(summary.columns) == [
            "grid_ka", "dim", "c_mean", "c_lo95", "c_hi95", "vol_lo95", "vol_hi95", "n_present"
        ]
        assert len(summary) == 141 * m
        assert summary["n_present"].max() == 3
        assert summary[summary["grid_ka"] > 13.5]["n_present"].eq(0).all()

    def test_grid_outside(self):
        table = MixtureTable.from_layers([gaussian_mdp(i, [0.0], 1.0) for i in (1, 2)])
        chronologies = ChronologySet(np.array([[20.0, 21.0]]))
        draws = posterior.draw_climates([record(2)], table, seed=1)
        with pytest.raises(ValueError):
            posterior.interpolate(draws, chronologies, GridSpec(), seed=1)
