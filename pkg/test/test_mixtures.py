import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bclim import mixtures
from bclim.mixtures import (
    EMConfig,
    LayerMDP,
    MixtureComponent,
    MixtureTable,
    fit_layers,
    fit_mixture_em,
    gaussian_mdp,
)
from bclim.model import FormatError, MDPSampleSet


def rng(seed=0):
    return np.random.default_rng(seed)


def two_bumps(n=2000, seed=0):
    g = rng(seed)
    left = g.normal([-3.0, 1.0], [0.5, 1.0], size=(int(0.3 * n), 2))
    right = g.normal([2.0, -1.0], [1.0, 0.5], size=(n - len(left), 2))
    return np.vstack([left, right])


class TestComponents:
    def test_weights_sum_to_one(self):
        with pytest.raises(ValueError):
            LayerMDP(1, (MixtureComponent(0.5, (0.0,), (1.0,)),))

    def test_positive_precision(self):
        with pytest.raises(ValueError):
            MixtureComponent(1.0, (0.0, 1.0), (1.0, 0.0))

    def test_ordered(self):
        layer = LayerMDP.ordered(
            1,
            [
                MixtureComponent(0.25, (5.0,), (1.0,)),
                MixtureComponent(0.5, (0.0,), (1.0,)),
                MixtureComponent(0.25, (-5.0,), (1.0,)),
            ],
        )
        assert [c.weight for c in layer.components] == [0.5, 0.25, 0.25]
        assert [c.mean[0] for c in layer.components] == [0.0, -5.0, 5.0]

    def test_gaussian_mdp(self):
        layer = gaussian_mdp(3, [1.0, 2.0], 4.0)
        assert layer.G == 1 and layer.m == 2 and layer.layer_index == 3
        assert layer.components[0].precision == (4.0, 4.0)

    def test_logpdf_gaussian(self):
        layer = gaussian_mdp(1, [1.0, -1.0], [2.0, 0.5])
        c = np.array([0.5, 0.0])
        expected = sum(
            0.5 * math.log(t / (2 * math.pi)) - 0.5 * t * (x - mu) ** 2
            for x, mu, t in zip(c, [1.0, -1.0], [2.0, 0.5])
        )
        assert mixtures.mixture_logpdf(layer, c) == pytest.approx(expected)

    def test_full_covariance_refused(self):
        full = MixtureComponent(1.0, (0.0, 0.0), ((2.0, 0.5), (0.5, 1.0)))
        layer = LayerMDP(1, (full,))
        assert not layer.diagonal
        with pytest.raises(ValueError):
            mixtures.marginal_slices(layer, 0)
        with pytest.raises(ValueError):
            MixtureTable.from_layers([layer])

    def test_full_logpdf(self):
        full = MixtureComponent(1.0, (0.0, 0.0), ((2.0, 0.0), (0.0, 3.0)))
        diag = MixtureComponent(1.0, (0.0, 0.0), (2.0, 3.0))
        c = np.array([0.3, -0.2])
        assert mixtures.mixture_logpdf(LayerMDP(1, (full,)), c) == pytest.approx(
            mixtures.mixture_logpdf(LayerMDP(1, (diag,)), c)
        )


class TestEM:
    @given(st.integers(0, 1000))
    def test_single_component(self, seed):
        X = rng(seed).normal(2.0, 3.0, size=(50, 2))
        layer = fit_mixture_em(X, 1, EMConfig(), rng(seed))
        (comp,) = layer.components
        assert comp.weight == 1.0
        assert np.allclose(comp.mean, X.mean(axis=0))
        assert np.allclose(comp.precision, 1.0 / X.var(axis=0), rtol=1e-6)

    def test_two_bumps(self):
        layer = fit_mixture_em(two_bumps(), 2, EMConfig(restarts=3), rng())
        heavy, light = layer.components
        assert heavy.weight == pytest.approx(0.7, abs=0.03)
        assert np.allclose(heavy.mean, [2.0, -1.0], atol=0.1)
        assert np.allclose(light.mean, [-3.0, 1.0], atol=0.1)
        assert np.allclose(light.precision, [4.0, 1.0], rtol=0.15)

    def test_more_samples_than_components(self):
        with pytest.raises(ValueError):
            fit_mixture_em(np.zeros((15, 1)) + rng().normal(size=(15, 1)), 2, EMConfig(), rng())

    def test_degenerate_falls_back(self):
        # two distinct values cannot support three non-degenerate components
        X = np.repeat([[0.0], [1.0]], 50, axis=0)
        layer = fit_mixture_em(X, 3, EMConfig(restarts=2), rng())
        assert layer.G < 3
        assert math.fsum(c.weight for c in layer.components) == pytest.approx(1.0, abs=1e-12)

    def test_full_covariance(self):
        g = rng(4)
        X = g.multivariate_normal([0.0, 0.0], [[1.0, 0.8], [0.8, 1.0]], size=3000)
        layer = fit_mixture_em(X, 1, EMConfig(covariance="full"), g)
        assert not layer.diagonal
        assert np.allclose(np.linalg.inv(layer.components[0].precision_matrix()), np.cov(X.T, bias=True))

    def test_layers_deterministic(self):
        sample_set = MDPSampleSet((two_bumps(300, 1), two_bumps(300, 2), two_bumps(300, 3)))
        a = fit_layers(sample_set, 2, EMConfig(restarts=2), seed=17)
        b = fit_layers(sample_set, 2, EMConfig(restarts=2), seed=17, threads=2)
        assert a == b
        assert [mdp.layer_index for mdp in a] == [1, 2, 3]


class TestTable:
    def test_padding(self):
        layers = [
            gaussian_mdp(1, [0.0], [1.0]),
            LayerMDP(
                2,
                (MixtureComponent(0.6, (1.0,), (2.0,)), MixtureComponent(0.4, (3.0,), (5.0,))),
            ),
        ]
        table = MixtureTable.from_layers(layers)
        assert (table.n, table.G, table.m) == (2, 2, 1)
        assert list(table.counts) == [1, 2]
        assert table.weights[0, 1] == 0.0
        mu, D = table.layer_arrays(np.array([0, 1]), 0)
        assert list(mu) == [0.0, 3.0]
        assert list(D) == [1.0, 5.0]
        mu[0] = 9.0
        assert table.means[0, 0, 0] == 0.0

    def test_dimensions_agree(self):
        with pytest.raises(ValueError):
            MixtureTable.from_layers([gaussian_mdp(1, [0.0], 1.0), gaussian_mdp(2, [0.0, 1.0], 1.0)])


class TestFiles:
    def test_round_trip(self, tmp_path):
        layers = fit_layers(MDPSampleSet((two_bumps(200, 5), two_bumps(200, 6))), 2, EMConfig(restarts=1), seed=3)
        path = tmp_path / "mix.json"
        with open(path, "w") as fp:
            mixtures.write_mixtures(fp, layers)
        written = json.loads(path.read_text())
        assert isinstance(written, list) and [x["layer"] for x in written] == [1, 2]
        assert mixtures.read_mixtures(path) == layers

    def test_wrapped_layers(self, tmp_path):
        path = tmp_path / "mix.json"
        path.write_text(json.dumps({"meta": {"seed": 3}, "layers": [gaussian_mdp(1, [0.5], 2.0).to_json()]}))
        assert mixtures.read_mixtures(path) == [gaussian_mdp(1, [0.5], 2.0)]

    def test_object_without_layers(self, tmp_path):
        path = tmp_path / "mix.json"
        path.write_text(json.dumps({"meta": {"seed": 3}}))
        with pytest.raises(FormatError) as e:
            mixtures.read_mixtures(path)
        assert e.value.line == 1

    def test_gap_in_layers(self, tmp_path):
        path = tmp_path / "mix.json"
        fp = io.StringIO()
        mixtures.write_mixtures(fp, [gaussian_mdp(1, [0.0], 1.0), gaussian_mdp(3, [0.0], 1.0)])
        path.write_text(fp.getvalue())
        with pytest.raises(FormatError):
            mixtures.read_mixtures(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "mix.json"
        path.write_text("{\n  'layers': oops\n}")
        with pytest.raises(FormatError) as e:
            mixtures.read_mixtures(path)
        assert e.value.line == 2
