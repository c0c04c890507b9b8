import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liplearn import data as dt
from liplearn.autodiff import make_rng
from liplearn.errors import DomainError, InfeasibleDataError, NumericError


@pytest.fixture
def unit_square():
    return dt.Domain([0.0, 0.0], [1.0, 1.0])


class TestDomain:
    def test_rejects_degenerate(self):
        with pytest.raises(DomainError):
            dt.Domain([0.0, 1.0], [1.0, 1.0])

    def test_rejects_inverted(self):
        with pytest.raises(DomainError):
            dt.Domain([2.0], [1.0])

    def test_contains(self, unit_square):
        mask = unit_square.contains(np.array([[0.5, 0.5], [1.5, 0.5]]))
        assert mask.tolist() == [True, False]


class TestSampling:
    def test_uniform_in_range_and_reproducible(self):
        dom = dt.Domain([0.0], [1.0])
        a = dt.sample_uniform(dom, 4, seed=3)
        b = dt.sample_uniform(dom, 4, seed=3)
        np.testing.assert_array_equal(a, b)
        assert np.all((a >= 0.0) & (a <= 1.0))

    def test_law_of_large_numbers(self):
        dom = dt.Domain([0.0], [1.0])
        pts = dt.sample_uniform(dom, 100_000, seed=5)
        assert abs(pts.mean() - 0.5) < 0.01

    def test_grid_27_points(self):
        dom = dt.Domain([-2.0, -10.0, -2.0], [2.0, 10.0, 2.0])
        assert dt.sample_grid(dom, 3).shape == (27, 3)

    def test_grid_endpoints_1d(self):
        dom = dt.Domain([0.0], [1.0])
        np.testing.assert_array_equal(np.sort(dt.sample_grid(dom, 2).ravel()),
                                      [0.0, 1.0])

    def test_grid_contains_midpoint(self, unit_square):
        pts = dt.sample_grid(unit_square, 3)
        assert any(np.array_equal(p, [0.5, 0.5]) for p in pts)


class TestMakeDataset:
    def test_noise_free_is_exact(self, unit_square):
        pts = dt.sample_uniform(unit_square, 20, seed=0)
        ds = dt.make_dataset(lambda x: x.sum(axis=1, keepdims=True), pts, 0.0, 0,
                             unit_square)
        np.testing.assert_array_equal(ds.outputs, pts.sum(axis=1, keepdims=True))

    def test_noise_bounded(self, unit_square):
        pts = dt.sample_uniform(unit_square, 200, seed=1)
        g = lambda x: np.stack([x[:, 0], x[:, 1] ** 2], axis=1)
        ds = dt.make_dataset(g, pts, 0.1, 7, unit_square)
        err = np.linalg.norm(ds.outputs - g(pts), axis=1)
        assert np.max(err) <= 0.1
        assert np.max(err) > 0.0

    def test_non_finite_generator_names_point(self, unit_square):
        pts = np.array([[0.5, 0.5]])
        bad = lambda x: np.full((x.shape[0], 1), np.inf)
        with pytest.raises(NumericError, match="0.5"):
            dt.make_dataset(bad, pts, 0.0, 0, unit_square)


class TestEmpiricalLipschitz:
    def test_single_pair(self):
        dom = dt.Domain([0.0], [1.0])
        ds = dt.LabeledDataset(dom, [[0.0], [1.0]], [[0.0], [2.0]])
        assert dt.empirical_lipschitz_lower(ds) == pytest.approx(2.0)

    def test_collinear(self):
        dom = dt.Domain([0.0], [2.0])
        ds = dt.LabeledDataset(dom, [[0.0], [1.0], [2.0]], [[0.0], [1.0], [2.0]])
        assert dt.empirical_lipschitz_lower(ds) == pytest.approx(1.0)

    def test_matches_bruteforce(self, unit_square):
        rng = make_rng(4)
        inputs = dt.sample_uniform(unit_square, 60, seed=4)
        outputs = rng.normal(size=(60, 3))
        ds = dt.LabeledDataset(unit_square, inputs, outputs)
        best = 0.0
        for i in range(60):
            for j in range(i + 1, 60):
                d = np.linalg.norm(inputs[i] - inputs[j])
                best = max(best, np.linalg.norm(outputs[i] - outputs[j]) / d)
        assert dt.empirical_lipschitz_lower(ds) == pytest.approx(best, rel=1e-12)

    def test_duplicates_with_distinct_outputs(self, unit_square):
        ds_inputs = [[0.5, 0.5], [0.5, 0.5], [0.2, 0.2]]
        with pytest.raises(InfeasibleDataError):
            dt.empirical_lipschitz_lower(
                dt.LabeledDataset(unit_square, ds_inputs,
                                  [[0.0], [1.0], [0.0]]))

    def test_duplicates_with_equal_outputs_skipped(self, unit_square):
        ds = dt.LabeledDataset(unit_square, [[0.5, 0.5], [0.5, 0.5], [0.0, 0.0]],
                               [[1.0], [1.0], [0.0]])
        expected = 1.0 / np.linalg.norm([0.5, 0.5])
        assert dt.empirical_lipschitz_lower(ds) == pytest.approx(expected)

    def test_lower_bounds_linear_map(self, unit_square):
        w = np.array([[2.0, -1.0], [0.5, 3.0]])
        lip = np.linalg.svd(w, compute_uv=False)[0]
        pts = dt.sample_uniform(unit_square, 120, seed=9)
        ds = dt.make_dataset(lambda x: x @ w.T, pts, 0.0, 0, unit_square)
        assert dt.empirical_lipschitz_lower(ds) <= lip * (1 + 1e-12)

    def test_per_coordinate(self, unit_square):
        pts = dt.sample_uniform(unit_square, 40, seed=2)
        g = lambda x: np.stack([2.0 * x[:, 0], 0.5 * x[:, 1]], axis=1)
        ds = dt.make_dataset(g, pts, 0.0, 0, unit_square)
        per = dt.empirical_lipschitz_lower_per_coordinate(ds)
        assert per.shape == (2,)
        assert per[0] <= 2.0 + 1e-12 and per[1] <= 0.5 + 1e-12
        assert np.max(per) <= dt.empirical_lipschitz_lower(ds) + 1e-12


class TestCoveringRadius:
    def test_center_point_unit_square(self, unit_square):
        h = dt.covering_radius(np.array([[0.5, 0.5]]), unit_square,
                               "exact-grid", resolution=101)
        assert h == pytest.approx(np.sqrt(2) / 2, abs=1e-2)

    def test_half_spacing_on_grid(self):
        dom = dt.Domain([0.0], [1.0])
        pts = dt.sample_grid(dom, 11)
        h = dt.covering_radius(pts, dom, "exact-grid", resolution=2001)
        assert h == pytest.approx(0.05, abs=1e-3)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_monotone_in_point_set(self, seed):
        dom = dt.Domain([0.0, 0.0], [1.0, 1.0])
        pts = dt.sample_uniform(dom, 12, seed=seed)
        extra = dt.sample_uniform(dom, 3, seed=seed + 1)
        h_small = dt.covering_radius(pts, dom, "monte-carlo", 400, seed=7)
        h_big = dt.covering_radius(np.concatenate([pts, extra]), dom,
                                   "monte-carlo", 400, seed=7)
        assert h_big <= h_small + 1e-15

    def test_monotone_in_probe_resolution(self, unit_square):
        pts = dt.sample_uniform(unit_square, 10, seed=1)
        # monte-carlo probes are a prefix stream: more probes, larger max
        h1 = dt.covering_radius(pts, unit_square, "monte-carlo", 200, seed=3)
        h2 = dt.covering_radius(pts, unit_square, "monte-carlo", 800, seed=3)
        assert h2 >= h1
        # nested grids: resolution r -> 2r - 1 keeps all old probes
        g1 = dt.covering_radius(pts, unit_square, "exact-grid", 21)
        g2 = dt.covering_radius(pts, unit_square, "exact-grid", 41)
        assert g2 >= g1

    def test_unknown_mode(self, unit_square):
        with pytest.raises(ValueError):
            dt.covering_radius(np.array([[0.5, 0.5]]), unit_square, "exact")


class TestLosses:
    def test_interpolant_scores_zero(self, unit_square):
        pts = dt.sample_uniform(unit_square, 10, seed=3)
        g = lambda x: x[:, :1] - x[:, 1:]
        ds = dt.make_dataset(g, pts, 0.0, 0, unit_square)
        assert dt.training_loss_sup(ds, g) == 0.0

    def test_zero_model_on_line(self):
        dom = dt.Domain([0.0], [1.0])
        ds = dt.LabeledDataset(dom, [[0.0], [1.0]], [[0.0], [1.0]])
        assert dt.training_loss_sup(ds, lambda x: np.zeros((x.shape[0], 1))) == 1.0

    def test_matches_loop_oracle(self, unit_square):
        rng = make_rng(12)
        pts = dt.sample_uniform(unit_square, 30, seed=12)
        ds = dt.LabeledDataset(unit_square, pts, rng.normal(size=(30, 2)))
        f = lambda x: np.tanh(x)
        best = max(np.linalg.norm(ds.outputs[i] - np.tanh(ds.inputs[i]))
                   for i in range(30))
        assert dt.training_loss_sup(ds, f) == pytest.approx(best, rel=1e-12)

    def test_sup_estimate_zero_for_equal(self, unit_square):
        g = lambda x: x
        est = dt.sup_loss_estimate(g, g, unit_square, probes=100, seed=0)
        assert est.sup == 0.0 and est.mse == 0.0

    def test_sup_estimate_constant_offset(self, unit_square):
        g = lambda x: x
        f = lambda x: x + np.array([0.3, -0.4])
        est = dt.sup_loss_estimate(f, g, unit_square, probes=57, seed=1)
        assert est.sup == pytest.approx(0.5, rel=1e-12)
        assert est.mse == pytest.approx(0.25, rel=1e-12)

    def test_training_sup_below_domain_sup_plus_noise(self, unit_square):
        g = lambda x: np.sin(3.0 * x)
        pts = dt.sample_uniform(unit_square, 50, seed=8)
        eps = 0.05
        ds = dt.make_dataset(g, pts, eps, 11, unit_square)
        f = lambda x: 0.5 * x
        est = dt.sup_loss_estimate(f, g, unit_square, probes=200, seed=2,
                                   include=ds.inputs)
        assert dt.training_loss_sup(ds, f) <= est.sup + eps + 1e-12


class TestCsvRoundTrip:
    def test_round_trip_and_determinism(self, tmp_path, unit_square):
        pts = dt.sample_uniform(unit_square, 15, seed=6)
        ds = dt.make_dataset(lambda x: np.cos(x), pts, 0.2, 3, unit_square)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        ds.to_csv(p1)
        ds.to_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()
        back = dt.LabeledDataset.from_csv(p1, unit_square)
        np.testing.assert_array_equal(back.inputs, ds.inputs)
        np.testing.assert_array_equal(back.outputs, ds.outputs)
        assert back.noise_bound == ds.noise_bound

    def test_header_carries_shape(self, tmp_path, unit_square):
        ds = dt.LabeledDataset(unit_square, [[0.25, 0.5]], [[1.0, 2.0, 3.0]])
        path = tmp_path / "ds.csv"
        ds.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "2,3,0.0"
