import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stiefel_opt.estimators import LeadingEigenSubspace, ProjectionRobustWasserstein
from stiefel_opt.linalg import make_rng
from stiefel_opt.problems import lev_generate


class TestLeadingEigenSubspace:
    def make_operator(self, n=30, seed=2):
        return lev_generate(n, 3, seed).A

    def test_fit_attributes_and_gap(self):
        a = self.make_operator()
        est = LeadingEigenSubspace(n_components=3, n_iter=1500, random_state=0).fit(a)
        assert est.subspace_.shape == (30, 3)
        assert est.components_.shape == (3, 30)
        assert abs(est.optimality_gap_) <= 1e-8
        w = np.linalg.eigvalsh(a)
        assert est.eigenvalue_sum_ == pytest.approx(w[-3:].sum(), abs=1e-8)

    def test_transform_projects(self):
        a = self.make_operator()
        est = LeadingEigenSubspace(n_components=2, n_iter=800).fit(a)
        pts = make_rng(5).standard_normal((7, 30))
        out = est.transform(pts)
        assert out.shape == (7, 2)
        np.testing.assert_allclose(out, pts @ est.subspace_, atol=1e-14)

    def test_adam_variant(self):
        a = self.make_operator(seed=4)
        est = LeadingEigenSubspace(
            n_components=2, optimizer="adam", eta=1e-2, n_iter=2500, random_state=1
        ).fit(a)
        assert abs(est.optimality_gap_) <= 1e-5

    def test_sklearn_protocol(self):
        est = LeadingEigenSubspace(n_components=4, eta=0.2)
        params = est.get_params()
        assert params["n_components"] == 4 and params["eta"] == 0.2
        twin = clone(est)
        assert twin.get_params() == params
        est.set_params(eta=0.3)
        assert est.get_params()["eta"] == 0.3

    def test_not_fitted_errors(self):
        est = LeadingEigenSubspace()
        with pytest.raises(NotFittedError):
            est.transform(np.zeros((2, 5)))
        with pytest.raises(NotFittedError):
            est.score(None)

    def test_rejects_asymmetric_input(self):
        with pytest.raises(ValueError):
            LeadingEigenSubspace().fit(np.arange(9.0).reshape(3, 3))

    def test_deterministic_per_random_state(self):
        a = self.make_operator(seed=6)
        x1 = LeadingEigenSubspace(n_iter=100, random_state=3).fit(a).subspace_
        x2 = LeadingEigenSubspace(n_iter=100, random_state=3).fit(a).subspace_
        assert (x1 == x2).all()


class TestProjectionRobustWasserstein:
    def make_clouds(self, seed=0, n=40, d=6):
        rng = make_rng(seed)
        xs = rng.standard_normal((n, d)) + [3, 0, 0, 0, 0, 0]
        ys = rng.standard_normal((n, d)) - [3, 0, 0, 0, 0, 0]
        return xs, ys

    def test_fit_attributes(self):
        xs, ys = self.make_clouds()
        est = ProjectionRobustWasserstein(n_components=2, reg=1.0, eta=1e-2, n_outer=20).fit(xs, ys)
        assert est.projection_.shape == (6, 2)
        assert np.linalg.norm(est.projection_.T @ est.projection_ - np.eye(2)) <= 1e-10
        assert est.value_ > 0
        assert len(est.trace_) == 20

    def test_transform(self):
        xs, ys = self.make_clouds(seed=1)
        est = ProjectionRobustWasserstein(n_components=2, reg=1.0, n_outer=5).fit(xs, ys)
        out = est.transform(xs)
        assert out.shape == (40, 2)
        np.testing.assert_allclose(out, xs @ est.projection_, atol=1e-14)

    def test_weights_validated(self):
        xs, ys = self.make_clouds(seed=2)
        est = ProjectionRobustWasserstein(n_outer=2, reg=1.0)
        with pytest.raises(ValueError):
            est.fit(xs, ys, r=np.full(40, 2.0 / 40))

    def test_clone_and_params(self):
        est = ProjectionRobustWasserstein(n_components=3, reg=0.7)
        twin = clone(est)
        assert twin.get_params()["n_components"] == 3
        assert twin.get_params()["reg"] == 0.7

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            ProjectionRobustWasserstein().transform(np.zeros((2, 6)))
