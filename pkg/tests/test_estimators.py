import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gtdsaddle.estimators import GradientTD
from gtdsaddle.sampling import draw_dataset
from gtdsaddle.solvers import SolverConfig, constant, run


def draw(bundle, n, seed=0):
    return draw_dataset(bundle.mdp, bundle.behavior, bundle.target, bundle.xi, n, seed)


class TestParams:
    def test_get_set_params_and_clone(self, chain_bundle):
        est = GradientTD(chain_bundle.basis, variant="gtd2-mp", alpha=0.01)
        params = est.get_params()
        assert params["variant"] == "gtd2-mp" and params["alpha"] == 0.01
        est.set_params(alpha=0.02)
        assert est.alpha == 0.02
        twin = clone(est)
        assert twin.get_params()["alpha"] == 0.02 and twin is not est

    def test_unfitted_predict(self, chain_bundle):
        with pytest.raises(NotFittedError):
            GradientTD(chain_bundle.basis).predict(np.zeros((1, 5)))


class TestFit:
    def test_matches_solver(self, chain_bundle):
        data = draw(chain_bundle, 500)
        est = GradientTD(chain_bundle.basis, gamma=0.9, variant="gtd2", alpha=0.003).fit(data)
        _, tb, yb = run(SolverConfig("gtd2", constant(0.003), 500), data, chain_bundle.basis, gamma=0.9)
        np.testing.assert_array_equal(est.coef_, tb)
        np.testing.assert_array_equal(est.dual_coef_, yb)
        assert est.n_iter_ == 500 and est.n_features_in_ == 5 and est.step_size_ == 0.003

    def test_accepts_array_input(self, chain_bundle):
        data = draw(chain_bundle, 200)
        a = GradientTD(chain_bundle.basis.table, alpha=0.003).fit(data)
        b = GradientTD(chain_bundle.basis.table, alpha=0.003).fit(data.to_array())
        np.testing.assert_array_equal(a.coef_, b.coef_)

    def test_predict_and_value_function(self, chain_bundle):
        est = GradientTD(chain_bundle.basis, alpha=0.003).fit(draw(chain_bundle, 200))
        np.testing.assert_allclose(est.value_function(), est.predict(chain_bundle.basis.table))
        with pytest.raises(ValueError):
            est.predict(np.zeros((2, 3)))

    def test_learns_chain_values(self, chain_bundle):
        from gtdsaddle.bounds import projection_residual
        from gtdsaddle.features import weighted_norm
        from gtdsaddle.mdp import exact_value
        V = exact_value(chain_bundle.mdp, chain_bundle.target)
        est = GradientTD(chain_bundle.basis, alpha=0.003).fit(draw(chain_bundle, 40_000, 2))
        err0 = weighted_norm(V, chain_bundle.xi)
        err = weighted_norm(V - est.value_function(), chain_bundle.xi)
        assert err < 0.5 * err0
        assert err >= projection_residual(chain_bundle) - 1e-9

    def test_robust_step(self, chain_bundle):
        est = GradientTD(chain_bundle.basis, variant="gtd2-proj", step="robust", c=1.0, m_star=10.0,
                         radius_theta=50.0, radius_y=50.0).fit(draw(chain_bundle, 125))
        assert est.step_size_ == pytest.approx(2.0 / (10.0 * np.sqrt(5 * 125)))

    @pytest.mark.parametrize("kw", [dict(variant="td0"), dict(step="adaptive"), dict(gamma=1.0),
                                    dict(features=None)])
    def test_invalid_parameters(self, chain_bundle, kw):
        params = dict(features=chain_bundle.basis)
        params.update(kw)
        with pytest.raises(ValueError):
            GradientTD(**params).fit(draw(chain_bundle, 10))

    def test_state_ids_out_of_range(self, chain_bundle):
        with pytest.raises(ValueError):
            GradientTD(np.eye(3)).fit(draw(chain_bundle, 50))

    def test_n_iter_limits_updates(self, chain_bundle):
        est = GradientTD(chain_bundle.basis, n_iter=20).fit(draw(chain_bundle, 100))
        assert est.n_iter_ == 20
