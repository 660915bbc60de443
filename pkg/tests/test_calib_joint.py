import numpy as np
import pytest

from hjmcal.engine import calib_joint, lsc
from hjmcal.engine.cone import svec
from hjmcal.errors import ExtractionDegenerate, SolverStall
from hjmcal.models import DeliveryWindow, LscModel, RollingSpec, VsTarget

SPECS = [RollingSpec(ts_days=a, te_days=b) for a, b in
         [(0, 30), (30, 60), (60, 90), (90, 180), (180, 365), (365, 730)]]
TAU_D = 1.0 / 252.0


def _targets(model: LscModel) -> list[VsTarget]:
    out = []
    for start, end, maturity in [(0.25, 0.5, 0.2), (0.5, 0.75, 0.4), (1.0, 2.0, 0.8)]:
        var = lsc.model_vs_variance(model, start, end, maturity)
        out.append(VsTarget(contract_id=f"C{start}", window=DeliveryWindow(start=start, end=end),
                            maturity=maturity, variance=var))
    return out


def _problem(model: LscModel, lam: float = 0.5) -> calib_joint.Step1Problem:
    c_mkt = calib_joint.model_covariance_matrix(model, SPECS, TAU_D)
    return calib_joint.Step1Problem(
        c_mkt=c_mkt, gamma=np.ones_like(c_mkt), specs=SPECS, vs_targets=_targets(model), lam=lam,
        n_slope=model.n_slope, n_curvature=model.n_curvature, tau_d=TAU_D,
    )


def _inconsistent_problem(template: calib_joint.Step1Problem, x: np.ndarray, tau_slope) -> calib_joint.Step1Problem:
    """Targets generated by a factor matrix that is not PSD, so the unconstrained fit is infeasible."""
    w = calib_joint.build_weights(tau_slope, [], template)
    c_mkt = np.einsum("ijpk,pk->ij", w.cov, x)
    vs = np.einsum("lpk,pk->l", w.vs, x)
    targets = [t.model_copy(update={"variance": float(v)}) for t, v in zip(template.vs_targets, vs)]
    return calib_joint.Step1Problem(
        c_mkt=c_mkt, gamma=template.gamma, specs=template.specs, vs_targets=targets, lam=template.lam,
        n_slope=len(tau_slope), n_curvature=0, tau_d=template.tau_d,
    )


def _grid_minimum(weights: calib_joint.Step1Weights, problem: calib_joint.Step1Problem,
                  rounds: int = 4, points: int = 201) -> float:
    """Brute-force minimum over 2x2 PSD matrices [[a, c], [c, b]] inside the variance box.

    For fixed (a, b) the loss is a convex quadratic in c, so c is solved exactly and clipped to |c| <= sqrt(ab).
    """
    p = len(problem.specs)
    cov = weights.cov.reshape(p * p, 2, 2)
    coef = np.concatenate([cov, weights.vs])
    target = np.concatenate([problem.c_mkt.ravel(), [t.variance for t in problem.vs_targets]])
    scale = np.concatenate([problem.lam * problem.gamma.ravel(), (1.0 - problem.lam) * problem.vs_weights])
    alpha, beta, gam = coef[:, 0, 0], coef[:, 1, 1], coef[:, 0, 1]
    a_hi = min(float(problem.variance_upper()[0]), 1.0)
    lo, hi = np.array([0.0, 0.0]), np.array([a_hi, 2.0])
    best = np.inf
    for _ in range(rounds):
        ga, gb = np.meshgrid(np.linspace(lo[0], hi[0], points), np.linspace(lo[1], hi[1], points), indexing="ij")
        a, b = ga.ravel()[:, None], gb.ravel()[:, None]
        rest = target - alpha * a - beta * b
        c = np.sum(scale * gam * rest, axis=1) / (2.0 * np.sum(scale * gam ** 2))
        bound = np.sqrt(a[:, 0] * b[:, 0])
        c = np.clip(c, -bound, bound)[:, None]
        loss = np.sum(scale * (rest - 2.0 * gam * c) ** 2, axis=1)
        k = int(np.argmin(loss))
        best = min(best, float(loss[k]))
        centre = np.array([a[k, 0], b[k, 0]])
        step = (hi - lo) / (points - 1)
        lo = np.maximum(centre - 8 * step, [0.0, 0.0])
        hi = np.minimum(centre + 8 * step, [a_hi, 2.0])
    return best


class TestProblem:
    def test_lambda_range(self, level_model):
        with pytest.raises(ValueError):
            _problem(level_model, lam=1.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            calib_joint.Step1Problem(c_mkt=np.eye(2), gamma=np.eye(2), specs=SPECS, vs_targets=[])

    def test_level_bound(self, full_model):
        p = _problem(full_model)
        upper = p.variance_upper()
        assert upper[0] == pytest.approx(9.0 * p.c_mkt[-1, -1])
        assert np.all(np.isinf(upper[1:]))

    def test_underparametrization(self, full_model):
        lhs, rhs, ok = calib_joint.underparametrization_check(_problem(full_model))
        assert (lhs, rhs, ok) == (8, 3 + 21, True)


class TestTimeScaleMap:
    def test_increasing_and_positive(self):
        ts, tc = calib_joint.tau_from_a(np.array([-2.0, -1.0, 0.5]), 2, 1)
        assert np.all(ts > 0) and np.all(np.diff(ts) > 0)
        assert tc[0] == pytest.approx(np.exp(0.5))

    def test_inverse(self):
        a = calib_joint.a_from_tau([0.1, 0.5], [0.3])
        ts, tc = calib_joint.tau_from_a(a, 2, 1)
        np.testing.assert_allclose(ts, [0.1, 0.5])
        np.testing.assert_allclose(tc, [0.3])

    def test_initial_point(self, full_model, rng):
        a = calib_joint.init_tau(_problem(full_model), rng)
        ts, tc = calib_joint.tau_from_a(a, 1, 1)
        assert ts.size == 1 and tc.size == 1
        assert ts[0] > 0 and tc[0] > 0


class TestInnerProblem:
    def test_recovers_factor_covariance(self, full_model):
        problem = _problem(full_model)
        res = calib_joint.solve_inner(full_model.tau_slope, full_model.tau_curvature, problem)
        np.testing.assert_allclose(res.x, lsc.factor_covariance(full_model), rtol=1e-6, atol=1e-9)
        assert res.loss == pytest.approx(0.0, abs=1e-12)
        assert res.iterations == 0

    def test_infeasible_least_squares_goes_through_admm(self, slope_model):
        bad = np.array([[0.04, 0.3], [0.3, 0.64]])
        problem = _inconsistent_problem(_problem(slope_model), bad, [0.25])
        res = calib_joint.solve_inner([0.25], [], problem)
        assert res.iterations > 0
        assert np.linalg.eigvalsh(res.x).min() >= -1e-8
        assert res.x[0, 1] ** 2 <= res.x[0, 0] * res.x[1, 1] + 1e-8

    def test_cone_solve_matches_grid_minimum(self, slope_model):
        bad = np.array([[0.04, 0.3], [0.3, 0.64]])
        problem = _inconsistent_problem(_problem(slope_model), bad, [0.25])
        res = calib_joint.solve_inner([0.25], [], problem)
        oracle = _grid_minimum(calib_joint.build_weights([0.25], [], problem), problem)
        assert res.loss == pytest.approx(oracle, abs=1e-4)
        assert res.loss <= oracle + 1e-8

    def test_weights_reproduce_model_values(self, full_model):
        problem = _problem(full_model)
        w = calib_joint.build_weights(full_model.tau_slope, full_model.tau_curvature, problem)
        j1, j2 = calib_joint.loss_components(lsc.factor_covariance(full_model), w, problem)
        assert j1 == pytest.approx(0.0, abs=1e-16)
        assert j2 == pytest.approx(0.0, abs=1e-16)

    def test_extraction(self, full_model):
        x = lsc.factor_covariance(full_model)
        model = calib_joint.extract_parameters(x, full_model.tau_slope, full_model.tau_curvature)
        np.testing.assert_allclose(model.sigma, full_model.sigma)
        np.testing.assert_allclose(model.corr, full_model.corr, atol=1e-12)

    def test_extraction_degenerate(self):
        with pytest.raises(ExtractionDegenerate):
            calib_joint.extract_parameters(np.diag([0.04, 0.0]), [0.1], [])


class TestAdmm:
    def test_projects_onto_psd(self):
        m = svec(np.array([[1.0, 2.0], [2.0, 1.0]]))
        res = calib_joint.AdmmSolver().solve(np.eye(3), m, np.full(2, np.inf))
        np.testing.assert_allclose(res.x, [[1.5, 1.5], [1.5, 1.5]], atol=1e-6)
        assert res.iterations > 0

    def test_respects_variance_box(self):
        m = svec(np.array([[4.0, 1.0], [1.0, 1.0]]))
        res = calib_joint.AdmmSolver().solve(np.eye(3), m, np.array([1.0, np.inf]))
        assert res.x[0, 0] <= 1.0 + 1e-6
        assert np.linalg.eigvalsh(res.x).min() >= -1e-8

    def test_feasible_least_squares_short_circuits(self):
        target = np.array([[1.0, 0.2], [0.2, 0.5]])
        res = calib_joint.AdmmSolver().solve(np.eye(3), svec(target), np.full(2, np.inf))
        assert res.iterations == 0
        np.testing.assert_allclose(res.x, target, atol=1e-14)

    def test_stall(self):
        m = svec(np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(SolverStall) as err:
            calib_joint.AdmmSolver(max_iterations=1).solve(np.eye(3), m, np.full(2, np.inf))
        assert "loss" in err.value.payload

    def test_stall_reports_feasible_iterate(self):
        a = np.eye(3)
        m = svec(np.array([[4.0, 3.0], [3.0, 1.0]]))
        upper = np.array([1.0, np.inf])
        with pytest.raises(SolverStall) as err:
            calib_joint.AdmmSolver(max_iterations=1).solve(a, m, upper)
        best = err.value.payload["best"]
        assert best[0, 0] <= 1.0 + 1e-12
        assert np.linalg.eigvalsh(best).min() >= -1e-12
        assert err.value.payload["loss"] == pytest.approx(float(np.sum((a @ svec(best) - m) ** 2)), rel=1e-12)
        assert err.value.payload["iterations"] == 1

    def test_factory(self):
        assert isinstance(calib_joint.create_inner_solver("admm"), calib_joint.AdmmSolver)
        with pytest.raises(ValueError):
            calib_joint.create_inner_solver("interior-point")


class TestConeProgram:
    def test_truth_is_feasible_and_optimal(self, full_model):
        problem = _problem(full_model)
        ts, tc = full_model.tau_slope, full_model.tau_curvature
        prog = calib_joint.build_cone_program(ts, tc, problem)
        assert prog.dims()["s"] == [3]
        point = calib_joint.cone_point(lsc.factor_covariance(full_model), ts, tc, problem)
        cert = prog.certificate(point)
        assert cert["equality_residual"] == pytest.approx(0.0, abs=1e-14)
        assert cert["cone_distance"] == pytest.approx(0.0, abs=1e-9)
        assert cert["objective"] == pytest.approx(0.0, abs=1e-7)

    def test_state_level_ties_curvature_pair(self, full_model):
        basis = lsc.StateBasis.from_model(full_model)
        xs = calib_joint.state_level(lsc.factor_covariance(full_model), basis)
        c1, c2 = basis.curvature_pairs[0]
        np.testing.assert_allclose(xs[c1], xs[c2])


class TestOuterSearch:
    def test_level_only(self, level_model):
        problem = _problem(level_model)
        res = calib_joint.calibrate_step1(problem, restarts=5, seed=1)
        assert res.restarts == 1
        assert res.model.sigma_level == pytest.approx(0.3, rel=1e-8)
        assert res.loss == pytest.approx(0.0, abs=1e-14)
        assert res.summary()["model"] == "1L0S0C"

    def test_stalled_inner_solver_keeps_best_iterate(self, level_model):
        class Stalling(calib_joint.InnerSolver):
            name = "stalling"

            def solve(self, a, m, upper, warm_start=None):
                raise SolverStall("no progress", payload={"best": np.array([[0.09]]), "loss": 0.0, "iterations": 7})

        res = calib_joint.calibrate_step1(_problem(level_model), restarts=1, solver=Stalling())
        assert res.model.sigma_level == pytest.approx(0.3, rel=1e-12)
        assert res.loss == pytest.approx(0.0, abs=1e-14)

    def test_stall_on_unreachable_targets_is_degenerate_not_a_crash(self, level_model):
        base = _problem(level_model, lam=1.0)
        problem = calib_joint.Step1Problem(
            c_mkt=-base.c_mkt, gamma=base.gamma, specs=SPECS, vs_targets=base.vs_targets, lam=1.0,
            n_slope=0, n_curvature=0, tau_d=TAU_D,
        )
        with pytest.raises(ExtractionDegenerate):
            calib_joint.calibrate_step1(problem, restarts=1, solver=calib_joint.AdmmSolver(max_iterations=1))

    def test_lambda_trades_covariance_against_vs_fit(self, slope_model):
        base = _problem(slope_model)
        fits = []
        for lam in [0.0, 0.2, 0.5, 0.8, 1.0]:
            problem = calib_joint.Step1Problem(
                c_mkt=base.c_mkt, gamma=base.gamma, specs=SPECS, vs_targets=base.vs_targets, lam=lam,
                n_slope=0, n_curvature=0, tau_d=TAU_D,
            )
            res = calib_joint.calibrate_step1(problem, restarts=1)
            fits.append((res.j1, res.j2))
        j1, j2 = np.array(fits).T
        assert np.all(np.diff(j1) <= 1e-12 * j1.max())
        assert np.all(np.diff(j2) >= -1e-12 * j2.max())
        assert j1[0] > j1[-1] and j2[-1] > j2[0]

    @pytest.mark.slow
    def test_recovers_slope_time_scale(self, slope_model):
        problem = _problem(slope_model)
        res = calib_joint.calibrate_step1(problem, restarts=3, seed=3, workers=2)
        assert res.model.tau_slope[0] == pytest.approx(0.25, rel=1e-3)
        assert res.model.sigma_slope[0] == pytest.approx(0.8, rel=1e-3)
        assert res.history == sorted(res.history)

    @pytest.mark.slow
    def test_recovers_two_slope_factors(self):
        truth = LscModel(
            sigma_level=0.2, sigma_slope=[0.9, 0.45], tau_slope=[0.08, 0.5],
            correlation=[[1.0, 0.3, 0.1], [0.3, 1.0, 0.5], [0.1, 0.5, 1.0]],
        )
        res = calib_joint.calibrate_step1(_problem(truth), restarts=6, seed=11, workers=2)
        np.testing.assert_allclose(res.model.sigma, truth.sigma, rtol=0.02)
        np.testing.assert_allclose(res.model.tau_slope, truth.tau_slope, rtol=0.05)
        np.testing.assert_allclose(res.model.corr, truth.corr, atol=0.02)

    @pytest.mark.slow
    def test_factor_count_scan(self, slope_model):
        scan = calib_joint.factor_count_scan(_problem(slope_model), max_slope=1, max_curvature=0, restarts=2)
        assert list(scan["model"]) == ["1L0S0C", "1L1S0C"]
        assert scan["loss"].iloc[1] < scan["loss"].iloc[0]


class TestReports:
    def test_covariance_report(self, full_model):
        problem = _problem(full_model)
        frame = calib_joint.covariance_report(full_model, problem)
        assert list(frame.columns) == ["contract", "market_vol", "model_vol", "market_corr_front", "model_corr_front"]
        np.testing.assert_allclose(frame["market_vol"], frame["model_vol"], rtol=1e-10)
        assert frame["model_corr_front"].iloc[0] == pytest.approx(1.0)

    def test_vs_report(self, full_model):
        frame = calib_joint.vs_report(full_model, _targets(full_model))
        np.testing.assert_allclose(frame["relative_error"], 0.0, atol=1e-12)
