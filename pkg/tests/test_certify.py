import math

import numpy as np
import pytest

from ratecert import certify, sdpcore
from ratecert.baselines import admm_optimal_point, analytic_rate
from ratecert.certify import (Certificate, CertificationError, LyapunovKind, assemble_program,
                              certify_rate, certify_sublinear, verify_certificate)
from ratecert.model import (INF, AlgorithmModel, AlgorithmSpec, Family, build_algorithm,
                            default_beta, sector, slope, smooth, standard_oracles)
from ratecert.supply import STAR

TOL = 1e-5


def gd(eta, cls):
    return build_algorithm(AlgorithmSpec(Family.GD, eta=eta)).with_oracles([cls])


def nesterov(m, L, cls):
    spec = AlgorithmSpec(Family.NESTEROV, eta=1 / L, beta=default_beta(m, L))
    return build_algorithm(spec).with_oracles([cls])


def admm(m, L, eta, form=Family.ADMM_GRAD):
    return build_algorithm(AlgorithmSpec(form, eta=eta)).with_oracles(
        list(standard_oracles(form, "sector", m, L, eta)))


# -- program assembly ------------------------------------------------------------

def test_gradient_descent_lmi_matches_closed_form():
    m, L, eta, rho = 1.0, 10.0, 0.15, 0.9
    prog = assemble_program(gd(eta, sector(m, L)), 0, rho)
    lam = 0.37
    x = np.array([1.0, lam])  # P = 1
    expected = np.array([[1 - rho**2 - lam * m * L, -eta + lam * (L + m) / 2],
                         [-eta + lam * (L + m) / 2, eta**2 - lam]])
    np.testing.assert_allclose(-prog.blocks[0].at(x), expected, atol=1e-14)
    assert prog.kind is LyapunovKind.QUADRATIC


def test_nesterov_smooth_equalities_in_multiplier_order():
    prog = assemble_program(nesterov(0.1, 1.0, smooth(0.1, 1.0)), 1, 0.8)
    labels = [q.label for q in prog.rates]
    # multipliers 1..6 couple (k+1,k), (k,k+1), (k,*), (*,k), (k+1,*), (*,k+1)
    order = ["(k+1,k)", "(k,k+1)", "(k,*)", "(*,k)", "(k+1,*)", "(*,k+1)"]
    idx = [labels.index(f"smooth[0]{o}") for o in order]
    n_p, n_l = prog.n_p, len(prog.rates)
    lam_rows = prog.eq_matrix[:, n_p: n_p + n_l][:, idx]
    mu_rows = prog.eq_matrix[:, n_p + n_l:][:, idx]
    expected = {
        (1, -1, -1, 1, 0, 0): None, (-1, 1, 0, 0, -1, 1): None,
    }
    found_lam = {tuple(np.round(r).astype(int)): b for r, b in zip(lam_rows, prog.eq_rhs) if np.any(r)}
    found_mu = {tuple(np.round(r).astype(int)): b for r, b in zip(mu_rows, prog.eq_rhs) if np.any(r)}
    assert set(found_lam) == set(expected) == set(found_mu)
    assert found_lam[(1, -1, -1, 1, 0, 0)] == pytest.approx(0.64)
    assert found_lam[(-1, 1, 0, 0, -1, 1)] == -1
    assert found_mu[(1, -1, -1, 1, 0, 0)] == 1
    assert found_mu[(-1, 1, 0, 0, -1, 1)] == 0
    assert prog.kind is LyapunovKind.QUADRATIC_PLUS_GAP
    assert [b.name for b in prog.blocks] == ["dissipation", "positivity"]


def test_smooth_class_needs_window_of_one():
    with pytest.raises(ValueError):
        assemble_program(nesterov(0.1, 1.0, smooth(0.1, 1.0)), 0, 0.9)


def test_assemble_rejects_negative_rate_and_missing_classes():
    with pytest.raises(ValueError):
        assemble_program(gd(0.1, sector(1, 10)), 0, -0.1)
    with pytest.raises(ValueError):
        assemble_program(build_algorithm(AlgorithmSpec(Family.GD, eta=0.1)), 0, 0.5)


# -- bisection -------------------------------------------------------------------

def test_gradient_descent_optimal_stepsize():
    res = certify_rate(gd(2 / 11, sector(1, 10)), 0, tol=TOL)
    assert res.found
    assert res.rho == pytest.approx(9 / 11, abs=TOL)
    assert res.rho >= 9 / 11 - 1e-9  # the returned end of the bracket is feasible


def test_zero_stepsize_gives_rate_one():
    # eta = 0 is rejected by the builder, so write the identity map by hand
    model = AlgorithmModel([[1.0]], [[0.0]], [[1.0]], [[0.0]], (sector(1, 10),))
    res = certify_rate(model, 0, tol=TOL)
    assert res.rho == pytest.approx(1.0, abs=TOL)


def test_admm_at_optimal_stepsize():
    res = certify_rate(admm(1.0, 100.0, 0.1), 0, tol=TOL)
    assert res.rho == pytest.approx(10 / 11, abs=TOL)


def test_nesterov_smooth_beats_estimate_sequence():
    res = certify_rate(nesterov(0.01, 1.0, smooth(0.01, 1.0)), 1, tol=TOL)
    assert res.found and res.rho < 1
    assert res.rho < math.sqrt(1 - math.sqrt(0.01))
    assert res.certificate.kind is LyapunovKind.QUADRATIC_PLUS_GAP


def test_no_certificate_below_true_rate():
    # Polyak rate |1 - 5| = 4 for eta = 0.5, L = 10
    res = certify_rate(gd(0.5, sector(1, 10)), 0)
    assert not res.found and res.rho is None
    assert [p.status for p in res.probes] == ["infeasible"]
    assert "rho_max" in res.reason


def test_probe_history_is_monotone():
    res = certify_rate(nesterov(0.1, 1.0, slope(0.1, 1.0)), 1, tol=1e-4)
    feas = [p.rho for p in res.probes if p.status == "solution"]
    infeas = [p.rho for p in res.probes if p.status != "solution"]
    assert min(feas) > max(infeas)
    assert len(res.probes) <= certify.MAX_PROBES + 1


def test_nonmonotone_feasibility_aborts(monkeypatch):
    real = certify._solve_at

    def flaky(model, r, rho, rescale):
        if 1.2 < rho < 1.25:  # hit only by the confirmation probe
            return "infeasible", None, -1.0, "forced"
        return real(model, r, rho, rescale)

    monkeypatch.setattr(certify, "_solve_at", flaky)
    with pytest.raises(CertificationError) as exc:
        certify_rate(gd(0.05, sector(1, 10)), 0)
    assert exc.value.probes


def test_solver_breakdown_is_reported_with_probes(monkeypatch):
    calls = {"n": 0}
    real = sdpcore.solve_feasibility

    def broken(prob, *a, **k):
        calls["n"] += 1
        if calls["n"] > 2:
            raise np.linalg.LinAlgError("synthetic breakdown")
        return real(prob, *a, **k)

    monkeypatch.setattr(sdpcore, "solve_feasibility", broken)
    with pytest.raises(CertificationError) as exc:
        certify_rate(gd(0.1, sector(1, 10)), 0)
    assert len(exc.value.probes) == 2


def test_bad_arguments():
    with pytest.raises(ValueError):
        certify_rate(gd(0.1, sector(1, 10)), 0, tol=0)
    with pytest.raises(ValueError):
        certify_rate(gd(0.1, sector(1, 10)), 0, rho_max=-1)


@pytest.mark.parametrize("c", [0.1, 10.0])
@pytest.mark.parametrize("case", ["gd", "nesterov-c", "nesterov-f", "admm"])
def test_scaling_invariance(case, c):
    tol = 1e-4
    m, L = 0.1, 1.0

    def build(m, L, eta):
        if case == "gd":
            return gd(eta, sector(m, L)), 0
        if case == "admm":
            return admm(m, L, eta), 0
        spec = AlgorithmSpec(Family.NESTEROV, eta=eta, beta=default_beta(m, L))
        cls = sector(m, L) if case == "nesterov-c" else smooth(m, L)
        return build_algorithm(spec).with_oracles([cls]), (0 if case == "nesterov-c" else 1)

    base = certify_rate(*build(m, L, 1.0 / L), tol=tol)
    scaled = certify_rate(*build(c * m, c * L, 1.0 / (c * L)), tol=tol)
    assert abs(base.rho - scaled.rho) <= 2 * tol


@pytest.mark.parametrize("eta_l", [0.05, 1.0, 10.0])
def test_admm_forms_certify_equal_rates(eta_l):
    m, L = 1.0, 10.0
    a = certify_rate(admm(m, L, eta_l / L, Family.ADMM_GRAD), 0, tol=TOL)
    b = certify_rate(admm(m, L, eta_l / L, Family.ADMM_PROX), 0, tol=TOL)
    assert abs(a.rho - b.rho) <= 2 * TOL


def test_unscaled_solve_agrees():
    a = certify_rate(gd(0.05, sector(1, 10)), 0, tol=TOL, rescale=False)
    b = certify_rate(gd(0.05, sector(1, 10)), 0, tol=TOL)
    assert a.rho == pytest.approx(b.rho, abs=2 * TOL)


# -- verification ------------------------------------------------------------------

def test_certificates_pass_independent_verification():
    for model, r in [(gd(0.1, sector(1, 10)), 0), (nesterov(0.05, 1, smooth(0.05, 1)), 1),
                     (admm(1, 30, 0.05), 0), (nesterov(0.3, 1, slope(0.3, 1)), 1)]:
        res = certify_rate(model, r, tol=1e-4)
        rep = verify_certificate(model, res.certificate, samples=500)
        assert rep.ok, rep.summary()
        assert min(rep.slacks.values()) >= -1e-9
        assert all(v >= -1e-9 for v in res.certificate.margins.values())
        if res.certificate.kind is LyapunovKind.QUADRATIC:
            assert np.linalg.eigvalsh(res.certificate.P)[0] >= 1 - 1e-9


def _certificate(model, rho, P, lambdas, r=0):
    from ratecert.supply import enumerate_supply_rates, lift
    rates = enumerate_supply_rates(model.oracle_classes, lift(model, r))
    return Certificate(rho, np.atleast_2d(P), np.asarray(lambdas, dtype=float), np.zeros(0), {}, r,
                       LyapunovKind.QUADRATIC, [q.label for q in rates], model.oracle_classes)


def test_zero_storage_certificate_is_rejected():
    model = gd(0.1, sector(1, 10))
    rep = verify_certificate(model, _certificate(model, 1.0, [[0.0]], [0.0]))
    assert not rep.ok
    assert rep.normalization_slack == pytest.approx(-1.0)


def test_admm_analytic_certificate():
    for L in (10.0, 100.0, 1000.0):
        opt = admm_optimal_point(1.0, L)
        model = admm(1.0, L, opt.eta)
        # the analytic P has P >= I scale only up to a factor; check the LMI itself
        cert = _certificate(model, opt.rho, opt.P, [opt.lambda1, opt.lambda2])
        rep = verify_certificate(model, cert, samples=200)
        assert rep.slacks["dissipation"] >= -1e-8 * max(1.0, np.max(np.abs(opt.P)))
        assert rep.sampled_violation <= 1e-8


def test_violated_certificate_is_caught_by_sampling():
    model = gd(0.1, sector(1, 10))
    cert = _certificate(model, 0.5, [[1.0]], [0.0])  # true rate is 0.9
    rep = verify_certificate(model, cert, samples=200)
    assert rep.sampled_violation > 0
    assert not rep.ok


def test_mismatched_certificate_raises():
    cert = _certificate(gd(0.1, sector(1, 10)), 0.9, [[1.0]], [0.1])
    with pytest.raises(ValueError):
        verify_certificate(gd(0.1, slope(1, 10)), cert)


def test_certificate_json():
    res = certify_rate(gd(0.1, sector(1, 10)), 0, tol=1e-3)
    js = res.to_json()
    assert js["certificate"]["lambdas"].keys() == {"sector[0](k,*)"}
    assert js["rho"] == res.rho


# -- sublinear -----------------------------------------------------------------------

def test_sublinear_candidate_by_hand():
    # V = (L/2) x^2 with multiplier 1 on the (k, *) rate is exactly tight for eta = 1/L
    model = gd(1.0, smooth(0.0, 1.0))
    prog = certify._build_program(model, 0, 1.0, np.array([-1.0]), positivity=True,
                                  normalization="none", mu_target=np.zeros(1))
    labels = [q.label for q in prog.rates]
    x = np.zeros(prog.dim)
    x[0] = 0.5
    x[prog.n_p + labels.index("smooth[0](k,*)")] = 1.0
    assert prog.problem().check(x)
    np.testing.assert_allclose(prog.blocks[0].at(x), 0.0, atol=1e-15)


def test_sublinear_gradient_descent():
    cert = certify_sublinear(gd(1.0, smooth(0.0, 1.0)))
    assert cert is not None
    assert cert.P[0, 0] == pytest.approx(0.5, abs=1e-6)
    assert cert.bound(np.array([[2.0]]), 3) == pytest.approx(0.5 * 4 / 4, rel=1e-5)


def test_sublinear_rejects_divergent_stepsize():
    assert certify_sublinear(gd(3.0, smooth(0.0, 1.0))) is None


def test_sublinear_requires_plain_convexity():
    with pytest.raises(ValueError):
        certify_sublinear(gd(1.0, smooth(0.5, 1.0)))
    with pytest.raises(ValueError):
        certify_sublinear(gd(1.0, sector(0.0, 1.0)))
