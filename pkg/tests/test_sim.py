import io
import math

import numpy as np
import pytest

from ratecert.certify import certify_rate, certify_sublinear
from ratecert.model import (AlgorithmSpec, Family, build_algorithm, default_beta, sector, slope,
                            smooth)
from ratecert.sim import (DivergenceError, LyapunovViolation, TestFunction, evaluate,
                          lyapunov_trace, run_trajectory, write_trace_csv)

M, L = 0.01, 1.0
X0 = [1.0, 0.5]


def nesterov_spec(m=M, L=L):
    return AlgorithmSpec(Family.NESTEROV, eta=1 / L, beta=default_beta(m, L))


@pytest.fixture(scope="module")
def certs():
    spec = nesterov_spec()
    nes = build_algorithm(spec)
    gd_spec = AlgorithmSpec(Family.GD, eta=2 / (L + M))
    gd = build_algorithm(gd_spec)
    return {
        "nesterov-F": (spec, certify_rate(nes.with_oracles([smooth(M, L)]), 1, tol=1e-6).certificate),
        "nesterov-M": (spec, certify_rate(nes.with_oracles([slope(M, L)]), 1, tol=1e-6).certificate),
        "gd-C": (gd_spec, certify_rate(gd.with_oracles([sector(M, L)]), 0, tol=1e-6).certificate),
    }


# -- test functions ------------------------------------------------------------------

def test_f2_examples():
    fn = TestFunction("f2", M, L)
    v, g = evaluate(fn, [1.0, 0.5])
    assert v == pytest.approx(0.50125, abs=1e-15)
    np.testing.assert_allclose(g, [1.0, 0.005], atol=1e-15)
    v, g = evaluate(fn, [0.0, 0.0])
    assert v == 0 and not np.any(g)


def test_f1_gradient_at_origin():
    fn = TestFunction("f1", M, L)
    _, g = evaluate(fn, [0.0, 0.0])
    np.testing.assert_allclose(g, [-(L - M) / 9, 0.0], atol=1e-15)


def test_f1_no_overflow():
    fn = TestFunction("f1", M, L)
    v, g = evaluate(fn, [800.0, -900.0])
    assert math.isfinite(v) and np.all(np.isfinite(g))


@pytest.mark.parametrize("fid", ["f1", "f2"])
def test_gradient_matches_finite_differences(fid, rng):
    fn = TestFunction(fid, M, L)
    h = 1e-6
    worst = 0.0
    for x in rng.uniform(-3, 3, (1000, 2)):
        _, g = fn.value_grad(x)
        fd = np.array([(fn.value_grad(x + h * e)[0] - fn.value_grad(x - h * e)[0]) / (2 * h)
                       for e in np.eye(2)])
        worst = max(worst, np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1.0))
    assert worst <= 1e-6


@pytest.mark.parametrize("fid", ["f1", "f2"])
def test_hessian_eigenvalues_within_bounds(fid, rng):
    fn = TestFunction(fid, M, L)
    h = 1e-6
    for x in rng.uniform(-3, 3, (1000, 2)):
        H = np.column_stack([(fn.value_grad(x + h * e)[1] - fn.value_grad(x - h * e)[1]) / (2 * h)
                             for e in np.eye(2)])
        ev = np.linalg.eigvalsh(0.5 * (H + H.T))
        assert ev[0] >= M - 1e-6 and ev[-1] <= L + 1e-6
        ev = np.linalg.eigvalsh(fn.hessian(x))
        assert ev[0] >= M - 1e-8 and ev[-1] <= L + 1e-8


def test_f1_minimizer():
    for m in (0.0, 0.01, 0.5):
        fn = TestFunction("f1", m, L)
        assert np.linalg.norm(fn.value_grad(fn.minimizer)[1]) <= 1e-14
    # with m = 0 the minimizer is explicit: equal weights on the three exponentials
    np.testing.assert_allclose(TestFunction("f1", 0.0, 1.0).minimizer,
                               [0.75 * math.log(1.5), 0.0], atol=1e-14)


def test_gap_is_accurate_near_minimizer():
    fn = TestFunction("f1", M, L)
    xs = fn.minimizer
    for eps in (1e-3, 1e-6):
        d = np.array([eps, -eps])
        ref = 0.5 * d @ fn.hessian(xs) @ d
        assert fn.gap(xs + d) == pytest.approx(ref, rel=10 * eps)
    assert fn.gap(xs) == 0.0


def test_bad_functions():
    with pytest.raises(ValueError):
        TestFunction("f3", M, L)
    with pytest.raises(ValueError):
        TestFunction("f1", 1.0, 1.0)
    with pytest.raises(ValueError):
        evaluate(TestFunction("f1", M, L), [np.nan, 0.0])


# -- trajectories ----------------------------------------------------------------------

def test_gd_on_quadratic_contracts_exactly():
    eta = 2 / (L + M)
    traj = run_trajectory(TestFunction("f2", M, L), AlgorithmSpec(Family.GD, eta=eta), X0, 50)
    q = (L - M) / (L + M)
    ratios = np.abs(traj.xs[1:] / traj.xs[:-1])
    np.testing.assert_allclose(ratios, q, rtol=1e-12)
    assert len(traj.xs) == len(traj.dist_sq) == len(traj.gaps) == 51


def test_nesterov_on_f1_is_not_monotone():
    traj = run_trajectory(TestFunction("f1", M, L), nesterov_spec(), X0, 200)
    assert np.any(np.diff(traj.dist_sq) > 0)
    assert np.any(np.diff(traj.gaps) > 0)
    assert np.all(np.isfinite(traj.xs))


def test_nesterov_is_slower_on_f2():
    t1 = run_trajectory(TestFunction("f1", M, L), nesterov_spec(), X0, 200)
    t2 = run_trajectory(TestFunction("f2", M, L), nesterov_spec(), X0, 200)
    for k in (50, 100):
        assert t2.dist_sq[k] > 1e3 * t1.dist_sq[k]


def test_divergence_is_reported():
    with pytest.raises(DivergenceError) as exc:
        run_trajectory(TestFunction("f2", M, L), AlgorithmSpec(Family.GD, eta=3.0), X0, 500)
    assert exc.value.step > 1


def test_trajectory_arguments():
    fn = TestFunction("f2", M, L)
    with pytest.raises(ValueError):
        run_trajectory(fn, AlgorithmSpec(Family.GD, eta=1.0), X0, 0)
    with pytest.raises(ValueError):
        run_trajectory(fn, AlgorithmSpec(Family.ADMM_GRAD, eta=1.0), X0, 5)


# -- Lyapunov traces ---------------------------------------------------------------------

def test_f1_lyapunov_is_monotone(certs):
    spec, cert = certs["nesterov-F"]
    traj = run_trajectory(TestFunction("f1", M, L), spec, X0, 200)
    trace = lyapunov_trace(traj, cert)
    assert trace.monotone and trace.checked >= 20
    assert trace.max_ratio <= cert.rho ** 2 + 1e-9
    # the observed decay is faster than certified
    assert trace.max_ratio < cert.rho ** 2 - 0.05


def test_f2_lyapunov_ratio_is_nearly_tight(certs):
    spec, cert = certs["nesterov-F"]
    traj = run_trajectory(TestFunction("f2", M, L), spec, X0, 200)
    trace = lyapunov_trace(traj, cert)
    assert cert.rho ** 2 - 1e-2 <= trace.max_ratio <= cert.rho ** 2 + 1e-9


@pytest.mark.parametrize("name", ["nesterov-F", "nesterov-M", "gd-C"])
@pytest.mark.parametrize("fid", ["f1", "f2"])
def test_certified_envelope(certs, name, fid):
    spec, cert = certs[name]
    traj = run_trajectory(TestFunction(fid, M, L), spec, X0, 200)
    trace = lyapunov_trace(traj, cert)
    k = np.arange(len(trace.values))
    env = trace.values[0] * cert.rho ** (2 * k)
    assert np.all(trace.values <= env * (1 + 1e-9) + 1e-13 * trace.values[0])


def test_violation_raises(certs):
    spec, cert = certs["nesterov-F"]
    traj = run_trajectory(TestFunction("f2", M, L), spec, X0, 50)
    cert.rho, saved = 0.5, cert.rho
    try:
        with pytest.raises(LyapunovViolation):
            lyapunov_trace(traj, cert)
        assert not lyapunov_trace(traj, cert, strict=False).monotone
    finally:
        cert.rho = saved


def test_window_past_end_is_an_error(certs):
    spec, cert = certs["nesterov-F"]
    traj = run_trajectory(TestFunction("f1", M, L), spec, X0, 1)
    with pytest.raises(ValueError):
        lyapunov_trace(traj, cert)
    _, gcert = certs["gd-C"]
    with pytest.raises(ValueError):
        lyapunov_trace(run_trajectory(TestFunction("f1", M, L), spec, X0, 5), gcert)


def test_sublinear_bound_on_f1():
    fn = TestFunction("f1", 0.0, 1.0)
    cert = certify_sublinear(build_algorithm(AlgorithmSpec(Family.GD, eta=1.0))
                             .with_oracles([smooth(0.0, 1.0)]))
    traj = run_trajectory(fn, AlgorithmSpec(Family.GD, eta=1.0), X0, 500)
    window = (traj.xs[0] - fn.minimizer)[None, :]
    for k in range(501):
        assert traj.gaps[k] <= cert.bound(window, k) * (1 + 1e-9)


def test_trace_csv(certs):
    spec, cert = certs["nesterov-F"]
    traj = run_trajectory(TestFunction("f1", M, L), spec, X0, 10)
    trace = lyapunov_trace(traj, cert)
    buf = io.StringIO()
    write_trace_csv(buf, traj, trace)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "k,dist_sq,gap,lyapunov,ratio"
    assert len(lines) == 12
    row = lines[2].split(",")
    assert float(row[4]) == pytest.approx(trace.ratios[0], rel=1e-15)
    assert lines[-1].endswith(",,")  # the last window is incomplete
