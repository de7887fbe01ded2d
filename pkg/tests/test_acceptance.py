"""Acceptance criteria 1-7, each at its stated tolerance and runtime budget.

Run alone with ``pytest tests/test_acceptance.py -v``; one PASS/FAIL line per
criterion is printed in the terminal summary.
"""

import filecmp
import time

import numpy as np
import pytest

from salbc.certificates import lipschitz_constants, true_hdot, true_vdot
from salbc.confidence import ConfidenceConfig, estimate, info_gain
from salbc.experiment import build_setup, run_experiment, run_learner
from salbc.gp import DerivativeGPRegressor
from salbc.kernels import SquaredExponential
from salbc.simulator import sample_rkhs_truth, simulate
from salbc.synthesis import GridPolicy, build_grid

pytestmark = pytest.mark.acceptance


def fd(fn, x, h=1e-5):
    return (fn(x + h) - fn(x - h)) / (2 * h)


def sup_rel_err(a, b):
    # pointwise relative error is undefined where the derivative crosses zero,
    # so errors are measured relative to the sup norm over the query points
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def test_criterion_1_derivative_gp_oracle(acceptance_report):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_d = worst_dd = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 11))
        kernel = SquaredExponential(rng.uniform(0.5, 2.0), rng.uniform(0.2, 1.5))
        X = rng.uniform(-1, 1, n)
        gp = DerivativeGPRegressor(kernel, rng.uniform(1e-3, 0.1)).fit(
            X, rng.standard_normal(n), rng.standard_normal(n))
        x = rng.uniform(-1.2, 1.2, 200)
        worst_d = max(worst_d, sup_rel_err(gp.query_dd(x)[0], fd(lambda t: gp.query_d(t)[0], x)))
        worst_dd = max(worst_dd, sup_rel_err(gp.query_ddd(x)[0], fd(lambda t: gp.query_d2(t)[0], x)))
    elapsed = time.perf_counter() - start
    ok = worst_d <= 1e-6 and worst_dd <= 1e-6 and elapsed < 10
    acceptance_report(1, ok, f"max rel err d'={worst_d:.2e}, (d^2/2)'={worst_dd:.2e} (tol 1e-6); {elapsed:.2f}s (< 10s)")
    assert ok


def test_criterion_2_information_gain_identity(acceptance_report):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 21))
        kernel = SquaredExponential(rng.uniform(0.5, 2.0), rng.uniform(0.1, 1.0))
        noise = rng.uniform(1e-3, 1.0)
        X = rng.uniform(-1, 1, n)
        # the sequential sum, built from n separately fitted posteriors
        seq = 0.0
        for s in range(n):
            var = DerivativeGPRegressor(kernel, noise).fit(X[:s], np.zeros(s)).query_d(X[s:s + 1])[1][0] ** 2
            seq += 0.5 * np.log1p(var / noise)
        _, logdet = np.linalg.slogdet(np.eye(n) + kernel.gram(X) / noise)
        cached = info_gain(DerivativeGPRegressor(kernel, noise).fit(X, np.zeros(n)))
        worst = max(worst, abs(seq - 0.5 * logdet), abs(cached - 0.5 * logdet))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 5
    acceptance_report(2, ok, f"max |sequential - logdet| = {worst:.2e} (tol 1e-9); {elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_3_confidence_coverage(acceptance_report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    kernel = SquaredExponential(1.0, 0.5)
    B_d, R, noise, delta = 1.0, 0.01, 0.01, 0.1
    # bumps wider than the lengthscale keep d^2/2 in the RKHS
    truths = [sample_rkhs_truth(kernel, B_d, 5, seed=s, width=0.75, noise_std=R) for s in range(200)]
    B_d2 = max(t.half_square_norm() for t in truths)
    cfg = ConfidenceConfig(delta=delta, B_d=B_d, B_d2=B_d2, R=R, noise_variance=noise)
    misses = np.zeros(3)
    total = 0
    for truth in truths:
        X = rng.uniform(-1, 1, 30)
        d = truth.d(X)
        gp = DerivativeGPRegressor(kernel, noise).fit(
            X, d + R * rng.standard_normal(30), 0.5 * d**2 + R * rng.standard_normal(30))
        x = rng.uniform(-1, 1, 50)
        est = estimate(gp, cfg, x)
        dv, dp = truth.d(x), truth.d_prime(x)
        misses += [np.sum(~est.d.contains(dv)), np.sum(~est.dd.contains(dp)), np.sum(~est.ddd.contains(dv * dp))]
        total += x.size
    rates = misses / total
    elapsed = time.perf_counter() - start
    ok = bool(np.all(rates <= delta / 3)) and elapsed < 120
    acceptance_report(3, ok, f"miss rates d={rates[0]:.4f}, d'={rates[1]:.4f}, dd'={rates[2]:.4f} "
                             f"(<= {delta / 3:.4f}); {elapsed:.2f}s (< 120s)")
    assert ok


def _differences(fn, x, xp):
    return np.abs(fn(x) - fn(xp)), np.abs(x - xp)


def test_criterion_4_lipschitz_validity(acceptance_report, reference_setup, reference_run):
    start = time.perf_counter()
    _, out = reference_run
    setup = reference_setup
    spec, truth = setup.problem, setup.truth
    lip = lipschitz_constants(spec, setup.kernel, setup.confidence)
    rows = np.loadtxt(out / "policy.csv", delimiter=",", skiprows=1)
    learned = GridPolicy(rows[:, 0], rows[:, 1], spec.L_pi)
    # a second policy that saturates both the slope bound and the control box
    steep = lambda x: 2.0 * np.sin(spec.L_pi / 2.0 * np.asarray(x, float))  # noqa: E731
    rng = np.random.default_rng(4)
    lo, hi = spec.domain
    x, xp = rng.uniform(lo, hi, 10_000), rng.uniform(lo, hi, 10_000)
    worst = {}
    for name, pol in [("learned", learned), ("steep", steep)]:
        checks = {
            "Hdot": (lambda s: true_hdot(spec, s, pol(s), truth.d, truth.d_prime), lip.L_Hdot),
            "Vdot": (lambda s: true_vdot(spec, s, pol(s), truth.d), lip.L_Vdot),
            "d": (truth.d, lip.L_d),
            "d'": (truth.d_prime, lip.L_dd),
        }
        for key, (fn, L) in checks.items():
            df, dx = _differences(fn, x, xp)
            worst[key] = max(worst.get(key, -np.inf), float(np.max(df - L * dx)))
    elapsed = time.perf_counter() - start
    ok = all(v <= 1e-9 for v in worst.values()) and elapsed < 30
    detail = ", ".join(f"{k}: {v:.3g}" for k, v in worst.items())
    acceptance_report(4, ok, f"max (|df| - L|dx|) {detail} (<= 1e-9); {elapsed:.2f}s (< 30s)")
    assert ok


def test_criterion_5_discretization_soundness(acceptance_report, reference_setup, reference_run):
    start = time.perf_counter()
    _, out = reference_run
    setup = reference_setup
    spec, truth, cfg = setup.problem, setup.truth, setup.cfg
    rows = np.loadtxt(out / "policy.csv", delimiter=",", skiprows=1)
    grid = build_grid(cfg.domain, cfg.tau)
    assert grid.tau == 0.01
    policy = GridPolicy(rows[:, 0], rows[:, 1], spec.L_pi)
    certified = np.flatnonzero(rows[:, 3] != 0)
    rng = np.random.default_rng(5)
    lo, hi = spec.domain
    h_viol = v_viol = checked = 0
    for i in certified:
        node = grid.nodes[i]
        xs = np.clip(node + rng.uniform(-grid.tau / 2, grid.tau / 2, 1000), lo, hi)
        u = policy(xs)
        h_viol += int(np.sum(true_hdot(spec, xs, u, truth.d, truth.d_prime) < 0))
        if spec.V(node) > spec.eclf_floor:
            v_viol += int(np.sum(true_vdot(spec, xs, u, truth.d) > 0))
        checked += xs.size
    elapsed = time.perf_counter() - start
    ok = certified.size > 0 and h_viol == 0 and v_viol == 0 and elapsed < 60
    acceptance_report(5, ok, f"{certified.size} certified nodes, {checked} off-grid points: "
                             f"{h_viol} barrier / {v_viol} Lyapunov violations (0 allowed); {elapsed:.2f}s (< 60s)")
    assert ok


def test_criterion_6_end_to_end(acceptance_report, reference_cfg):
    start = time.perf_counter()
    cfg = reference_cfg
    p = cfg.problem
    assert (cfg.domain, cfg.tau, cfg.confidence.delta, cfg.rounds) == ((-1.0, 1.0), 0.01, 0.1, 20)
    assert (p.preset, p.K_H, p.K_V, p.u_bounds, p.h0) == ("linear-1d", 1.0, 1.0, (-2.0, 2.0), 0.8)
    setup = build_setup(cfg)
    learner, _ = run_learner(setup)
    spec, truth = setup.problem, setup.truth
    sets = [s.safe_set for s in learner.states_]
    nested = all(np.all(b[a]) for a, b in zip(sets, sets[1:]))
    s0, sN = int(sets[0].sum()), int(sets[-1].sum())
    nodes = learner.safe_nodes_
    batch = simulate(truth, spec, learner.policy_, nodes, cfg.dt, cfg.T)
    eps = 10.0 * spec.L_V * cfg.dt
    envelope = spec.V(nodes)[None, :] * np.exp(-batch.times)[:, None] + eps
    h_bad = int(np.sum(batch.H_values < 0))
    v_bad = int(np.sum(batch.V_values > envelope))
    exits = int(np.sum(batch.exit_step >= 0))
    elapsed = time.perf_counter() - start
    ok = nested and sN > s0 and h_bad == 0 and v_bad == 0 and exits == 0 and elapsed < 300
    acceptance_report(6, ok, f"(a) nested={nested}; (b) |S_0|={s0} -> |S_N|={sN}; (c) {nodes.size} rollouts: "
                             f"H<0 samples={h_bad}, V-envelope breaches={v_bad}, exits={exits}; "
                             f"{elapsed:.2f}s (< 300s)")
    assert ok


def test_criterion_7_determinism(acceptance_report, reference_cfg, tmp_path):
    start = time.perf_counter()
    a, b = tmp_path / "a", tmp_path / "b"
    status_a = run_experiment(reference_cfg, a)
    status_b = run_experiment(reference_cfg, b)
    names = sorted(p.name for p in a.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    elapsed = time.perf_counter() - start
    ok = status_a == status_b and not mismatch and not errors and len(match) == len(names) == 5
    acceptance_report(7, ok, f"{len(match)}/{len(names)} artifacts byte-identical ({', '.join(names)}); {elapsed:.2f}s")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
