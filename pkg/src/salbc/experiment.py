"""Experiment orchestration and artifact persistence.

``run_experiment`` writes, into the output directory:

``rounds.csv``
    ``n,S_n,c_n,x_sample,gamma,sqrt_beta_d,feasible``, one row per round.
``trajectory.csv``
    ``t,x,u,V,H`` for the final rollout from ``x0``.
``policy.csv``
    ``x,u,safe,certified``: final node policy, final safe set and the nodes
    whose certificate backs that policy.
``measurements.csv``
    ``x,u,d_hat,d2_hat`` in the order they were taken.
``summary.json``
    The fixed key set :data:`SUMMARY_KEYS`.

Safety violations are recorded states with ``H < 0`` and domain exits,
counted over the ``x0`` rollout and, if enabled, over one rollout from
every node of the final safe set.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .certificates import in_Dn, lipschitz_constants
from .confidence import ConfidenceConfig, estimate
from .gp import DerivativeGPRegressor, Measurement
from .kernels import make_kernel
from .presets import make_problem
from .simulator import measure, rollout, sample_rkhs_truth, simulate, sine_bumps_truth, zero_truth
from .synthesis import GridPolicy, SafeSetLearner, build_grid

log = logging.getLogger(__name__)

__all__ = [
    "ROUND_COLUMNS",
    "SUMMARY_KEYS",
    "Setup",
    "build_setup",
    "run_experiment",
    "run_learner",
    "verify_artifacts",
    "ArtifactError",
]

ROUND_COLUMNS = ("n", "S_n", "c_n", "x_sample", "gamma", "sqrt_beta_d", "feasible")
POLICY_COLUMNS = ("x", "u", "safe", "certified")
MEASUREMENT_COLUMNS = ("x", "u", "d_hat", "d2_hat")
SUMMARY_KEYS = (
    "seed",
    "rounds",
    "grid_size",
    "initial_safe_set_size",
    "safe_set_size",
    "safe_set_fraction",
    "final_level",
    "certified_size",
    "certifying_round",
    "certifying_posterior_size",
    "infeasible_rounds",
    "violation_count",
    "domain_exits",
    "min_H",
    "lyapunov_envelope_violations",
)


class ArtifactError(RuntimeError):
    """Missing or unreadable artifact files."""


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _read_csv(path, header):
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"missing artifact {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got is None or tuple(got) != tuple(header):
            raise ArtifactError(f"{path}: expected header {','.join(header)}, got {got}")
        return [[float(v) for v in row] for row in reader]


@dataclass
class Setup:
    """Everything a run needs, built deterministically from a config."""

    cfg: object
    kernel: object
    truth: object
    problem: object
    confidence: ConfidenceConfig


def _make_truth(cfg, kernel, rng):
    t = cfg.truth
    R = cfg.confidence.R
    width = t.width_factor * kernel.lengthscale
    if t.mode == "rkhs-sample":
        seed = int(rng.integers(2**32))
        return sample_rkhs_truth(kernel, cfg.confidence.B_d, t.m, seed, cfg.domain, width, R)
    if t.name == "zero":
        return zero_truth(kernel, R)
    return sine_bumps_truth(kernel, t.amplitude, cfg.domain, width, R)


def build_setup(cfg) -> Setup:
    kernel = make_kernel(cfg.kernel.family, signal_variance=cfg.kernel.signal_variance,
                         lengthscale=cfg.kernel.lengthscale)
    truth_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0])
    truth = _make_truth(cfg, kernel, truth_rng)
    c = cfg.confidence
    B_d = c.B_d if c.B_d is not None else max(truth.rkhs_norm() / 0.9, 1e-12)
    if c.B_d2 is not None:
        B_d2 = c.B_d2
    else:
        norm2 = truth.half_square_norm()
        if not np.isfinite(norm2):
            raise ValueError(
                "confidence.B_d2 cannot be derived: d^2/2 is outside the RKHS unless "
                "truth.width_factor > 1; set it explicitly"
            )
        B_d2 = max(norm2 / 0.9, 1e-12)
    confidence = ConfidenceConfig(delta=c.delta, B_d=B_d, B_d2=B_d2, R=c.R,
                                  noise_variance=c.noise_variance)
    p = cfg.problem
    problem = make_problem(p.preset, cfg.domain, p.u_bounds, K_H=p.K_H, K_V=p.K_V,
                           L_pi=p.L_pi, eclf_floor=p.eclf_floor, h0=p.h0)
    return Setup(cfg, kernel, truth, problem, confidence)


def _initial(cfg, problem):
    radius = cfg.initial.safe_radius
    gain = cfg.initial.policy_gain
    # a small tolerance keeps nodes that sit on the radius up to rounding
    safe = lambda x: np.abs(x) <= radius + 1e-9  # noqa: E731
    policy = lambda x: -gain * np.asarray(x, dtype=float)  # noqa: E731
    return safe, policy


def _certified_view(learner):
    """Certified mask and posterior size backing the final policy."""
    k = learner.certifying_round()
    if k is None:
        return np.zeros(len(learner.grid_), dtype=bool), 0, None
    return learner.states_[k].certified, learner.history_[k - 1].posterior_size, k


def _rollout_checks(spec, cfg, times, V, H, x0, exit_step):
    """Safety and decay tallies for rollouts stored column-wise.

    Samples after a rollout's exit step are ignored; the exit itself counts
    as one violation.
    """
    steps = np.arange(times.size)[:, None]
    alive = (exit_step[None, :] < 0) | (steps <= exit_step[None, :])
    eps = 10.0 * spec.L_V * cfg.dt
    bound = spec.V(x0)[None, :] * np.exp(-spec.K_V * times)[:, None] + eps
    exits = int(np.sum(exit_step >= 0))
    return {
        "violations": int(np.sum((H < 0.0) & alive)) + exits,
        "exits": exits,
        "min_H": float(np.min(np.where(alive, H, np.inf))),
        "envelope": int(np.sum((V > bound) & alive)),
    }


def run_learner(setup):
    """Run the configured rounds; return the fitted learner and the measurements taken."""
    cfg, spec, truth = setup.cfg, setup.problem, setup.truth
    meas_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    taken = []

    def channel(x, u):
        m = measure(truth, spec, x, u, meas_rng, mode=cfg.measurement.mode, dt=cfg.measurement.dt)
        taken.append(m)
        return m

    safe0, policy0 = _initial(cfg, spec)
    learner = SafeSetLearner(spec, setup.kernel, setup.confidence, cfg.tau, cfg.rounds)
    learner.fit(channel, safe0, policy0)
    return learner, taken


def run_experiment(cfg, out) -> int:
    """Run the configured experiment; return 0 iff no safety violation occurred."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    setup = build_setup(cfg)
    spec, truth = setup.problem, setup.truth
    learner, taken = run_learner(setup)
    log.info("finished %d rounds; |S_N| = %d", cfg.rounds, int(learner.state_.safe_set.sum()))

    rows = [(r.n, r.safe_set_size, r.level, r.x_sample, r.gamma, r.sqrt_beta_d, r.feasible)
            for r in learner.history_]
    _write_csv(out / "rounds.csv", ROUND_COLUMNS, rows)

    policy = learner.policy_
    certified, post_size, k_cert = _certified_view(learner)
    _write_csv(out / "policy.csv", POLICY_COLUMNS,
               zip(policy.nodes, policy.values, learner.state_.safe_set, certified))
    _write_csv(out / "measurements.csv", MEASUREMENT_COLUMNS,
               [(m.x, m.u, m.d_hat, m.d2_hat) for m in taken])

    traj = rollout(truth, spec, policy, cfg.x0, cfg.dt, cfg.T)
    traj.to_csv(out / "trajectory.csv")
    checks = [_rollout_checks(spec, cfg, traj.times, traj.V_values[:, None], traj.H_values[:, None],
                              np.array([cfg.x0]),
                              np.array([-1 if traj.exit_time is None else traj.times.size - 1]))]
    if cfg.rollout_safe_set:
        nodes = learner.safe_nodes_
        batch = simulate(truth, spec, policy, nodes, cfg.dt, cfg.T)
        checks.append(_rollout_checks(spec, cfg, batch.times, batch.V_values, batch.H_values,
                                      nodes, batch.exit_step))
    violations = sum(c["violations"] for c in checks)
    exits = sum(c["exits"] for c in checks)
    min_H = min(c["min_H"] for c in checks)
    envelope = sum(c["envelope"] for c in checks)

    grid_size = len(learner.grid_)
    summary = {
        "seed": cfg.seed,
        "rounds": cfg.rounds,
        "grid_size": grid_size,
        "initial_safe_set_size": int(learner.initial_state_.safe_set.sum()),
        "safe_set_size": int(learner.state_.safe_set.sum()),
        "safe_set_fraction": float(learner.state_.safe_set.sum()) / grid_size,
        "final_level": float(learner.state_.level),
        "certified_size": int(certified.sum()),
        "certifying_round": k_cert,
        "certifying_posterior_size": int(post_size),
        "infeasible_rounds": int(sum(not r.feasible for r in learner.history_)),
        "violation_count": violations,
        "domain_exits": exits,
        "min_H": min_H,
        "lyapunov_envelope_violations": envelope,
    }
    assert tuple(summary) == SUMMARY_KEYS
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    if violations:
        log.warning("%d safety violations recorded", violations)
    return 1 if violations else 0


def verify_artifacts(cfg, artifacts):
    """Re-check every certified node of a run from its artifacts alone.

    The posterior is rebuilt from the recorded measurements that backed the
    certificate, and each certified node's recorded control is checked
    against both margin-tightened certificates. Returns the list of failure
    messages; an empty list means the artifacts verify.
    """
    artifacts = Path(artifacts)
    setup = build_setup(cfg)
    spec = setup.problem
    _read_csv(artifacts / "rounds.csv", ROUND_COLUMNS)
    summary_path = artifacts / "summary.json"
    if not summary_path.is_file():
        raise ArtifactError(f"missing artifact {summary_path}")
    with open(summary_path) as fh:
        summary = json.load(fh)
    rows = np.array(_read_csv(artifacts / "policy.csv", POLICY_COLUMNS)).reshape(-1, 4)
    meas = _read_csv(artifacts / "measurements.csv", MEASUREMENT_COLUMNS)

    grid = build_grid(cfg.domain, cfg.tau)
    problems = []
    if rows.shape[0] != len(grid) or not np.array_equal(rows[:, 0], grid.nodes):
        return [f"policy.csv nodes do not match the configured grid ({len(grid)} nodes)"]
    certified = rows[:, 3] != 0
    if not certified.any():
        return []
    n_post = int(summary.get("certifying_posterior_size", 0))
    if n_post > len(meas):
        return [f"summary records {n_post} certifying measurements but only {len(meas)} exist"]
    ms = [Measurement(*row) for row in meas[:n_post]]
    post = DerivativeGPRegressor.from_measurements(ms, kernel=setup.kernel,
                                                   noise_variance=setup.confidence.noise_variance)
    policy = GridPolicy(grid.nodes, rows[:, 1], spec.L_pi)
    slopes = np.abs(np.diff(policy.values)) / np.diff(grid.nodes)
    for i in np.flatnonzero(np.abs(np.diff(policy.values)) > spec.L_pi * np.diff(grid.nodes)):
        problems.append(f"nodes {i}-{i + 1} (x={grid.nodes[i]:.6g}..{grid.nodes[i + 1]:.6g}): "
                        f"policy slope {slopes[i]:.6g} exceeds L_pi = {spec.L_pi}")
    ulo, uhi = spec.u_bounds
    lip = lipschitz_constants(spec, setup.kernel, setup.confidence)
    est = estimate(post, setup.confidence, grid.nodes)
    ok = in_Dn(spec, post, setup.confidence, grid.nodes, policy.values, grid.tau, lip=lip, est=est)
    for i in np.flatnonzero(certified):
        x, u = grid.nodes[i], policy.values[i]
        if not ulo <= u <= uhi:
            problems.append(f"node {i} (x={x:.6g}): control {u:.6g} outside [{ulo}, {uhi}]")
        elif not ok[i]:
            problems.append(f"node {i} (x={x:.6g}): control {u:.6g} fails the certificates")
    return problems
