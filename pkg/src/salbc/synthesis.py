"""Safe-set synthesis on a state grid.

Each round computes the pessimistic safe set on the grid, finds for every
node the interval of controls that pass both margin-tightened certificates,
and then picks the largest Lyapunov sublevel set whose nodes admit a single
``L_pi``-Lipschitz node policy meeting all of those intervals. Certified
nodes are added to the running safe set and one new measurement is taken
at the most uncertain safe node.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .certificates import certificate_margins, in_Dn, level_set_membership, lipschitz_constants
from .confidence import estimate
from .gp import DerivativeGPRegressor
from .validation import as_states, check_scalar

log = logging.getLogger(__name__)

__all__ = [
    "Grid",
    "GridPolicy",
    "SafeSynthState",
    "RoundResult",
    "build_grid",
    "optimize_round",
    "salbc_step",
    "select_sample",
    "lipschitz_clamp",
    "lipschitz_center",
    "SafeSetLearner",
]

N_CANDIDATES = 41
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# Slopes are built slightly inside the bound so the exact invariant check
# survives floating-point rounding.
_SLOPE_SHRINK = 1.0 - 1e-9


@dataclass(frozen=True)
class Grid:
    tau: float
    nodes: np.ndarray

    def __len__(self):
        return self.nodes.size

    def nearest(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.nodes, x), 1, max(len(self) - 1, 1))
        if len(self) == 1:
            return np.zeros(np.shape(x), dtype=int)
        left = self.nodes[idx - 1]
        right = self.nodes[idx]
        return np.where(np.abs(x - left) <= np.abs(right - x), idx - 1, idx)


def build_grid(domain, tau):
    """Uniform nodes with spacing at most ``tau``, endpoints included."""
    tau = check_scalar(tau, "tau", low=0.0, include_low=False)
    lo, hi = (float(b) for b in domain)
    if not lo <= hi:
        raise ValueError(f"empty domain {domain}")
    length = hi - lo
    if tau >= length:
        return Grid(tau, np.array([0.5 * (lo + hi)]))
    count = int(math.ceil(length / tau - 1e-9)) + 1
    return Grid(tau, np.linspace(lo, hi, count))


@dataclass(frozen=True)
class GridPolicy:
    """Node-valued control, linearly interpolated between nodes."""

    nodes: np.ndarray
    values: np.ndarray
    lipschitz_bound: float

    def __call__(self, x):
        if self.nodes.size == 1:
            return np.full(np.shape(x), float(self.values[0]))
        return np.interp(x, self.nodes, self.values)

    def max_slope(self):
        if self.nodes.size < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.values)) / np.diff(self.nodes)))

    def is_lipschitz(self):
        if self.nodes.size < 2:
            return True
        return bool(np.all(np.abs(np.diff(self.values)) <= self.lipschitz_bound * np.diff(self.nodes)))

    @classmethod
    def from_function(cls, grid, fn, lipschitz_bound, u_bounds):
        values = np.clip(np.asarray(fn(grid.nodes), dtype=float), *u_bounds)
        policy = cls(grid.nodes, values, lipschitz_bound)
        if not policy.is_lipschitz():
            raise ValueError(
                f"policy slope {policy.max_slope():.6g} exceeds lipschitz bound {lipschitz_bound}"
            )
        return policy


@dataclass
class SafeSynthState:
    round: int
    safe_set: np.ndarray
    policy: GridPolicy
    level: float
    E_star: np.ndarray
    certified: np.ndarray
    feasible: bool = True


@dataclass
class RoundResult:
    policy: GridPolicy
    level: float
    E_star: np.ndarray
    certified: np.ndarray
    feasible: bool


def _propagate(lo, hi, steps):
    """Bounds consistency for ``|u_{i+1} - u_i| <= steps[i]`` on a chain."""
    lo, hi = lo.copy(), hi.copy()
    for i in range(1, lo.size):
        lo[i] = max(lo[i], lo[i - 1] - steps[i - 1])
        hi[i] = min(hi[i], hi[i - 1] + steps[i - 1])
    for i in range(lo.size - 2, -1, -1):
        lo[i] = max(lo[i], lo[i + 1] - steps[i])
        hi[i] = min(hi[i], hi[i + 1] + steps[i])
    return lo, hi


def lipschitz_center(targets, steps):
    """Closest ``L``-Lipschitz sequence to ``targets`` in the sup norm.

    The upper envelope ``min_j (t_j + dist(i, j))`` and lower envelope
    ``max_j (t_j - dist(i, j))`` are each computed with one forward and one
    backward pass; their midpoint is Lipschitz and treats both directions
    along the chain alike.
    """
    targets = np.asarray(targets, dtype=float)
    up, down = targets.copy(), targets.copy()
    for i in range(1, targets.size):
        up[i] = min(up[i], up[i - 1] + steps[i - 1])
        down[i] = max(down[i], down[i - 1] - steps[i - 1])
    for i in range(targets.size - 2, -1, -1):
        up[i] = min(up[i], up[i + 1] + steps[i])
        down[i] = max(down[i], down[i + 1] - steps[i])
    return 0.5 * (up + down)


def lipschitz_clamp(targets, steps, lo=None, hi=None):
    """Two-pass slope clamp of ``targets`` into per-node boxes.

    A forward and a backward consistency pass shrink the boxes so every
    remaining value extends to a full Lipschitz sequence; a final forward
    sweep then picks the admissible value closest to each target. Returns
    ``None`` when the boxes admit no Lipschitz sequence.
    """
    targets = np.asarray(targets, dtype=float)
    lo = np.full(targets.size, -np.inf) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(targets.size, np.inf) if hi is None else np.asarray(hi, dtype=float)
    lo, hi = _propagate(lo, hi, steps)
    if np.any(lo > hi):
        return None
    out = np.empty_like(targets)
    out[0] = min(max(targets[0], lo[0]), hi[0])
    for i in range(1, targets.size):
        a = max(lo[i], out[i - 1] - steps[i - 1])
        b = min(hi[i], out[i - 1] + steps[i - 1])
        out[i] = min(max(targets[i], a), b)
    return out


def _maximize_concave(fun, lo, hi, n_nodes, n_grid=N_CANDIDATES, iters=40):
    """Per-node maximizer of a concave function of ``u`` on ``[lo, hi]``.

    ``fun`` maps an ``(n_nodes, k)`` control array to values of the same
    shape. A uniform grid locates the best candidate, and one golden-section
    pass on its bracket refines it.
    """
    cand = np.linspace(lo, hi, n_grid)
    vals = fun(np.broadcast_to(cand, (n_nodes, n_grid)))
    j = np.argmax(vals, axis=1)
    a = cand[np.maximum(j - 1, 0)]
    b = cand[np.minimum(j + 1, n_grid - 1)]
    best_u, best_v = cand[j], vals[np.arange(n_nodes), j]
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    f2 = fun(np.stack([c, d], axis=1))
    fc, fd = f2[:, 0], f2[:, 1]
    for _ in range(iters):
        left = fc >= fd
        a = np.where(left, a, c)
        b = np.where(left, d, b)
        p = np.where(left, b - _GOLDEN * (b - a), a + _GOLDEN * (b - a))
        fp = fun(p[:, None])[:, 0]
        c, d = np.where(left, p, d), np.where(left, c, p)
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
    mid = 0.5 * (a + b)
    f_mid = fun(mid[:, None])[:, 0]
    better = f_mid > best_v
    return np.where(better, mid, best_u), np.where(better, f_mid, best_v)


def _feasible_edge(fun, inside, outside, iters=60):
    """Bisection for the boundary of ``{fun >= 0}`` between two control arrays.

    Returns the last point known to be feasible, so the result never leaves
    the feasible set.
    """
    inside, outside = inside.copy(), outside.copy()
    for _ in range(iters):
        mid = 0.5 * (inside + outside)
        ok = fun(mid[:, None])[:, 0] >= 0.0
        inside = np.where(ok, mid, inside)
        outside = np.where(ok, outside, mid)
    return inside


def control_intervals(spec, est, tau, lip):
    """Admissible control interval and preferred control at each node.

    The barrier lower bound is concave in ``u`` and the Lyapunov upper bound
    affine, so the admissible set at each node is an interval.
    Returns ``(feasible, lo, hi, target)``.
    """
    n = est.x.size
    ulo, uhi = spec.u_bounds

    def score(u):
        barrier, lyap, _ = certificate_margins(spec, est, u, tau, lip)
        return np.minimum(barrier, lyap)

    def admissible(u):
        barrier, lyap, required = certificate_margins(spec, est, u, tau, lip)
        return np.where(required, np.minimum(barrier, lyap), barrier)

    target, _ = _maximize_concave(score, ulo, uhi, n)
    peak, peak_val = _maximize_concave(admissible, ulo, uhi, n)
    # the preferred control may be admissible even where the peak search is not
    t_val = admissible(target[:, None])[:, 0]
    use_t = t_val >= peak_val
    peak = np.where(use_t, target, peak)
    peak_val = np.maximum(peak_val, t_val)
    feasible = peak_val >= 0.0

    lo = np.full(n, ulo)
    hi = np.full(n, uhi)
    at_lo = admissible(lo[:, None])[:, 0] >= 0.0
    at_hi = admissible(hi[:, None])[:, 0] >= 0.0
    left = _feasible_edge(admissible, peak, lo)
    right = _feasible_edge(admissible, peak, hi)
    lo = np.where(at_lo, lo, left)
    hi = np.where(at_hi, hi, right)

    # Inside the exempt sublevel set only the barrier binds, and its optimum
    # tends to push the state away from the minimum of V. Prefer the
    # admissible control with the best Lyapunov margin there; that margin is
    # affine in u, so one of the interval ends attains it.
    _, _, required = certificate_margins(spec, est, target, tau, lip)
    ends = np.stack([lo, hi], axis=1)
    _, lyap_ends, _ = certificate_margins(spec, est, ends, tau, lip)
    best_end = np.where(lyap_ends[:, 0] >= lyap_ends[:, 1], lo, hi)
    target = np.where(~required & feasible, best_end, target)
    return feasible, lo, hi, target


def optimize_round(state, spec, post, cfg, grid, lip=None, controls=None, est=None):
    """Largest certified sublevel set of ``V`` inside the pessimistic safe set.

    ``controls`` optionally overrides the control box ``spec.u_bounds`` for
    this round, as a ``(lo, hi)`` pair.
    """
    if controls is not None:
        spec = replace(spec, u_bounds=tuple(controls))
    if lip is None:
        lip = lipschitz_constants(spec, post.kernel_, cfg)
    if est is None:
        est = estimate(post, cfg, grid.nodes)
    tau = grid.tau
    nodes = grid.nodes
    steps = np.diff(nodes) * spec.L_pi * _SLOPE_SHRINK
    ulo, uhi = spec.u_bounds

    E = level_set_membership(spec, post, cfg, nodes, est=est)
    V = spec.V(nodes)
    fallback = RoundResult(state.policy, state.level, np.zeros_like(E), np.zeros_like(E), False)
    if not E.any():
        return fallback

    feasible, a, b, target = control_intervals(spec, est, tau, lip)
    targets = np.where(E, target, np.clip(state.policy.values, ulo, uhi))
    targets = lipschitz_center(targets, steps)

    for c in np.unique(V[E])[::-1]:
        required = E & (V <= c)
        if np.any(required & ~feasible):
            continue
        lo = np.where(required, a, ulo)
        hi = np.where(required, b, uhi)
        values = lipschitz_clamp(targets, steps, lo, hi)
        if values is None:
            continue
        policy = GridPolicy(nodes, values, spec.L_pi)
        ok = in_Dn(spec, post, cfg, nodes, values, tau, lip=lip, est=est)
        if np.all(ok[required]) and policy.is_lipschitz():
            return RoundResult(policy, float(c), E, required, True)
    return fallback


def select_sample(state, post, grid):
    """Node of the safe set with the largest posterior std of ``d``."""
    idx = np.flatnonzero(state.safe_set)
    if idx.size == 0:
        raise ValueError("safe set is empty")
    _, std = post.query_d(grid.nodes[idx])
    return int(idx[np.argmax(std)])


@dataclass
class RoundRecord:
    n: int
    safe_set_size: int
    level: float
    x_sample: float
    gamma: float
    sqrt_beta_d: float
    feasible: bool
    certified_size: int
    posterior_size: int


def salbc_step(state, spec, post, cfg, grid, truth_channel, lip=None):
    """One round: certify, grow the safe set, then take one measurement.

    ``truth_channel(x, u)`` must return a :class:`~salbc.gp.Measurement`.
    Returns ``(new_state, new_posterior, record)``.
    """
    if lip is None:
        lip = lipschitz_constants(spec, post.kernel_, cfg)
    est = estimate(post, cfg, grid.nodes)
    result = optimize_round(state, spec, post, cfg, grid, lip=lip, est=est)
    safe = state.safe_set | result.certified
    new_state = SafeSynthState(
        round=state.round + 1,
        safe_set=safe,
        policy=result.policy,
        level=result.level,
        E_star=result.E_star,
        certified=result.certified,
        feasible=result.feasible,
    )
    i = select_sample(new_state, post, grid)
    x_n = float(grid.nodes[i])
    m = truth_channel(x_n, float(result.policy(x_n)))
    record = RoundRecord(
        n=new_state.round,
        safe_set_size=int(safe.sum()),
        level=result.level,
        x_sample=x_n,
        gamma=est.gamma,
        sqrt_beta_d=est.sqrt_beta_d,
        feasible=result.feasible,
        certified_size=int(result.certified.sum()),
        posterior_size=post.n_train_,
    )
    if not result.feasible:
        log.info("round %d infeasible; keeping previous policy", new_state.round)
    return new_state, post.add_measurement(m), record


def initial_state(grid, safe_mask, policy, level=0.0):
    safe_mask = np.asarray(safe_mask, dtype=bool)
    if safe_mask.shape != grid.nodes.shape or not safe_mask.any():
        raise ValueError("initial safe set must be a nonempty mask over the grid nodes")
    empty = np.zeros_like(safe_mask)
    return SafeSynthState(0, safe_mask.copy(), policy, float(level), empty, empty.copy(), True)


class SafeSetLearner(BaseEstimator):
    """Estimator wrapper around repeated :func:`salbc_step` rounds.

    ``fit`` consumes a measurement channel and runs ``n_rounds`` rounds;
    ``predict`` evaluates the final policy.

    Parameters
    ----------
    problem : ProblemSpec
    kernel : SquaredExponential
    confidence : ConfidenceConfig
    tau : float
        Grid resolution.
    n_rounds : int
    """

    def __init__(self, problem=None, kernel=None, confidence=None, tau=0.01, n_rounds=20):
        self.problem = problem
        self.kernel = kernel
        self.confidence = confidence
        self.tau = tau
        self.n_rounds = n_rounds

    def fit(self, channel: Callable, initial_safe: np.ndarray, initial_policy: Callable,
            measurements: Optional[List] = None):
        """Run the rounds.

        ``initial_safe`` is a boolean mask over grid nodes (or a callable
        ``x -> bool``); ``initial_policy`` a callable ``x -> u`` that must be
        ``L_pi``-Lipschitz on the grid.
        """
        spec, cfg = self.problem, self.confidence
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be >= 0")
        self.grid_ = build_grid(spec.domain, self.tau)
        if callable(initial_safe):
            initial_safe = np.asarray(initial_safe(self.grid_.nodes), dtype=bool)
        policy0 = GridPolicy.from_function(self.grid_, initial_policy, spec.L_pi, spec.u_bounds)
        state = initial_state(self.grid_, initial_safe, policy0)
        post = DerivativeGPRegressor.from_measurements(
            measurements or [], kernel=self.kernel, noise_variance=cfg.noise_variance
        )
        self.lipschitz_ = lipschitz_constants(spec, post.kernel_, cfg)
        self.initial_state_ = state
        self.history_ = []
        self.states_ = [state]
        self.posteriors_ = [post]
        for _ in range(self.n_rounds):
            state, post, rec = salbc_step(state, spec, post, cfg, self.grid_, channel, self.lipschitz_)
            self.history_.append(rec)
            self.states_.append(state)
            self.posteriors_.append(post)
        self.state_ = state
        self.gp_ = post
        return self

    @property
    def policy_(self):
        check_is_fitted(self, "state_")
        return self.state_.policy

    @property
    def safe_nodes_(self):
        check_is_fitted(self, "state_")
        return self.grid_.nodes[self.state_.safe_set]

    def certifying_round(self):
        """Index of the round whose certificate backs the current policy, or ``None``."""
        check_is_fitted(self, "state_")
        for k in range(len(self.history_), 0, -1):
            if self.history_[k - 1].feasible:
                return k
        return None

    def predict(self, X):
        check_is_fitted(self, "state_")
        return self.state_.policy(as_states(X))

