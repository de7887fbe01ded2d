"""Ground-truth scalar system, measurement channel and closed-loop rollouts.

Truths are finite expansions in Gaussian bumps,
``d(x) = sum_i a_i * s2 * exp(-(x - c_i)^2 / (2 w^2))``. With ``w`` equal to
the kernel lengthscale the bumps are kernel sections and
``||d||_k = sqrt(a^T K a)``. Wider bumps (``w`` greater than the
lengthscale) keep both ``d`` and ``d^2/2`` inside the RKHS, with RKHS norms
available in closed form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gp import Measurement

__all__ = [
    "TruthModel",
    "Trajectory",
    "sample_rkhs_truth",
    "sine_bumps_truth",
    "zero_truth",
    "measure",
    "rollout",
    "simulate",
    "rk4_step",
]


@dataclass(frozen=True)
class TruthModel:
    kernel: object
    centers: np.ndarray
    coefs: np.ndarray
    width: float
    noise_std: float = 0.0
    name: str = "rkhs-sample"

    @property
    def R(self):
        # Gaussian noise is sub-Gaussian with R equal to its standard deviation.
        return self.noise_std

    def _bumps(self, x):
        x = np.asarray(x, dtype=float)
        r = x[..., None] - self.centers
        return r, self.kernel.signal_variance * np.exp(-0.5 * (r / self.width) ** 2)

    def d(self, x):
        _, phi = self._bumps(x)
        return phi @ self.coefs

    def d_prime(self, x):
        r, phi = self._bumps(x)
        return (-r / self.width**2 * phi) @ self.coefs

    def _gram(self, centers, width):
        return self.kernel.bump_inner(centers[:, None], centers[None, :], width)

    def rkhs_norm(self):
        if self.coefs.size == 0:
            return 0.0
        gram = self.kernel.signal_variance**2 * self._gram(self.centers, self.width)
        return math.sqrt(max(float(self.coefs @ gram @ self.coefs), 0.0))

    def half_square_norm(self):
        """RKHS norm of ``d^2 / 2``; infinite unless the bumps are wider than the kernel."""
        if self.coefs.size == 0:
            return 0.0
        if self.width <= self.kernel.lengthscale:
            return math.inf
        s2 = self.kernel.signal_variance
        c, a, w = self.centers, self.coefs, self.width
        # phi_w(x - a) phi_w(x - b) = exp(-(a-b)^2 / (4 w^2)) phi_{w/sqrt2}(x - (a+b)/2)
        weights = 0.5 * s2**2 * np.outer(a, a) * np.exp(-((c[:, None] - c[None, :]) ** 2) / (4 * w**2))
        mids = 0.5 * (c[:, None] + c[None, :])
        gram = self._gram(mids.ravel(), w / math.sqrt(2.0))
        b = weights.ravel()
        return math.sqrt(max(float(b @ gram @ b), 0.0))

    def with_noise(self, noise_std):
        return TruthModel(self.kernel, self.centers, self.coefs, self.width, noise_std, self.name)


def _bump_width(kernel, width):
    return kernel.lengthscale if width is None else float(width)


def sample_rkhs_truth(kernel, B_d, m, seed, domain=(-1.0, 1.0), width=None,
                      noise_std=0.0, norm_fraction=0.9):
    """Random ``m``-bump truth rescaled to ``||d||_k = norm_fraction * B_d``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(domain[0], domain[1], size=m)
    coefs = rng.standard_normal(m)
    w = _bump_width(kernel, width)
    truth = TruthModel(kernel, centers, coefs, w, noise_std)
    norm = truth.rkhs_norm()
    scale = norm_fraction * B_d / norm if norm > 0 else 0.0
    return TruthModel(kernel, centers, coefs * scale, w, noise_std, "rkhs-sample")


def sine_bumps_truth(kernel, amplitude=0.3, domain=(-1.0, 1.0), width=None, noise_std=0.0):
    """Odd two-bump truth resembling ``amplitude * sin(pi x / span)`` on the domain.

    Bumps sit at the quarter points of the domain; the coefficient is chosen
    so the peak magnitude over the domain equals ``amplitude``.
    """
    lo, hi = domain
    mid, quarter = 0.5 * (lo + hi), 0.25 * (hi - lo)
    w = _bump_width(kernel, width)
    centers = np.array([mid - quarter, mid + quarter])
    unit = TruthModel(kernel, centers, np.array([-1.0, 1.0]), w, noise_std)
    peak = np.max(np.abs(unit.d(np.linspace(lo, hi, 4001))))
    return TruthModel(kernel, centers, np.array([-1.0, 1.0]) * amplitude / peak, w, noise_std,
                      "sine-bumps")


def zero_truth(kernel, noise_std=0.0):
    return TruthModel(kernel, np.zeros(0), np.zeros(0), kernel.lengthscale, noise_std, "zero")


def rk4_step(rhs, x, dt):
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * dt * k1)
    k3 = rhs(x + 0.5 * dt * k2)
    k4 = rhs(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def measure(truth, spec, x, u, rng, mode="direct", dt=1e-3):
    """One noisy sample of ``d`` and ``d^2/2`` at ``(x, u)``.

    ``mode="direct"`` draws ``d(x) + w``. ``mode="finite-difference"``
    integrates the true system for one step of length ``dt`` with ``u`` held
    and differences the states, which adds an O(dt) bias that the confidence
    bounds do not account for.
    """
    x, u = float(x), float(u)
    w1, w2 = truth.noise_std * rng.standard_normal(2)
    if mode == "direct":
        d = float(truth.d(x))
    elif mode == "finite-difference":
        rhs = lambda s: spec.f(s) + spec.g(s) * u + truth.d(s)  # noqa: E731
        x1 = float(rk4_step(rhs, np.float64(x), dt))
        d = (x1 - x) / dt - float(spec.f(x)) - float(spec.g(x)) * u
    else:
        raise ValueError(f"unknown measurement mode {mode!r}")
    return Measurement(x=x, u=u, d_hat=d + w1, d2_hat=0.5 * d * d + w2)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    V_values: np.ndarray
    H_values: np.ndarray
    exit_time: Optional[float] = None

    COLUMNS = ("t", "x", "u", "V", "H")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in zip(self.times, self.states, self.controls, self.V_values, self.H_values):
                w.writerow([f"{v:.17g}" for v in row])


@dataclass
class BatchRollout:
    """States of many simultaneous rollouts; column ``j`` is initial state ``j``."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    V_values: np.ndarray
    H_values: np.ndarray
    exit_step: np.ndarray = field(default=None)

    def trajectory(self, j):
        stop = self.exit_step[j]
        end = len(self.times) if stop < 0 else stop + 1
        exit_time = None if stop < 0 else float(self.times[stop])
        return Trajectory(self.times[:end], self.states[:end, j], self.controls[:end, j],
                          self.V_values[:end, j], self.H_values[:end, j], exit_time)


def simulate(truth, spec, policy, x0, dt, T):
    """Integrate the true closed loop with classical RK4 from each ``x0``.

    Rollouts that leave the domain are frozen at the first state outside it
    and reported through ``exit_step``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    lo, hi = spec.domain
    if np.any((x < lo) | (x > hi)):
        raise ValueError("initial states must lie in the domain")
    steps = int(round(T / dt))
    times = dt * np.arange(steps + 1)
    states = np.empty((steps + 1, x.size))
    exit_step = np.full(x.size, -1)
    states[0] = x

    def rhs(s):
        return spec.f(s) + spec.g(s) * policy(s) + truth.d(s)

    for k in range(1, steps + 1):
        active = exit_step < 0
        if not active.any():
            states[k:] = states[k - 1]
            break
        nxt = states[k - 1].copy()
        nxt[active] = rk4_step(rhs, states[k - 1, active], dt)
        states[k] = nxt
        out = active & ((nxt < lo) | (nxt > hi))
        exit_step[out] = k

    controls = policy(states)
    V_vals = spec.V(states)
    H_vals = spec.H(states, truth.d(states))
    return BatchRollout(times, states, controls, V_vals, H_vals, exit_step)


def rollout(truth, spec, policy, x0, dt, T):
    """Single closed-loop trajectory; see :func:`simulate`."""
    return simulate(truth, spec, policy, [x0], dt, T).trajectory(0)
