"""Uncertainty-aware barrier and Lyapunov certificates on scalar systems.

For ``xdot = f(x) + g(x) u + d(x)`` with safe set ``h(x) + F(d(x)) >= 0``,
the barrier derivative ``hdot`` and Lyapunov derivative ``vdot`` are

    hdot(x, u) = (h'(x) + F'(d) d') (f + g u + d) + K_H (h + F(d))
    vdot(x, u) = V'(x) (f + g u + d) + K_V V(x)

Both depend on ``d``, ``d'`` and ``d d'``. Replacing each by its confidence
interval and propagating with interval arithmetic gives brackets
``[l_hdot, u_hdot]`` and ``[l_vdot, u_vdot]``. Lipschitz moduli of the
closed loop turn node-wise margins into guarantees on the whole grid cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Tuple

import numpy as np

from .confidence import estimate
from .validation import as_states

__all__ = [
    "ProblemSpec",
    "LipschitzConstants",
    "hdot_interval",
    "vdot_interval",
    "hdot_bounds",
    "vdot_bounds",
    "true_hdot",
    "true_vdot",
    "lipschitz_constants",
    "certificate_margins",
    "in_Dn",
    "level_set_membership",
    "f_range",
]

ArrayFn = Callable[[np.ndarray], np.ndarray]

# Interval minimum/maximum of F is taken over this many uniform samples
# (both endpoints included).
F_SAMPLES = 66


@dataclass(frozen=True)
class ProblemSpec:
    """Known dynamics, safety data, certificate gains and their constants.

    All callables must accept and return numpy arrays elementwise. The bound
    constants ``B_*`` are sup norms over the domain and ``L_*`` Lipschitz
    moduli over the domain; ``L_h`` and ``L_dV``/``L_V`` follow the usual
    convention ``L_h = sup|h'|``, ``L_V = sup|V'|``, ``L_dV = sup|V''|``.

    ``eclf_floor`` excludes the sublevel set ``V <= eclf_floor`` from the
    Lyapunov decrease requirement. At the minimum of ``V`` the derivative
    ``vdot`` vanishes identically, so a strictly negative margin can never be
    certified there.
    """

    f: ArrayFn
    g: ArrayFn
    h: ArrayFn
    dh: ArrayFn
    F: ArrayFn
    dF: ArrayFn
    V: ArrayFn
    dV: ArrayFn
    K_H: float
    K_V: float
    domain: Tuple[float, float]
    u_bounds: Tuple[float, float]
    B_f: float
    B_g: float
    B_pi: float
    L_f: float
    L_g: float
    L_h: float
    L_dh: float
    L_F: float
    L_dF: float
    L_V: float
    L_dV: float
    L_pi: float
    eclf_floor: float = 0.0
    name: str = field(default="custom")

    def __post_init__(self):
        if not self.K_H > 0 or not self.K_V > 0:
            raise ValueError("K_H and K_V must be positive")
        lo, hi = self.domain
        if not lo <= hi:
            raise ValueError(f"empty domain {self.domain}")
        ulo, uhi = self.u_bounds
        if not ulo <= uhi:
            raise ValueError(f"empty control set {self.u_bounds}")
        for name in ("B_f", "B_g", "B_pi", "L_f", "L_g", "L_h", "L_dh", "L_F", "L_dF",
                     "L_V", "L_dV", "L_pi", "eclf_floor"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")

    def H(self, x, d):
        return self.h(x) + self.F(d)


def _prod(al, au, bl, bu):
    """Interval product ``[al, au] * [bl, bu]``."""
    c = np.stack(np.broadcast_arrays(al * bl, al * bu, au * bl, au * bu))
    return c.min(axis=0), c.max(axis=0)


def f_range(fn, lower, upper, n=F_SAMPLES):
    """Sampled min and max of ``fn`` over each interval ``[lower, upper]``."""
    t = np.linspace(0.0, 1.0, n)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    ys = lower[..., None] + (upper - lower)[..., None] * t
    vals = fn(ys)
    vals = np.broadcast_to(vals, ys.shape)
    return vals.min(axis=-1), vals.max(axis=-1)


def _node(a, u):
    """Align a per-node array with ``u`` of shape (nodes,) or (nodes, k)."""
    a = np.asarray(a)
    return a[:, None] if np.ndim(u) == 2 and a.ndim == 1 else a


def hdot_interval(spec, est, u):
    """Bracket ``[l, u]`` of ``hdot`` from precomputed node estimates.

    ``u`` has shape ``(nodes,)`` or ``(nodes, candidates)``. Every uncertain
    factor is an interval; lower and upper ends take the worst case of each
    product, so the bracket contains ``hdot`` whenever the intervals contain
    ``d``, ``d'`` and ``d d'``.
    """
    x = est.x
    u = np.asarray(u, dtype=float)
    n = lambda a: _node(a, u)  # noqa: E731
    dl, du = est.d.lower, est.d.upper
    pl, pu = est.dd.lower, est.dd.upper
    ql, qu = est.ddd.lower, est.ddd.upper

    w0 = n(spec.f(x)) + n(spec.g(x)) * u
    dh = n(spec.dh(x))

    t1_l = dh * w0 + n(np.minimum(spec.dh(x) * dl, spec.dh(x) * du))
    t1_u = dh * w0 + n(np.maximum(spec.dh(x) * dl, spec.dh(x) * du))

    gl, gu = f_range(spec.dF, dl, du)
    p_l, p_u = _prod(gl, gu, pl, pu)
    t2_l = np.minimum(w0 * n(p_l), w0 * n(p_u))
    t2_u = np.maximum(w0 * n(p_l), w0 * n(p_u))

    t3_l, t3_u = _prod(gl, gu, ql, qu)

    f_lo, f_hi = f_range(spec.F, dl, du)
    hx = spec.h(x)
    t4_l = spec.K_H * (hx + f_lo)
    t4_u = spec.K_H * (hx + f_hi)

    lower = t1_l + t2_l + n(t3_l + t4_l)
    upper = t1_u + t2_u + n(t3_u + t4_u)
    return lower, upper


def vdot_interval(spec, est, u):
    """Bracket ``[l, u]`` of ``vdot = V'(f + g u + d) + K_V V``."""
    x = est.x
    u = np.asarray(u, dtype=float)
    n = lambda a: _node(a, u)  # noqa: E731
    dV = spec.dV(x)
    w0 = n(spec.f(x)) + n(spec.g(x)) * u
    lo_d = np.minimum(dV * est.d.lower, dV * est.d.upper)
    hi_d = np.maximum(dV * est.d.lower, dV * est.d.upper)
    base = n(dV) * w0 + n(spec.K_V * spec.V(x))
    return base + n(lo_d), base + n(hi_d)


def hdot_bounds(spec, post, cfg, x, u):
    est = estimate(post, cfg, x)
    return hdot_interval(spec, est, np.broadcast_to(np.asarray(u, float), est.x.shape))


def vdot_bounds(spec, post, cfg, x, u):
    est = estimate(post, cfg, x)
    return vdot_interval(spec, est, np.broadcast_to(np.asarray(u, float), est.x.shape))


def true_hdot(spec, x, u, d, d_prime):
    """``hdot`` with the exact drift and its derivative."""
    x = np.asarray(x, dtype=float)
    dx, dpx = d(x), d_prime(x)
    a = spec.dh(x) + spec.dF(dx) * dpx
    w = spec.f(x) + spec.g(x) * u + dx
    return a * w + spec.K_H * spec.H(x, dx)


def true_vdot(spec, x, u, d):
    x = np.asarray(x, dtype=float)
    return spec.dV(x) * (spec.f(x) + spec.g(x) * u + d(x)) + spec.K_V * spec.V(x)


class LipschitzConstants(NamedTuple):
    L_Hdot: float
    L_Vdot: float
    L_d: float
    L_dd: float
    d_sup: float
    L_Hdot_printed: float
    L_Hdot_derived: float
    L_Vdot_printed: float
    L_Vdot_derived: float


def lipschitz_constants(spec, kernel, cfg):
    """Lipschitz moduli of ``hdot``, ``vdot``, ``d`` and ``d'`` on the closed loop.

    ``d`` ranges over RKHS functions with ``||d||_k <= B_d``. Two families of
    constants are formed and the larger of each pair is returned:

    * the compact closed forms ``B_d ||dk/dx||_inf``, ``B_d ||d2k/dx2||_inf``
      and ``B_d ||k||_inf``;
    * the reproducing-property bounds ``B_d sup sqrt(d^2j k/dx^j dx'^j)``,
      which are attained by some unit-norm function and are therefore the
      values that actually hold for every admissible ``d``.

    The moduli of ``hdot`` and ``vdot`` are likewise given in a compact
    closed form and re-derived by a term-by-term triangle inequality on
    ``A(x) W(x) + K H(x)``; the maximum of the two is used.
    """
    k_sup, dk_sup, d2k_sup = kernel.sup_norms()
    c0, c1, c2 = kernel.rkhs_sup_factors()
    B = cfg.B_d
    L_d = B * max(dk_sup, c1)
    L_dd = B * max(d2k_sup, c2)
    d_sup = B * max(k_sup, c0)

    s = spec
    w_sup = s.B_f + s.B_g * s.B_pi + d_sup
    a_lip = s.L_dh + L_d**2 * s.L_dF + s.L_F * L_dd
    a_sup = s.L_h + s.L_F * L_d
    w_lip = s.L_f + L_d + s.B_g * s.L_pi + s.L_g * s.B_pi

    h_printed = w_sup * a_lip + a_sup * (s.L_f + L_d * s.B_g * s.L_pi + abs(s.K_H) * (s.L_g + s.L_F * L_d))
    h_derived = w_sup * a_lip + a_sup * w_lip + abs(s.K_H) * (s.L_h + s.L_F * L_d)

    v_printed = w_sup * s.L_dV + (s.L_f + L_d + s.B_g * s.L_pi + s.K_V) * s.L_V
    v_derived = w_sup * s.L_dV + s.L_V * w_lip + s.K_V * s.L_V

    return LipschitzConstants(
        L_Hdot=max(h_printed, h_derived),
        L_Vdot=max(v_printed, v_derived),
        L_d=L_d,
        L_dd=L_dd,
        d_sup=d_sup,
        L_Hdot_printed=h_printed,
        L_Hdot_derived=h_derived,
        L_Vdot_printed=v_printed,
        L_Vdot_derived=v_derived,
    )


def certificate_margins(spec, est, u, tau, lip):
    """Signed slack of both discretized certificates.

    Returns ``(barrier, lyapunov, lyapunov_required)``; a node/control pair
    is admissible when ``barrier >= 0`` and, where required,
    ``lyapunov >= 0``.
    """
    h_lo, _ = hdot_interval(spec, est, u)
    _, v_hi = vdot_interval(spec, est, u)
    barrier = h_lo - lip.L_Hdot * tau
    lyapunov = -v_hi - lip.L_Vdot * tau
    required = _node(spec.V(est.x) > spec.eclf_floor, u)
    return barrier, lyapunov, np.broadcast_to(required, np.shape(lyapunov))


def in_Dn(spec, post, cfg, x, u, tau, lip=None, est=None):
    """Whether each ``(x, u)`` passes both margin-tightened certificates."""
    if lip is None:
        lip = lipschitz_constants(spec, post.kernel_, cfg)
    if est is None:
        est = estimate(post, cfg, x)
    u = np.broadcast_to(np.asarray(u, dtype=float), est.x.shape)
    barrier, lyapunov, required = certificate_margins(spec, est, u, tau, lip)
    return (barrier >= 0.0) & ((lyapunov >= 0.0) | ~required)


def level_set_membership(spec, post, cfg, x, est=None):
    """``h(x) + min over the d-interval of F >= 0``: the pessimistic safe set."""
    if est is None:
        est = estimate(post, cfg, as_states(x))
    f_lo, _ = f_range(spec.F, est.d.lower, est.d.upper)
    return spec.h(est.x) + f_lo >= 0.0

