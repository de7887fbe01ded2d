"""Named problem presets.

Each preset builds a :class:`~salbc.certificates.ProblemSpec` for a given
domain and control box, with every bound and Lipschitz constant computed
for that domain.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .certificates import ProblemSpec

__all__ = ["PRESETS", "make_problem", "preset_names"]


def _linear_1d(domain, u_bounds, K_H=1.0, K_V=1.0, L_pi=10.0, eclf_floor=0.0, h0=0.8):
    """``xdot = -x + u + d``, safe set ``h0 - x^2 + d >= 0``, ``V = x^2/2``."""
    xm = max(abs(domain[0]), abs(domain[1]))
    um = max(abs(u_bounds[0]), abs(u_bounds[1]))
    return ProblemSpec(
        f=lambda x: -np.asarray(x, dtype=float),
        g=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        h=lambda x: h0 - np.asarray(x, dtype=float) ** 2,
        dh=lambda x: -2.0 * np.asarray(x, dtype=float),
        F=lambda y: np.asarray(y, dtype=float),
        dF=lambda y: np.ones_like(np.asarray(y, dtype=float)),
        V=lambda x: 0.5 * np.asarray(x, dtype=float) ** 2,
        dV=lambda x: np.asarray(x, dtype=float),
        K_H=K_H,
        K_V=K_V,
        domain=tuple(domain),
        u_bounds=tuple(u_bounds),
        B_f=xm,
        B_g=1.0,
        B_pi=um,
        L_f=1.0,
        L_g=0.0,
        L_h=2.0 * xm,
        L_dh=2.0,
        L_F=1.0,
        L_dF=0.0,
        L_V=xm,
        L_dV=1.0,
        L_pi=L_pi,
        eclf_floor=eclf_floor,
        name="linear-1d",
    )


def _saturated_1d(domain, u_bounds, K_H=1.0, K_V=1.0, L_pi=10.0, eclf_floor=0.0, h0=0.8):
    """Variant with a nonlinear safety operator ``F(y) = tanh(y)``."""
    base = _linear_1d(domain, u_bounds, K_H, K_V, L_pi, eclf_floor, h0)
    # |tanh''| peaks at 4 / (3 sqrt 3)
    return replace(
        base,
        F=lambda y: np.tanh(np.asarray(y, dtype=float)),
        dF=lambda y: 1.0 / np.cosh(np.asarray(y, dtype=float)) ** 2,
        L_F=1.0,
        L_dF=4.0 / (3.0 * np.sqrt(3.0)),
        name="saturated-1d",
    )


PRESETS = {
    "linear-1d": _linear_1d,
    "saturated-1d": _saturated_1d,
}


def preset_names():
    return sorted(PRESETS)


def make_problem(name, domain, u_bounds, **params):
    try:
        builder = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown problem preset {name!r}; choose from {preset_names()}") from None
    return builder(domain, u_bounds, **params)
