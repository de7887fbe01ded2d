"""Stationary Mercer kernels with closed-form derivatives.

Only the squared-exponential family is provided. It is smooth, so the
derivative-reproducing property holds and every constant needed to bound
Lipschitz moduli of RKHS functions is available analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["SquaredExponential", "make_kernel", "KERNEL_FAMILIES"]


@dataclass(frozen=True)
class SquaredExponential:
    """``k(x, x') = s2 * exp(-(x - x')**2 / (2 * lengthscale**2))``.

    All evaluation methods broadcast their arguments with numpy rules, so
    ``k.eval(a[:, None], b[None, :])`` returns a Gram block.
    """

    signal_variance: float = 1.0
    lengthscale: float = 1.0

    family = "squared-exponential"

    def __post_init__(self):
        if not self.signal_variance >= 0.0:
            raise ValueError(f"signal_variance must be >= 0, got {self.signal_variance}")
        if not self.lengthscale > 0.0:
            raise ValueError(f"lengthscale must be > 0, got {self.lengthscale}")

    # -- evaluation -------------------------------------------------------

    def eval(self, x, x_prime):
        r = np.subtract(x, x_prime)
        return self.signal_variance * np.exp(-0.5 * (r / self.lengthscale) ** 2)

    def eval_dx(self, x, x_prime):
        """Partial derivative in the first argument."""
        r = np.subtract(x, x_prime)
        return -r / self.lengthscale**2 * self.eval(x, x_prime)

    def eval_dxdx(self, x, x_prime):
        """Cross derivative ``d^2 k / dx dx'``."""
        r = np.subtract(x, x_prime)
        ell2 = self.lengthscale**2
        return (1.0 / ell2 - r**2 / ell2**2) * self.eval(x, x_prime)

    def eval_d2x(self, x, x_prime):
        """Second derivative in the first argument, ``d^2 k / dx^2``."""
        return -self.eval_dxdx(x, x_prime)

    def gram(self, a, b=None):
        a = np.asarray(a, dtype=float).ravel()
        b = a if b is None else np.asarray(b, dtype=float).ravel()
        return self.eval(a[:, None], b[None, :])

    def diag(self, x):
        return np.full(np.shape(x), float(self.signal_variance))

    def diag_dxdx(self, x):
        return np.full(np.shape(x), self.signal_variance / self.lengthscale**2)

    # -- constants ----------------------------------------------------------

    def sup_norms(self):
        """Sup norms over the real line of ``k``, ``dk/dx`` and ``d^2k/dx^2``.

        ``|dk/dx|`` peaks at ``|x - x'| = lengthscale``; ``|d^2k/dx^2|`` peaks
        at coincidence.
        """
        s2, ell = float(self.signal_variance), float(self.lengthscale)
        return s2, s2 * math.exp(-0.5) / ell, s2 / ell**2

    def rkhs_sup_factors(self):
        """Factors ``(c0, c1, c2)`` with ``sup|d^(j)| <= c_j * ||d||_k``.

        By the reproducing property, ``c_j = sup_x sqrt(d^2j k / dx^j dx'^j)``
        on the diagonal; these are the tight Cauchy-Schwarz constants.
        """
        s, ell = math.sqrt(self.signal_variance), float(self.lengthscale)
        return s, s / ell, math.sqrt(3.0) * s / ell**2

    def bump_inner(self, a, b, width):
        """RKHS inner product of unit Gaussian bumps ``exp(-(x-c)^2/(2 width^2))``.

        Closed form from the Fourier representation of the norm; finite only
        for ``2 * width**2 > lengthscale**2``. ``width == lengthscale`` gives
        ``k(a, b) / s2**2``, i.e. kernel sections scaled by ``1/s2``.
        """
        ell2 = self.lengthscale**2
        q = 2.0 * width**2 - ell2
        if q <= 0.0:
            raise ValueError(
                f"bump width {width} is too narrow for the RKHS of lengthscale "
                f"{self.lengthscale}"
            )
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        scale = width**2 / (self.signal_variance * self.lengthscale * math.sqrt(q))
        return scale * np.exp(-((a - b) ** 2) / (2.0 * q))


KERNEL_FAMILIES = {"squared-exponential": SquaredExponential}


def make_kernel(family="squared-exponential", signal_variance=1.0, lengthscale=1.0):
    try:
        cls = KERNEL_FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown kernel family {family!r}") from None
    return cls(signal_variance=signal_variance, lengthscale=lengthscale)
