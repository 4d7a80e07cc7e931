"""Tensor-product Gauss-Legendre rules over ``Omega = (0, L) x omega``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Quadrature:
    """Composite Gauss-Legendre rule: panels in ``x1``, one panel per cross-section axis.

    ``breakpoints`` split ``[0, L]`` into pieces on which the integrand is
    smooth; each piece is cut into ``panels`` equal panels of order ``orders[0]``.
    """

    orders: tuple[int, int, int] = (6, 4, 4)
    length: float = 1.0
    breakpoints: tuple[float, ...] = ()
    panels: int = 2
    cross_section: tuple[float, float] = (-0.5, 0.5)

    def __post_init__(self):
        if min(self.orders) < 1 or self.panels < 1:
            raise ValueError("orders and panel counts must be positive")
        if not self.length > 0:
            raise ValueError("length must be positive")

    def edges(self):
        pts = np.asarray(self.breakpoints, dtype=float)
        pts = pts[(pts > 0.0) & (pts < self.length)]
        cuts = np.unique(np.concatenate([[0.0], pts, [self.length]]))
        cuts = cuts[np.concatenate([[True], np.diff(cuts) > 1e-14])]
        cuts[-1] = self.length
        fine = [np.linspace(a, b, self.panels + 1)[:-1] for a, b in zip(cuts[:-1], cuts[1:])]
        return np.concatenate(fine + [[self.length]])

    def axis_rule(self, i):
        """Nodes and weights along one axis."""
        x, w = np.polynomial.legendre.leggauss(self.orders[i])
        if i == 0:
            e = self.edges()
            half = 0.5 * np.diff(e)
            mid = 0.5 * (e[1:] + e[:-1])
            return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()
        a, b = self.cross_section
        return 0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w

    def rule(self):
        """All nodes, shape ``(n, 3)``, and weights, shape ``(n,)``."""
        axes = [self.axis_rule(i) for i in range(3)]
        X = np.stack(np.meshgrid(*[a[0] for a in axes], indexing="ij"), axis=-1).reshape(-1, 3)
        W = np.einsum("i,j,k->ijk", *[a[1] for a in axes]).ravel()
        return X, W

    def integrate(self, f, chunk=50000):
        X, W = self.rule()
        total = 0.0
        for k in range(0, len(X), chunk):
            total += float(np.dot(W[k:k + chunk], f(X[k:k + chunk])))
        return total

    def refined(self):
        """The same rule with every order doubled."""
        return Quadrature(tuple(2 * q for q in self.orders), self.length, self.breakpoints,
                          self.panels, self.cross_section)
