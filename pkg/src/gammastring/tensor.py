"""Small fixed-size linear algebra, rescaled gradients, grids and discrete norms.

Vectors are arrays with a trailing axis of length 3 and matrices carry two
trailing axes ``(3, 3)`` or ``(3, 2)``; every helper broadcasts over leading
axes so that whole sample sets are processed at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import DomainError

E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


def det3(a, b, c):
    """Determinant of the matrix with columns ``a, b, c`` as ``a . (b x c)``."""
    return np.einsum("...i,...i->...", a, np.cross(b, c))


def det_matrix(G):
    """Closed-form determinant of (a stack of) 3x3 matrices."""
    G = np.asarray(G, dtype=float)
    return det3(G[..., :, 0], G[..., :, 1], G[..., :, 2])


def ddet(G, dG):
    """Derivative of ``det G`` in the direction ``dG`` (column-replacement rule)."""
    c = [G[..., :, i] for i in range(3)]
    d = [dG[..., :, i] for i in range(3)]
    return det3(d[0], c[1], c[2]) + det3(c[0], d[1], c[2]) + det3(c[0], c[1], d[2])


def complete_frame(a, b):
    """Return ``a x b / |a x b|^2``, the column making ``det(a|b|.) = 1``."""
    w = np.cross(a, b)
    return w / np.einsum("...i,...i->...", w, w)[..., None]


def norm(v):
    return np.sqrt(np.einsum("...i,...i->...", v, v))


def orthogonal_unit(xi, references=(E2, E3), tol=1e-6):
    """Deterministic unit vector orthogonal to ``xi``.

    The first reference vector whose component orthogonal to ``xi`` is not
    degenerate is projected and normalized. ``xi = 0`` returns the first
    reference.
    """
    xi = np.asarray(xi, dtype=float)
    nx = np.linalg.norm(xi)
    if nx == 0.0:
        return np.array(references[0], dtype=float)
    xh = xi / nx
    for r in references:
        w = r - np.dot(r, xh) * xh
        nw = np.linalg.norm(w)
        if nw > tol:
            return w / nw
    raise ValueError("all reference vectors are collinear with xi")


def rotation_about(axis, angle):
    """Rodrigues rotation matrix about a unit ``axis``."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * K @ K


@dataclass(frozen=True)
class BoxGrid:
    """Reference boxes ``Q_L = [0,L] x J x J`` and ``Q_L' = [0,L] x J' x J'``.

    ``shape`` holds the node counts along ``x1, x2, x3`` for the inner box.
    The cross section ``omega = (-1/2, 1/2)^2`` sits inside ``J x J``.
    """

    length: float = 1.0
    inner: tuple[float, float] = (-0.5, 0.5)
    outer: tuple[float, float] = (-1.0, 1.0)
    shape: tuple[int, int, int] = (129, 17, 33)

    def __post_init__(self):
        j0, j1 = self.inner
        k0, k1 = self.outer
        if not self.length > 0:
            raise ValueError("length must be positive")
        if not (j0 <= 0.0 <= j1):
            raise ValueError("the inner interval must contain 0")
        if not (k0 < j0 and j1 < k1):
            raise ValueError("the inner interval must lie strictly inside the outer one")
        if min(self.shape) < 2:
            raise ValueError("each axis needs at least two nodes")
        if j0 > -0.5 or j1 < 0.5:
            raise ValueError("the cross section (-1/2,1/2)^2 must fit inside J x J")

    def axis(self, i, outer=False):
        if i == 0:
            return np.linspace(0.0, self.length, self.shape[0])
        a, b = self.outer if outer else self.inner
        return np.linspace(a, b, self.shape[i])

    def spacing(self, i, outer=False):
        ax = self.axis(i, outer)
        return ax[1] - ax[0]

    def nodes(self, outer=False):
        """All nodes as an array of shape ``shape + (3,)``."""
        axes = [self.axis(i, outer) for i in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def contains(self, x, outer=True, tol=1e-12):
        x = np.asarray(x, dtype=float)
        a, b = self.outer if outer else self.inner
        ok1 = (x[..., 0] >= -tol) & (x[..., 0] <= self.length + tol)
        ok2 = (x[..., 1] >= a - tol) & (x[..., 1] <= b + tol)
        ok3 = (x[..., 2] >= a - tol) & (x[..., 2] <= b + tol)
        return ok1 & ok2 & ok3


class TubeField(Protocol):
    """A deformation of ``Q_L'`` with closed-form partial derivatives."""

    eps: float
    domain: BoxGrid

    def value(self, x): ...

    def jacobian(self, x): ...


def check_domain(field_, x):
    x = np.asarray(x, dtype=float)
    inside = field_.domain.contains(x, outer=True)
    if not np.all(inside):
        bad = x[~inside] if x.ndim > 1 else x
        raise DomainError(f"point {np.atleast_2d(bad)[0]} outside Q_L'")
    return x


def rescaled_gradient(field_, x):
    """``(d1 v | d2 v / eps | d3 v / eps)`` from the field's closed-form Jacobian."""
    x = check_domain(field_, x)
    J = np.array(field_.jacobian(x), dtype=float, copy=True)
    J[..., :, 1:] /= field_.eps
    return J


@dataclass(frozen=True)
class LinearField:
    """``v(x) = M diag(1, eps, eps) x + c`` -- the simplest tube field."""

    matrix: np.ndarray
    eps: float
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    domain: BoxGrid = field(default_factory=BoxGrid)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        xe = x * np.array([1.0, self.eps, self.eps])
        return xe @ np.asarray(self.matrix).T + self.offset

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        J = np.asarray(self.matrix, dtype=float) * np.array([1.0, self.eps, self.eps])
        return np.broadcast_to(J, x.shape[:-1] + (3, 3))


def _magnitudes(a, ncomp):
    a = np.asarray(a, dtype=float)
    if ncomp == 0:
        return np.abs(a)
    return np.sqrt(np.sum(a**2, axis=tuple(range(a.ndim - ncomp, a.ndim))))


def sup_norm(values, order=0, gradient=None, value_axes=0):
    """Discrete ``C^0`` or ``C^1`` norm of nodal samples.

    ``values`` holds one sample per node; its trailing ``value_axes`` axes are
    components (Euclidean/Frobenius magnitude). For ``order=1`` the gradient
    samples carry one extra trailing axis for the derivative direction, unless
    they have the same shape as ``values`` (a 1d field with scalar derivative).
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty grid sample")
    total = float(np.max(_magnitudes(values, value_axes)))
    if order == 0:
        return total
    if order != 1:
        raise ValueError("order must be 0 or 1")
    if gradient is None:
        raise ValueError("order 1 needs gradient samples")
    g = np.asarray(gradient, dtype=float)
    extra = 0 if g.shape == values.shape else 1
    if g.shape[: values.ndim - value_axes] != values.shape[: values.ndim - value_axes]:
        raise ValueError("gradient samples do not match the value samples")
    return total + float(np.max(_magnitudes(g, value_axes + extra)))


@dataclass(frozen=True)
class SampledCurve:
    """Values and first derivatives of a curve on a 1d grid."""

    t: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("grid must be strictly increasing with at least two nodes")
        n = t.size
        if len(self.values) != n or len(self.derivatives) != n:
            raise ValueError("sample counts do not match the grid")


def h1_distance(a: SampledCurve, b: SampledCurve):
    """``sqrt(||a-b||^2_{L2} + ||a'-b'||^2_{L2})`` by the composite trapezoid rule."""
    if a.t.shape != b.t.shape or not np.allclose(a.t, b.t, rtol=0, atol=1e-14):
        raise ValueError("curves are sampled on different grids")

    def sq(x):
        x = np.asarray(x, dtype=float)
        return x**2 if x.ndim == 1 else np.sum(x**2, axis=-1)

    d0 = np.trapezoid(sq(np.asarray(a.values) - np.asarray(b.values)), a.t)
    d1 = np.trapezoid(sq(np.asarray(a.derivatives) - np.asarray(b.derivatives)), a.t)
    return float(np.sqrt(d0 + d1))
