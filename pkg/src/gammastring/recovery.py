"""Recovery deformations of thin tubes and the inner perturbation that makes
them exactly incompressible.

Two deformation families are provided: the tube ``v = u + eps x2 nbar +
eps x3 bbar`` around a mollified midline, and the path deformation that
switches between constant gradients along smooth paths in SO(3) or SL(3).
Both expose, for fixed ``(x1, x2)``, the rescaled determinant as an affine
function of ``x3`` (an :class:`AffineFiber`), which is what the inner
perturbation integrates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curve import PiecewiseAffineCurve, SmoothCurve
from .errors import ConditioningError, DomainEscapeError, GammaError, WindowError
from .frame import TailoredFrame, manifold_path, transition
from .tensor import BoxGrid, E1, check_domain, det3, det_matrix, sup_norm

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class AffineFiber:
    """``det(s) = c0 + c1 s`` and ``grad det(s) = g0 + g1 s`` along fibers ``x3 = s``."""

    c0: np.ndarray
    c1: np.ndarray
    g0: np.ndarray
    g1: np.ndarray

    def det(self, s):
        return self.c0 + self.c1 * s

    def grad(self, s):
        return self.g0 + self.g1 * np.asarray(s)[..., None]


def _split(x):
    x = np.asarray(x, dtype=float)
    return x, x[..., 0], x[..., 1], x[..., 2]


class _Deformation:
    """Shared evaluation helpers; subclasses provide ``_parts`` and ``fiber``."""

    eps: float
    domain: BoxGrid

    def rescaled(self, x):
        """``grad^eps v`` without the domain check."""
        return self._parts(np.asarray(x, dtype=float))[1]

    def jacobian(self, x):
        G = np.array(self.rescaled(x), copy=True)
        G[..., :, 1:] *= self.eps
        return G

    def value(self, x):
        return self._parts(np.asarray(x, dtype=float))[0]

    def det(self, x):
        x = np.asarray(x, dtype=float)
        return self.fiber(x[..., 0], x[..., 1]).det(x[..., 2])

    def det_grad(self, x):
        x = np.asarray(x, dtype=float)
        return self.fiber(x[..., 0], x[..., 1]).grad(x[..., 2])

    def det_error(self, grid: BoxGrid | None = None, order=1):
        """``||det grad^eps v - 1||`` in ``C^0`` or ``C^1`` over the nodes of ``Q_L'``."""
        grid = grid or BoxGrid(length=self.domain.length)
        x = grid.nodes(outer=True).reshape(-1, 3)
        d = self.det(x) - 1.0
        if order == 0:
            return sup_norm(d)
        return sup_norm(d, order=1, gradient=self.det_grad(x), value_axes=0)


class TubeDeformation(_Deformation):
    """``v(x) = u(x1) + eps x2 nbar(x1) + eps x3 bbar(x1)``.

    ``grad^eps v = (u' + eps x2 nbar' + eps x3 bbar' | nbar | bbar)``.
    """

    def __init__(self, curve: SmoothCurve, frame: TailoredFrame, eps, domain: BoxGrid | None = None):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.curve = curve
        self.frame = frame
        self.eps = float(eps)
        self.domain = domain or BoxGrid(length=curve.length)

    def _parts(self, x):
        x, x1, x2, x3 = _split(x)
        flat = x1.ravel()
        f = self.frame.fields(flat)
        e = self.eps
        a2, a3 = x2.reshape(-1, 1), x3.reshape(-1, 1)
        val = self.curve.value(flat) + e * a2 * f.n + e * a3 * f.b
        G1 = f.du + e * a2 * f.dn + e * a3 * f.db
        G = np.stack([G1, f.n, f.b], axis=-1)
        return val.reshape(x.shape), G.reshape(x.shape + (3,))

    def fiber(self, x1, x2) -> AffineFiber:
        x1 = np.asarray(x1, dtype=float)
        shape = x1.shape
        f = self.frame.fields(x1.ravel())
        e = self.eps
        a2 = np.asarray(x2, dtype=float).reshape(-1, 1)
        base = f.du + e * a2 * f.dn
        c0 = det3(base, f.n, f.b)
        dn_nb = det3(f.dn, f.n, f.b)
        c1 = e * det3(f.db, f.n, f.b)
        g0 = np.stack([
            det3(f.d2u + e * a2 * f.d2n, f.n, f.b) + det3(base, f.dn, f.b) + det3(base, f.n, f.db),
            e * dn_nb,
            c1,
        ], axis=-1)
        g1 = np.stack([
            e * det3(f.d2b, f.n, f.b) + e * det3(f.db, f.dn, f.b),
            np.zeros_like(c1),
            np.zeros_like(c1),
        ], axis=-1)
        return AffineFiber(c0.reshape(shape), c1.reshape(shape),
                           g0.reshape(shape + (3,)), g1.reshape(shape + (3,)))

    def breakpoints(self):
        """``x1`` locations where the integrand changes its closed form."""
        pts = set(self.curve.knots.tolist())
        for seg in self.frame.segments:
            a, b = seg.core
            c, d = seg.inner
            pts.update([seg.start, seg.end, a, b, c, d])
        return np.array(sorted(pts))


def build_tube(curve: SmoothCurve, frame: TailoredFrame, eps, domain=None) -> TubeDeformation:
    return TubeDeformation(curve, frame, eps, domain)


class _PathIntegral:
    """``int_0^s P(psi(sigma)) e1 dsigma`` for ``s`` in ``[0, 1]``."""

    def __init__(self, path, panels=48, order=12):
        a, b = 0.03, 0.97
        self.path = path
        self.edges = np.concatenate([[0.0], np.linspace(a, b, panels + 1), [1.0]])
        self.xg, self.wg = np.polynomial.legendre.leggauss(order)
        cum = [0.0 * E1]
        for lo, hi in zip(self.edges[:-1], self.edges[1:]):
            cum.append(cum[-1] + self._panel(np.array([lo]), np.array([hi]))[0])
        self.cum = np.array(cum)

    def _integrand(self, s):
        psi = transition(s)[0]
        return self.path.value(psi.ravel())[:, :, 0].reshape(s.shape + (3,))

    def _panel(self, lo, hi):
        half = 0.5 * (hi - lo)
        s = 0.5 * (hi + lo)[:, None] + half[:, None] * self.xg
        vals = self._integrand(s)
        return half[:, None] * np.einsum("k,nki->ni", self.wg, vals)

    def __call__(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        flat = s.ravel()
        k = np.clip(np.searchsorted(self.edges, flat, side="right") - 1, 0, len(self.edges) - 2)
        out = self.cum[k] + self._panel(self.edges[k], flat)
        return out.reshape(s.shape + (3,))


class PathDeformation(_Deformation):
    """Piecewise deformation with constant gradients ``F_n = (xi_n | A_n)`` on segments.

    On each window ``[t_n, t_n + eps^beta]`` the gradient follows a manifold
    path, ``P_eps(x1) = P(psi((x1 - t_n)/eps^beta))``, and

        v = int_{t_n}^{x1} P_eps e1 + P_eps(x1) (x_eps - x1 e1) + d_n,

    with ``x_eps = (x1, eps x2, eps x3)``. Offsets make ``v`` continuous.
    """

    def __init__(self, curve: PiecewiseAffineCurve, sections, group, beta, eps, domain=None):
        if not eps > 0:
            raise ValueError("eps must be positive")
        if not 0.0 < beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        self.curve = curve
        self.eps = float(eps)
        self.beta = float(beta)
        self.group = group
        self.domain = domain or BoxGrid(length=curve.length)
        self.width = self.eps**self.beta
        t = curve.breakpoints
        self.F = [np.column_stack([xi, A]) for xi, A in zip(curve.slopes, sections)]
        for n in range(1, curve.n_segments):
            if self.width >= t[n + 1] - t[n]:
                raise WindowError(f"window of width {self.width:.3g} does not fit after t={t[n]}")
        self.paths = []
        self.integrals = []
        for n in range(1, curve.n_segments):
            P = manifold_path(self.F[n - 1], self.F[n], group)
            if np.max(np.abs(P.value(1.0)[0] - self.F[n])) > 1e-10:
                raise GammaError("manifold path misses its endpoint")
            self.paths.append(P)
            self.integrals.append(_PathIntegral(P))
        # offsets b_n on segments, d_n at window starts
        self.b = [np.asarray(curve.values[0], dtype=float).copy()]
        self.d = []
        for n in range(1, curve.n_segments):
            tn = t[n]
            d = self.F[n - 1][:, 0] * tn + self.b[n - 1]
            tau = tn + self.width
            shift = self.width * self.integrals[n - 1](np.array([1.0]))[0]
            self.d.append(d)
            self.b.append(shift + d - self.F[n][:, 0] * tau)

    @property
    def windows(self):
        t = self.curve.breakpoints
        return [(t[n], t[n] + self.width) for n in range(1, self.curve.n_segments)]

    def _locate(self, x1):
        """Segment index and window index (or -1) per point."""
        t = self.curve.breakpoints
        seg = np.clip(np.searchsorted(t, x1, side="right") - 1, 0, self.curve.n_segments - 1)
        win = np.where((seg >= 1) & (x1 - t[seg] < self.width), seg - 1, -1)
        return seg, win

    def _window_matrices(self, n, x1):
        """``P_eps, P_eps', P_eps''`` on window ``n`` (0-based)."""
        P = self.paths[n]
        s = (x1 - self.curve.breakpoints[n + 1]) / self.width
        psi, dpsi, d2psi = transition(s, second=True)
        w = self.width
        M0 = P.value(psi)
        M1 = P.derivative(psi, 1)
        M2 = P.derivative(psi, 2)
        dP = M1 * (dpsi / w)[:, None, None]
        d2P = M2 * (dpsi**2 / w**2)[:, None, None] + M1 * (d2psi / w**2)[:, None, None]
        return s, M0, dP, d2P

    def _parts(self, x):
        x, x1, x2, x3 = _split(x)
        flat = x.reshape(-1, 3)
        f1 = flat[:, 0]
        seg, win = self._locate(f1)
        e = self.eps
        xe = flat * np.array([1.0, e, e])
        val = np.empty_like(flat)
        G = np.empty(flat.shape + (3,))
        for n in np.unique(seg):
            m = (seg == n) & (win < 0)
            if np.any(m):
                val[m] = xe[m] @ self.F[n].T + self.b[n]
                G[m] = self.F[n]
        for n in np.unique(win[win >= 0]):
            m = win == n
            s, P, dP, _ = self._window_matrices(n, f1[m])
            y = xe[m] - f1[m, None] * E1
            val[m] = (self.width * self.integrals[n](s)
                      + np.einsum("nij,nj->ni", P, y) + self.d[n])
            yy = flat[m] * np.array([0.0, 1.0, 1.0])
            G[m] = P
            G[m, :, 0] += e * np.einsum("nij,nj->ni", dP, yy)
        return val.reshape(x.shape), G.reshape(x.shape + (3,))

    def fiber(self, x1, x2) -> AffineFiber:
        x1 = np.asarray(x1, dtype=float)
        shape = x1.shape
        f1 = x1.ravel()
        f2 = np.broadcast_to(np.asarray(x2, dtype=float), shape).ravel()
        e = self.eps
        c0 = np.ones(f1.size)
        c1 = np.zeros(f1.size)
        g0 = np.zeros((f1.size, 3))
        g1 = np.zeros((f1.size, 3))
        _, win = self._locate(f1)
        for n in np.unique(win[win >= 0]):
            m = win == n
            _, P, dP, d2P = self._window_matrices(n, f1[m])
            Pinv = np.linalg.inv(P)
            detP = det_matrix(P)
            K = Pinv @ dP
            dK = -K @ K + Pinv @ d2P
            c0[m] = detP * (1.0 + e * K[:, 0, 1] * f2[m])
            c1[m] = detP * e * K[:, 0, 2]
            g0[m, 0] = detP * e * dK[:, 0, 1] * f2[m]
            g0[m, 1] = detP * e * K[:, 0, 1]
            g0[m, 2] = detP * e * K[:, 0, 2]
            g1[m, 0] = detP * e * dK[:, 0, 2]
        return AffineFiber(c0.reshape(shape), c1.reshape(shape),
                           g0.reshape(shape + (3,)), g1.reshape(shape + (3,)))

    def in_window(self, x1):
        return self._locate(np.asarray(x1, dtype=float))[1] >= 0

    def breakpoints(self):
        pts = set(self.curve.breakpoints.tolist())
        for a, b in self.windows:
            w = b - a
            pts.update([a, b, a + 0.03 * w, a + 0.97 * w])
        return np.array(sorted(pts))


def build_path_deformation(curve: PiecewiseAffineCurve, sections, group, beta, eps, domain=None):
    return PathDeformation(curve, sections, group, beta, eps, domain)


def _rk4(fiber, phi, s0, s1, steps, lower):
    """Integrate ``dphi/ds = 1/det(phi)`` from ``s0`` to ``s1`` (arrays) in ``steps`` RK4 steps."""
    h = (s1 - s0) / steps
    low = np.inf

    def rhs(p):
        d = fiber.det(p)
        return 1.0 / d, np.min(d, initial=np.inf)

    for _ in range(steps):
        k1, m1 = rhs(phi)
        k2, m2 = rhs(phi + 0.5 * h * k1)
        k3, m3 = rhs(phi + 0.5 * h * k2)
        k4, m4 = rhs(phi + h * k3)
        low = min(low, m1, m2, m3, m4)
        if low < lower:
            raise ConditioningError(f"det grad^eps v dropped to {low:.3g} < {lower}")
        phi = phi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.any(np.abs(phi) > 1.0):
            raise DomainEscapeError("phi left the interval J' = [-1, 1]; eps too large")
    return phi, low


def _leibniz(fiber, phi):
    """``(d1 phi, d2 phi, d3 phi)`` and the integral-equation residual ``int_0^phi det - x3``."""
    half = 0.5 * phi
    s = half[..., None] * (GL_NODES + 1.0)
    c0, c1 = fiber.c0[..., None], fiber.c1[..., None]
    det_s = c0 + c1 * s
    grad_s = fiber.g0[..., None, :] + fiber.g1[..., None, :] * s[..., None]
    int_det = half * np.einsum("k,...k->...", GL_WEIGHTS, det_s)
    int_grad = half[..., None] * np.einsum("k,...ki->...i", GL_WEIGHTS, grad_s)
    d_end = fiber.det(phi)
    d1 = -int_grad[..., 0] / d_end
    d2 = -int_grad[..., 1] / d_end
    d3 = 1.0 / d_end
    return d1, d2, d3, int_det


@dataclass
class PerturbationField:
    """Nodal values of ``phi_eps`` and its first derivatives on a grid over ``Q_L``."""

    grid: BoxGrid
    deformation: object
    phi: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    gamma: float
    step: float
    lower_bound: float
    residual: float
    eps: float = field(init=False)

    def __post_init__(self):
        self.eps = self.deformation.eps

    def c1_error(self):
        """``||phi - x3||_{C^1}`` over the grid nodes."""
        x3 = self.grid.nodes()[..., 2]
        grad = np.stack([self.d1, self.d2, self.d3 - 1.0], axis=-1)
        return sup_norm(self.phi - x3, order=1, gradient=grad)

    def component_errors(self):
        x3 = self.grid.nodes()[..., 2]
        return {
            "d3": float(np.max(np.abs(self.d3 - 1.0))),
            "phi": float(np.max(np.abs(self.phi - x3))),
            "d1": float(np.max(np.abs(self.d1))),
            "d2": float(np.max(np.abs(self.d2))),
        }

    def evaluate(self, x):
        """``phi`` and ``(d1, d2, d3) phi`` at arbitrary points of ``Q_L``.

        Every point is integrated from ``x3 = 0`` with the same number of RK4
        steps, so the result is smooth in ``x``.
        """
        x = np.asarray(x, dtype=float)
        fib = self.deformation.fiber(x[..., 0], x[..., 1])
        x3 = x[..., 2]
        steps = max(1, math.ceil(float(np.max(np.abs(x3), initial=0.0)) / self.step))
        phi, _ = _rk4(fib, np.zeros_like(x3), np.zeros_like(x3), x3, steps, 0.0)
        d1, d2, d3, _ = _leibniz(fib, phi)
        return phi, np.stack([d1, d2, d3], axis=-1)


def inner_perturbation(deformation, grid: BoxGrid | None = None, gamma=1.0, step=1e-3,
                       lower=0.5, residual_tol=1e-9) -> PerturbationField:
    """Solve ``d3 phi = 1/det grad^eps v(x1, x2, phi)``, ``phi(x1, x2, 0) = 0``.

    Each ``(x1, x2)`` fiber is integrated with classical RK4 from ``x3 = 0``
    towards both ends of ``J``; ``d1 phi`` and ``d2 phi`` follow from
    differentiating ``int_0^phi det ds = x3``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    grid = grid or BoxGrid(length=deformation.domain.length)
    ax1, ax2, ax3 = (grid.axis(i) for i in range(3))
    X1, X2 = np.meshgrid(ax1, ax2, indexing="ij")
    fib = deformation.fiber(X1, X2)
    phi = np.empty(X1.shape + (ax3.size,))
    low = np.inf
    zero = int(np.argmin(np.abs(ax3)))
    if abs(ax3[zero]) > 1e-14:
        raise ValueError("the x3 axis must contain 0")
    phi[..., zero] = 0.0
    for direction in (1, -1):
        idx = range(zero + direction, ax3.size if direction > 0 else -1, direction)
        cur = np.zeros(X1.shape)
        prev = 0.0
        for i in idx:
            steps = max(1, math.ceil(abs(ax3[i] - prev) / step))
            cur, l = _rk4(fib, cur, np.full(X1.shape, prev), np.full(X1.shape, ax3[i]), steps, lower)
            low = min(low, l)
            phi[..., i] = cur
            prev = ax3[i]
    fib3 = _broadcast_fiber(fib, ax3.size)
    d1, d2, d3, int_det = _leibniz(fib3, phi)
    residual = float(np.max(np.abs(int_det - ax3)))
    if residual > residual_tol:
        raise GammaError(f"integral equation residual {residual:.3e} exceeds {residual_tol}")
    if np.any(d3 <= 0):
        raise ConditioningError("phi is not increasing in x3")
    return PerturbationField(grid, deformation, phi, d1, d2, d3, float(gamma), float(step),
                             float(low), residual)


def _broadcast_fiber(fib, n3):
    return AffineFiber(np.repeat(fib.c0[..., None], n3, axis=-1),
                       np.repeat(fib.c1[..., None], n3, axis=-1),
                       np.repeat(fib.g0[..., None, :], n3, axis=-2),
                       np.repeat(fib.g1[..., None, :], n3, axis=-2))


class ComposedField:
    """``u_eps = v_eps o Phi_eps`` with ``Phi_eps(x) = (x1, x2, phi_eps(x))``.

    Columns of ``grad^eps u`` are ``g1 + eps g3 d1phi``, ``g2 + g3 d2phi`` and
    ``g3 d3phi`` in terms of the columns ``g`` of ``grad^eps v`` at ``Phi(x)``.
    """

    def __init__(self, deformation, perturbation: PerturbationField):
        if perturbation.deformation is not deformation:
            raise ValueError("perturbation was built from a different deformation")
        self.deformation = deformation
        self.perturbation = perturbation
        self.eps = deformation.eps
        self.domain = deformation.domain

    def _mapped(self, x):
        x = np.asarray(x, dtype=float)
        phi, dphi = self.perturbation.evaluate(x)
        y = x.copy()
        y[..., 2] = phi
        return y, dphi

    def value(self, x):
        y, _ = self._mapped(x)
        return self.deformation.value(y)

    def rescaled(self, x):
        y, dphi = self._mapped(x)
        G = self.deformation.rescaled(y)
        g1, g2, g3 = G[..., :, 0], G[..., :, 1], G[..., :, 2]
        e = self.eps
        c1 = g1 + e * g3 * dphi[..., 0:1]
        c2 = g2 + g3 * dphi[..., 1:2]
        c3 = g3 * dphi[..., 2:3]
        return np.stack([c1, c2, c3], axis=-1)

    def jacobian(self, x):
        G = np.array(self.rescaled(x), copy=True)
        G[..., :, 1:] *= self.eps
        return G

    def det(self, x):
        """``det grad^eps v(Phi) * d3phi`` -- one up to the accuracy of ``phi``."""
        y, dphi = self._mapped(x)
        return self.deformation.det(y) * dphi[..., 2]

    def breakpoints(self):
        return self.deformation.breakpoints()


def compose(deformation, perturbation: PerturbationField) -> ComposedField:
    return ComposedField(deformation, perturbation)


def interior_nodes(grid: BoxGrid):
    return grid.nodes()[1:-1, 1:-1, 1:-1].reshape(-1, 3)


def fd_rescaled_gradient(field_, x, fd_step=1e-4):
    """Central-difference rescaled gradient from point values only."""
    x = check_domain(field_, x)
    cols = []
    for i in range(3):
        dx = np.zeros(3)
        dx[i] = fd_step
        cols.append((field_.value(x + dx) - field_.value(x - dx)) / (2.0 * fd_step))
    G = np.stack(cols, axis=-1)
    G[..., :, 1:] /= field_.eps
    return G


def det_check(field_, fd_step=1e-4, grid: BoxGrid | None = None, mask=None, chunk=20000):
    """Max ``|det - 1|`` of the finite-difference rescaled gradient over interior nodes.

    ``mask`` optionally selects nodes (boolean function of the node array).
    """
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    grid = grid or BoxGrid(length=field_.domain.length)
    x = interior_nodes(grid)
    if mask is not None:
        x = x[mask(x)]
    worst = 0.0
    for k in range(0, len(x), chunk):
        G = fd_rescaled_gradient(field_, x[k:k + chunk], fd_step)
        worst = max(worst, float(np.max(np.abs(det_matrix(G) - 1.0), initial=0.0)))
    return worst


def write_field(field_, path, grid: BoxGrid | None = None):
    """Text dump ``x1 x2 x3 u1 u2 u3 det`` on the grid nodes."""
    grid = grid or BoxGrid(length=field_.domain.length)
    x = grid.nodes().reshape(-1, 3)
    u = field_.value(x)
    det = field_.det(x) if hasattr(field_, "det") else det_matrix(field_.rescaled(x))
    rows = np.column_stack([x, u, det])
    np.savetxt(path, rows, fmt="%.17g", header="x1 x2 x3 u1 u2 u3 det")
