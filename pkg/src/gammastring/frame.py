"""Moving frames along mollified curves, the tailored frame with unit
determinant, and smooth paths on SO(3) and SL(3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.spatial.transform import Rotation

from .curve import PiecewiseAffineCurve, SmoothCurve
from .density import reduce_density
from .errors import FrameError
from .tensor import det3, det_matrix, orthogonal_unit, rotation_about

SQUEEZE = (0.03, 0.97)


def smoothstep(s):
    """Quintic smoothstep ``6s^5 - 15s^4 + 10s^3`` on ``[0, 1]`` (clamped) with two derivatives."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    S = s**3 * (10.0 + s * (-15.0 + 6.0 * s))
    dS = 30.0 * s**2 * (1.0 - s) ** 2
    d2S = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
    return S, dS, d2S


def transition(t, second=False):
    """Cutoff ``psi`` with ``psi = 0`` near 0, ``psi = 1`` near 1 and ``|psi'| <= 2``.

    Returns ``(psi, psi')``, plus ``psi''`` if ``second`` is set.
    """
    a, b = SQUEEZE
    w = b - a
    S, dS, d2S = smoothstep((np.asarray(t, dtype=float) - a) / w)
    if second:
        return S, dS / w, d2S / w**2
    return S, dS / w


def _rows_dot(a, b):
    return np.einsum("...i,...i->...", a, b)


@dataclass
class _Window:
    start: float
    end: float
    spline: CubicHermiteSpline


class MovingFrame:
    """Rotation-minimizing normal ``n`` along a smooth curve and ``b = u' x n / |u' x n|^2``.

    ``n`` is constant on affine pieces. Inside the Bezier windows it is
    transported by double reflection on a fine grid and interpolated by cubic
    Hermite splines whose slopes come from the transport equation
    ``n' = -(n . u'') u' / |u'|^2``; evaluated values are re-projected onto
    the unit circle orthogonal to ``u'``.
    """

    def __init__(self, curve: SmoothCurve, n0=None, samples=800):
        self.curve = curve
        xi0 = curve.derivative(np.array([0.0]))[0]
        n = orthogonal_unit(xi0) if n0 is None else _project(np.asarray(n0, float), xi0)
        self._windows = []
        self._constants = []
        knots = curve.knots
        self._knots = knots
        for piece in curve.pieces:
            if not piece.is_bezier:
                self._constants.append(n)
                continue
            t = np.linspace(piece.start, piece.end, samples + 1)
            x = curve.value(t)
            tang = curve.derivative(t)
            tang = tang / np.linalg.norm(tang, axis=1)[:, None]
            r = np.empty_like(x)
            r[0] = n
            for i in range(samples):
                v1 = x[i + 1] - x[i]
                c1 = v1 @ v1
                rl = r[i] - (2.0 / c1) * (v1 @ r[i]) * v1
                tl = tang[i] - (2.0 / c1) * (v1 @ tang[i]) * v1
                v2 = tang[i + 1] - tl
                c2 = v2 @ v2
                r[i + 1] = rl if c2 < 1e-300 else rl - (2.0 / c2) * (v2 @ rl) * v2
            d1 = curve.derivative(t)
            d2 = curve.derivative(t, 2)
            dr = -(_rows_dot(r, d2) / _rows_dot(d1, d1))[:, None] * d1
            self._windows.append(_Window(piece.start, piece.end, CubicHermiteSpline(t, r, dr, axis=0)))
            self._constants.append(None)
            xi_next = curve.derivative(np.array([piece.end]))[0]
            n = _project(r[-1], xi_next)

    def segment_normals(self):
        """Constant normal on each affine piece, in order."""
        return [c for c in self._constants if c is not None]

    def normal(self, x1):
        """``(n, n', n'')`` at the points ``x1``."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        n = np.empty(x1.shape + (3,))
        dn = np.zeros_like(n)
        d2n = np.zeros_like(n)
        idx = np.clip(np.searchsorted(self._knots, x1, side="right") - 1, 0, len(self._constants) - 1)
        wi = 0
        windows = {}
        for i, c in enumerate(self._constants):
            if c is None:
                windows[i] = self._windows[wi]
                wi += 1
        for i in np.unique(idx):
            m = idx == i
            c = self._constants[i]
            if c is not None:
                n[m] = c
                continue
            t = x1[m]
            d1 = self.curve.derivative(t)
            d2 = self.curve.derivative(t, 2)
            d3 = self.curve.derivative(t, 3)
            v = _project_rows(windows[i].spline(t), d1)
            h = _rows_dot(d1, d1)[:, None]
            a = _rows_dot(v, d2)[:, None]
            dv = -a * d1 / h
            da = _rows_dot(dv, d2)[:, None] + _rows_dot(v, d3)[:, None]
            dh = 2.0 * _rows_dot(d1, d2)[:, None]
            n[m], dn[m] = v, dv
            d2n[m] = -(da * d1 + a * d2) / h + a * d1 * dh / h**2
        return n, dn, d2n

    def binormal(self, x1):
        n = self.normal(x1)[0]
        d1 = self.curve.derivative(np.atleast_1d(x1))
        return _completion(d1, n)


def _project(v, xi):
    xh = xi / np.linalg.norm(xi)
    w = v - (v @ xh) * xh
    nw = np.linalg.norm(w)
    if nw < 1e-12:
        raise FrameError("normal degenerates to the tangent direction")
    return w / nw


def _project_rows(v, d):
    dh = d / np.linalg.norm(d, axis=-1)[..., None]
    w = v - _rows_dot(v, dh)[..., None] * dh
    return w / np.linalg.norm(w, axis=-1)[..., None]


def _completion(a, n):
    g = np.cross(a, n)
    h = _rows_dot(g, g)
    if np.any(h < 1e-24):
        raise FrameError("|u' x n| vanishes")
    return g / h[..., None]


def normal_field(curve: SmoothCurve, samples=800) -> MovingFrame:
    return MovingFrame(curve, samples=samples)


def optimal_cross_sections(curve: PiecewiseAffineCurve, model, normals=None, opts=None):
    """Optimal cross sections ``A`` per segment, ``det(xi | A) = 1``.

    For frame-indifferent models the optimum is rotated about ``xi`` so that
    the part of ``A e1`` orthogonal to ``xi`` points along the given normal;
    this leaves ``W`` unchanged and shortens the frame transition.
    """
    out = []
    for n, xi in enumerate(curve.slopes):
        A = reduce_density(model, xi, opts).A
        if normals is not None and model.frame_indifferent:
            xh = xi / np.linalg.norm(xi)
            m = A[:, 0] - (A[:, 0] @ xh) * xh
            e = normals[n]
            angle = math.atan2(np.cross(m, e) @ xh, m @ e)
            A = rotation_about(xh, angle) @ A
        out.append(A)
    return out


@dataclass(frozen=True)
class FrameFields:
    """Tailored frame and curve derivatives at a batch of ``x1`` points."""

    du: np.ndarray
    d2u: np.ndarray
    d3u: np.ndarray
    n: np.ndarray
    dn: np.ndarray
    d2n: np.ndarray
    b: np.ndarray
    db: np.ndarray
    d2b: np.ndarray


@dataclass(frozen=True)
class _Segment:
    start: float
    end: float
    left: bool
    right: bool
    xi: np.ndarray
    A: np.ndarray
    normal: np.ndarray
    delta: float
    eta: float

    def ramp(self, x, width, offset):
        """Cutoff rising over ``[start+offset, start+offset+width]`` and falling symmetrically at the end.

        Sides at the ends of the curve do not ramp. Returns the cutoff and two derivatives.
        """
        one, zero = np.ones_like(x), np.zeros_like(x)
        A, dA, d2A = smoothstep((x - self.start - offset) / width) if self.left else (one, zero, zero)
        B, dB, d2B = smoothstep((self.end - offset - x) / width) if self.right else (one, zero, zero)
        dA, d2A = dA / width, d2A / width**2
        dB, d2B = -dB / width, d2B / width**2
        return A * B, dA * B + A * dB, d2A * B + 2.0 * dA * dB + A * d2B

    @property
    def inner(self):
        """The window ``I_{delta,eta}`` where the frame equals ``(A e1, A e2)``."""
        a = self.start + (0.5 * (self.delta + self.eta) if self.left else 0.0)
        b = self.end - (0.5 * (self.delta + self.eta) if self.right else 0.0)
        return a, b

    @property
    def core(self):
        """The window ``I_delta`` where ``n = A e1``."""
        a = self.start + (0.5 * self.delta if self.left else 0.0)
        b = self.end - (0.5 * self.delta if self.right else 0.0)
        return a, b


class TailoredFrame:
    """Frame ``(nbar, bbar)`` along a mollified curve with ``det(u'|nbar|bbar) = 1``.

    Off the affine parts it is the moving frame. On each affine part ``nbar``
    turns (about the slope) and stretches from the moving normal to ``A e1``
    over a ramp of length ``delta/2``; ``bbar`` adds ``psi (A e2 - bhat)`` with a
    cutoff ``psi`` that ramps up over ``eta/2`` inside ``I_delta``.
    """

    def __init__(self, curve: SmoothCurve, frame: MovingFrame, sections, delta=None, eta=None,
                 check_samples=10000):
        src = curve.source
        if src is None:
            raise FrameError("curve does not record its piecewise-affine source")
        if len(sections) != src.n_segments:
            raise FrameError("one cross section per segment is required")
        self.curve = curve
        self.frame = frame
        self.sections = [np.asarray(A, dtype=float) for A in sections]
        t = src.breakpoints
        N = src.n_segments
        normals = frame.segment_normals()
        segs = []
        for n in range(N):
            a = t[n] + (curve.eta if n > 0 else 0.0)
            b = t[n + 1] - (curve.eta if n < N - 1 else 0.0)
            length = b - a
            d = length / 8.0 if delta is None else float(delta)
            e = d / 4.0 if eta is None else float(eta)
            left, right = n > 0, n < N - 1
            need = (left + right) * 0.5 * (d + e)
            if not (d > 0 and e > 0 and need < length):
                raise FrameError(f"nested windows do not fit in segment {n}", x1=float(a))
            segs.append(_Segment(a, b, left, right, src.slopes[n], self.sections[n],
                                 normals[n], d, e))
        self.segments = segs
        l = curve.speed_bounds[0]
        self.R = 2.0 * max(1.0, max(np.linalg.norm(A[:, 0]) for A in self.sections))
        self.r = 0.5 * min(l, min(np.linalg.norm(np.cross(s.xi, s.A[:, 0])) for s in segs))
        self._bounds = np.array([s.start for s in segs] + [segs[-1].end])
        if check_samples:
            self.check(np.linspace(0.0, curve.length, check_samples))

    def _blend(self, seg, S):
        """Direction/magnitude blend from ``normal`` (S=0) to ``A e1`` (S=1) and two S-derivatives."""
        xh = seg.xi / np.linalg.norm(seg.xi)
        m = seg.A[:, 0]
        par = m @ xh
        mp = m - par * xh
        rho1 = np.linalg.norm(mp)
        e = seg.normal
        f = np.cross(xh, e)
        theta = math.atan2(mp @ f, mp @ e)
        S = S[:, None]
        c, s = np.cos(theta * S), np.sin(theta * S)
        rho = 1.0 + (rho1 - 1.0) * S
        radial = c * e + s * f
        tang = -s * e + c * f
        g = par * S * xh + rho * radial
        dg = par * xh + (rho1 - 1.0) * radial + rho * theta * tang
        d2g = 2.0 * (rho1 - 1.0) * theta * tang - rho * theta**2 * radial
        return g, dg, d2g

    def fields(self, x1) -> FrameFields:
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        du = self.curve.derivative(x1)
        d2u = self.curve.derivative(x1, 2)
        d3u = self.curve.derivative(x1, 3)
        n, dn, d2n = self.frame.normal(x1)
        psi = np.zeros(x1.shape)
        dpsi = np.zeros(x1.shape)
        d2psi = np.zeros(x1.shape)
        corr = np.zeros(x1.shape + (3,))
        for seg in self.segments:
            m = (x1 >= seg.start) & (x1 <= seg.end)
            if not np.any(m):
                continue
            xs = x1[m]
            S, dS, d2S = seg.ramp(xs, 0.5 * seg.delta, 0.0)
            g, dg, d2g = self._blend(seg, S)
            n[m] = g
            dn[m] = dg * dS[:, None]
            d2n[m] = d2g * dS[:, None] ** 2 + dg * d2S[:, None]
            P, dP, d2P = seg.ramp(xs, 0.5 * seg.eta, 0.5 * seg.delta)
            psi[m], dpsi[m], d2psi[m] = P, dP, d2P
            bhat = _completion(seg.xi, seg.A[:, 0])
            corr[m] = seg.A[:, 1] - bhat
        g = np.cross(du, n)
        dg = np.cross(d2u, n) + np.cross(du, dn)
        d2g = np.cross(d3u, n) + 2.0 * np.cross(d2u, dn) + np.cross(du, d2n)
        h = _rows_dot(g, g)[:, None]
        dh = 2.0 * _rows_dot(g, dg)[:, None]
        d2h = 2.0 * (_rows_dot(dg, dg) + _rows_dot(g, d2g))[:, None]
        b = g / h + psi[:, None] * corr
        db = dg / h - g * dh / h**2 + dpsi[:, None] * corr
        d2b = (d2g / h - 2.0 * dg * dh / h**2 - g * d2h / h**2 + 2.0 * g * dh**2 / h**3
               + d2psi[:, None] * corr)
        return FrameFields(du, d2u, d3u, n, dn, d2n, b, db, d2b)

    def determinant(self, x1):
        f = self.fields(x1)
        return det3(f.du, f.n, f.b)

    def check(self, x1, det_tol=1e-9):
        f = self.fields(x1)
        det = det3(f.du, f.n, f.b)
        bad = np.abs(det - 1.0) > det_tol
        if np.any(bad):
            raise FrameError("det(u'|n|b) deviates from 1", x1=float(x1[np.argmax(bad)]))
        big = np.linalg.norm(f.n, axis=1) >= self.R
        if np.any(big):
            raise FrameError("normal leaves the admissible ball", x1=float(x1[np.argmax(big)]))
        thin = np.linalg.norm(np.cross(f.du, f.n), axis=1) <= self.r
        if np.any(thin):
            raise FrameError("normal enters the forbidden cylinder", x1=float(x1[np.argmax(thin)]))
        return float(np.max(np.abs(det - 1.0)))

    def inner_windows(self):
        return [s.inner for s in self.segments]

    def matrix(self, x1):
        """``(u' | nbar | bbar)`` at ``x1``."""
        f = self.fields(x1)
        return np.stack([f.du, f.n, f.b], axis=-1)

    def bound_constant(self, n=4000):
        """``max |(nbar|bbar)|^2 / (L^2 + l^-2 + 1)`` over dense samples."""
        f = self.fields(np.linspace(0.0, self.curve.length, n))
        sq = np.sum(f.n**2, axis=1) + np.sum(f.b**2, axis=1)
        c, C = self.curve.speed_bounds
        return float(sq.max() / (C**2 + c**-2 + 1.0))


def tailored_frame(curve: SmoothCurve, frame: MovingFrame, sections, delta=None, eta=None) -> TailoredFrame:
    return TailoredFrame(curve, frame, sections, delta, eta)


def _check_member(F, group, tol=1e-10):
    F = np.asarray(F, dtype=float)
    if F.shape != (3, 3) or not np.all(np.isfinite(F)):
        raise ValueError("endpoint must be a finite 3x3 matrix")
    if abs(det_matrix(F) - 1.0) > tol:
        raise ValueError(f"endpoint has det {det_matrix(F)!r}, not 1")
    if group == "SO3" and np.max(np.abs(F.T @ F - np.eye(3))) > tol:
        raise ValueError("endpoint is not orthogonal")
    if group not in ("SO3", "SL3"):
        raise ValueError("group must be 'SO3' or 'SL3'")
    return F


class ManifoldPath:
    """Smooth path ``P: [0,1] -> M`` between two matrices of ``SO(3)`` or ``SL(3)``.

    With ``F0^{-1} F1 = Q S`` (polar decomposition, ``Q`` a rotation, ``S``
    symmetric positive definite with ``det S = 1``) the path is
    ``P(t) = F0 exp(t log Q) exp(t log S)``. It stays in ``SL(3)``; for
    rotations ``S = I`` and it is the ``SO(3)`` geodesic.
    """

    def __init__(self, F0, F1, group="SO3"):
        self.group = group
        self.F0 = _check_member(F0, group)
        self.F1 = _check_member(F1, group)
        G = np.linalg.solve(self.F0, self.F1)
        U, s, Vt = np.linalg.svd(G)
        Q = U @ Vt
        if np.linalg.det(Q) < 0:
            raise ValueError("endpoints lie on different components")
        S = Vt.T @ np.diag(s) @ Vt
        self.rotvec = Rotation.from_matrix(Q).as_rotvec()
        lam, V = np.linalg.eigh(0.5 * (S + S.T))
        self._log_eig = np.log(lam) - np.mean(np.log(lam))
        self._V = V
        w = self.rotvec
        self._Wq = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
        self._Ws = V @ np.diag(self._log_eig) @ V.T

    def _factors(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        E1 = Rotation.from_rotvec(t[:, None] * self.rotvec).as_matrix()
        E2 = np.einsum("ij,tj,kj->tik", self._V, np.exp(t[:, None] * self._log_eig), self._V)
        return E1, E2

    def value(self, t):
        E1, E2 = self._factors(t)
        return self.F0 @ E1 @ E2

    def derivative(self, t, order=1):
        E1, E2 = self._factors(t)
        Wq, Ws = self._Wq, self._Ws
        if order == 0:
            return self.F0 @ E1 @ E2
        if order == 1:
            return self.F0 @ E1 @ (Wq @ E2 + E2 @ Ws)
        if order == 2:
            return self.F0 @ E1 @ (Wq @ Wq @ E2 + 2.0 * Wq @ E2 @ Ws + E2 @ Ws @ Ws)
        raise ValueError("order must be 0, 1 or 2")

    @property
    def speed(self):
        """``|P'|`` for geodesic rotation paths (constant in ``t``)."""
        return float(np.linalg.norm(self.F0 @ self._Wq))


def manifold_path(F0, F1, group="SO3") -> ManifoldPath:
    return ManifoldPath(F0, F1, group)
