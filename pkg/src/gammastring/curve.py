"""Midline curves: piecewise-affine curves, loops at reversals, Bezier
mollification and laminate relaxation of slopes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from .errors import RangeError
from .tensor import SampledCurve, orthogonal_unit

ANTIPARALLEL_TOL = 1e-9


def bernstein(q, p, t, order=0):
    """Bernstein polynomial ``b_{q,p}`` or its derivative of the given order at ``t``.

    ``b_{q,p}`` is zero for ``q < 0`` or ``q > p``. Derivatives use the
    alternating sum over lower-degree polynomials.
    """
    if p < 0 or order < 0:
        raise ValueError("degree and order must be non-negative")
    if order > p:
        raise ValueError(f"derivative order {order} exceeds degree {p}")
    t = np.asarray(t, dtype=float)
    if order == 0:
        if q < 0 or q > p:
            return np.zeros_like(t)
        return comb(p, q, exact=True) * t**q * (1.0 - t) ** (p - q)
    out = np.zeros_like(t)
    j = order
    for m in range(max(0, q - p + j), min(j, q) + 1):
        out = out + (-1) ** (m + j) * comb(j, m, exact=True) * bernstein(q - m, p - j, t)
    return math.perm(p, j) * out


def _antiparallel(a, b, tol=ANTIPARALLEL_TOL):
    """True when the angle between ``a`` and ``b`` is within ``tol`` of pi."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    c = np.dot(a, b) / (na * nb)
    return c < 0 and math.atan2(np.linalg.norm(np.cross(a, b)) / (na * nb), -c) <= tol


@dataclass(frozen=True)
class PiecewiseAffineCurve:
    """Continuous curve, affine between ``breakpoints`` with nodal ``values``."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("need at least two breakpoints")
        if abs(t[0]) > 0 or np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        if v.shape != (t.size, 3):
            raise ValueError("one 3-vector per breakpoint")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite curve values")
        object.__setattr__(self, "breakpoints", t)
        object.__setattr__(self, "values", v)
        if np.any(np.linalg.norm(self.slopes, axis=1) == 0):
            raise ValueError("slopes must be non-zero")

    @classmethod
    def from_slopes(cls, slopes, lengths, origin=(0.0, 0.0, 0.0)):
        slopes = np.atleast_2d(np.asarray(slopes, dtype=float))
        lengths = np.broadcast_to(np.asarray(lengths, dtype=float), (len(slopes),))
        t = np.concatenate([[0.0], np.cumsum(lengths)])
        steps = slopes * lengths[:, None]
        v = np.asarray(origin, dtype=float) + np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])
        return cls(t, v)

    @property
    def length(self):
        return float(self.breakpoints[-1])

    @property
    def n_segments(self):
        return self.breakpoints.size - 1

    @property
    def slopes(self):
        return np.diff(self.values, axis=0) / np.diff(self.breakpoints)[:, None]

    @property
    def interval_lengths(self):
        return np.diff(self.breakpoints)

    def segment_index(self, t):
        t = np.asarray(t, dtype=float)
        return np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, self.n_segments - 1)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        i = self.segment_index(t)
        return self.values[i] + (t - self.breakpoints[i])[..., None] * self.slopes[i]

    def derivative(self, t):
        return self.slopes[self.segment_index(t)]

    def sample(self, t):
        t = np.asarray(t, dtype=float)
        return SampledCurve(t, self.value(t), self.derivative(t))

    def reversals(self):
        """Interior breakpoint indices where adjacent slopes are anti-parallel."""
        s = self.slopes
        return [n for n in range(1, self.n_segments) if _antiparallel(s[n - 1], s[n])]


def insert_loops(curve: PiecewiseAffineCurve, delta) -> PiecewiseAffineCurve:
    """Replace every reversal of direction by a small triangular detour.

    At a breakpoint ``t_n`` with ``xi_next = -nu xi_prev`` the curve is moved
    to ``u(t_n) + delta xi_perp`` (``|xi_perp| = |xi_prev|``) and left unchanged
    outside ``[t_n - delta, t_n + sigma delta]``, ``sigma = 1/2`` if ``nu = 1``
    and ``1`` otherwise.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    rev = curve.reversals()
    if not rev:
        return curve
    t, s = curve.breakpoints, curve.slopes
    plan = {}
    for n in rev:
        nu = np.linalg.norm(s[n]) / np.linalg.norm(s[n - 1])
        plan[n] = 0.5 if abs(nu - 1.0) <= 1e-9 else 1.0
    # windows must fit disjointly inside the neighbouring intervals
    for n, sigma in plan.items():
        left = t[n - 1] + (plan.get(n - 1, 0.0) * delta if n - 1 in plan else 0.0)
        right = t[n + 1] - (delta if n + 1 in plan else 0.0)
        if not (t[n] - delta > left and t[n] + sigma * delta < right):
            raise ValueError(f"delta={delta} too large for the loop at t={t[n]}")
    new_t, new_v = [t[0]], [curve.values[0]]
    for n in range(1, t.size):
        if n in plan:
            sigma = plan[n]
            xp = orthogonal_unit(s[n - 1]) * np.linalg.norm(s[n - 1])
            u = curve.values[n]
            new_t += [t[n] - delta, t[n], t[n] + sigma * delta]
            new_v += [u - delta * s[n - 1], u + delta * xp, u + sigma * delta * s[n]]
        else:
            new_t.append(t[n])
            new_v.append(curve.values[n])
    out = PiecewiseAffineCurve(np.array(new_t), np.array(new_v))
    if out.reversals():
        raise ValueError("loop insertion left an anti-parallel pair")
    return out


@dataclass(frozen=True)
class _Piece:
    start: float
    end: float
    origin: np.ndarray
    slope: np.ndarray | None = None
    control: np.ndarray | None = None

    @property
    def is_bezier(self):
        return self.control is not None

    def evaluate(self, t, order):
        if not self.is_bezier:
            if order == 0:
                return self.origin + (t - self.start)[:, None] * self.slope
            if order == 1:
                return np.broadcast_to(self.slope, (t.size, 3)).copy()
            return np.zeros((t.size, 3))
        # control points are offsets from ``origin``; derivatives use forward
        # differences so that cancellation happens before dividing by width^order
        p = len(self.control) - 1
        width = self.end - self.start
        if order > p:
            return np.zeros((t.size, 3))
        s = (t - self.start) / width
        diff = np.diff(self.control, n=order, axis=0)
        out = np.zeros((t.size, 3))
        for q in range(p - order + 1):
            out += bernstein(q, p - order, s)[:, None] * diff[q]
        out *= math.perm(p, order) / width**order
        return self.origin + out if order == 0 else out


@dataclass(frozen=True)
class SmoothCurve:
    """``C^k`` curve made of affine pieces and reparametrized Bezier arcs.

    ``speed_bounds`` holds ``(c, C)`` with ``c <= |u'| <= C``.
    """

    pieces: tuple[_Piece, ...]
    k: int
    eta: float
    speed_bounds: tuple[float, float]
    windows: tuple[tuple[float, float], ...] = ()
    source: PiecewiseAffineCurve | None = None

    @property
    def length(self):
        return self.pieces[-1].end

    @property
    def knots(self):
        return np.array([p.start for p in self.pieces] + [self.pieces[-1].end])

    def _eval(self, t, order):
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t).ravel()
        idx = np.clip(np.searchsorted(self.knots, flat, side="right") - 1, 0, len(self.pieces) - 1)
        out = np.empty((flat.size, 3))
        for i in np.unique(idx):
            m = idx == i
            out[m] = self.pieces[i].evaluate(flat[m], order)
        return out.reshape(t.shape + (3,))

    def value(self, t):
        return self._eval(t, 0)

    def derivative(self, t, order=1):
        if order < 0:
            raise ValueError("order must be non-negative")
        return self._eval(t, order)

    def in_window(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=bool)
        for a, b in self.windows:
            out |= (t > a) & (t < b)
        return out

    def sample(self, t):
        t = np.asarray(t, dtype=float)
        return SampledCurve(t, self.value(t), self.derivative(t))

    def export(self, path, n=1001):
        """Dense samples ``t x y z dx dy dz``."""
        t = np.linspace(0.0, self.length, n)
        rows = np.column_stack([t, self.value(t), self.derivative(t)])
        np.savetxt(path, rows, fmt="%.17g", header="t x y z dx dy dz")


def _segment_distance(a, b):
    """Distance from the origin to the segment ``[a, b]``."""
    d = b - a
    dd = d @ d
    s = 0.0 if dd == 0 else min(max(-(a @ d) / dd, 0.0), 1.0)
    return float(np.linalg.norm(a + s * d))


def as_smooth(curve: PiecewiseAffineCurve, k=3) -> SmoothCurve:
    """View a single-segment curve (or any curve) as a curve with affine pieces only."""
    pieces = tuple(_Piece(curve.breakpoints[i], curve.breakpoints[i + 1], curve.values[i], slope=s)
                   for i, s in enumerate(curve.slopes))
    speeds = np.linalg.norm(curve.slopes, axis=1)
    return SmoothCurve(pieces, k, 0.0, (float(speeds.min()), float(speeds.max())), (), curve)


def mollify(curve: PiecewiseAffineCurve, k, eta) -> SmoothCurve:
    """Replace the corners of ``curve`` by degree-``2k`` Bezier arcs.

    Around each interior breakpoint ``t_n`` the control points are
    ``u(t_n + (m - k) eta / k)``, ``m = 0..2k``, and the arc is reparametrized
    onto ``[t_n - eta, t_n + eta]``; the curve stays affine elsewhere and is
    ``C^k`` overall.
    """
    if k < 1:
        raise ValueError("smoothness order k must be at least 1")
    if not eta > 0:
        raise ValueError("eta must be positive")
    if curve.reversals():
        raise ValueError("curve has anti-parallel adjacent slopes; insert loops first")
    t, s = curve.breakpoints, curve.slopes
    if curve.n_segments == 1:
        return as_smooth(curve, k)
    lengths = curve.interval_lengths
    if eta >= 0.5 * lengths[1:-1].min(initial=np.inf) or eta >= min(lengths[0], lengths[-1]):
        raise ValueError(f"eta={eta} too large for the shortest interval")
    pieces = []
    windows = []
    start = t[0]
    for n in range(1, t.size - 1):
        a, b = t[n] - eta, t[n] + eta
        pieces.append(_Piece(start, a, curve.value(start), slope=s[n - 1]))
        steps = (np.arange(2 * k + 1) - k) * eta / k
        offsets = steps[:, None] * np.where((steps < 0)[:, None], s[n - 1], s[n])
        pieces.append(_Piece(a, b, curve.value(t[n]), control=offsets))
        windows.append((a, b))
        start = b
    pieces.append(_Piece(start, t[-1], curve.value(start), slope=s[-1]))
    c = min(_segment_distance(s[n], s[n + 1]) for n in range(len(s) - 1))
    C = float(np.max(np.linalg.norm(s, axis=1)))
    return SmoothCurve(tuple(pieces), k, float(eta), (c, C), tuple(windows), curve)


def caratheodory_split(xi, r_star):
    """Split ``xi`` into two slopes of length ``r_star`` averaging to ``xi``."""
    xi = np.asarray(xi, dtype=float)
    r = np.linalg.norm(xi)
    if r > r_star * (1.0 + 1e-12):
        raise ValueError(f"|xi|={r} exceeds r*={r_star}")
    h = math.sqrt(max(r_star**2 - r**2, 0.0))
    e = orthogonal_unit(xi) if r > 0 else orthogonal_unit(np.array([1.0, 0.0, 0.0]))
    return xi + h * e, xi - h * e, 0.5


@dataclass(frozen=True)
class LaminateCell:
    """How one parent segment was replaced by a sawtooth."""

    parent: int
    xi: np.ndarray
    xi_a: np.ndarray
    xi_b: np.ndarray
    lam: float
    period: float
    teeth: int


@dataclass(frozen=True)
class LaminateCurve:
    curve: PiecewiseAffineCurve
    cells: tuple[LaminateCell, ...]
    parent: PiecewiseAffineCurve


def split_slope(xi, envelope):
    """Two slopes on the envelope's contact set whose ``lam``-average is ``xi``.

    Returns ``None`` when ``f^c(|xi|) = f(|xi|)``.
    """
    xi = np.asarray(xi, dtype=float)
    r = float(np.linalg.norm(xi))
    if r > envelope.r_max + 1e-12 or r < envelope.r_min - 1e-12:
        raise RangeError(f"|xi|={r} outside the envelope range")
    if not envelope.relaxed(r):
        return None
    r1, r2 = envelope.segment_containing(r)
    if r1 < 0.0:
        # the contact segment straddles the origin: split off the line of xi
        return caratheodory_split(xi, r2)
    xh = xi / r
    lam = (r2 - r) / (r2 - r1)
    return r1 * xh, r2 * xh, lam


def laminate_relax(curve: PiecewiseAffineCurve, envelope, j) -> LaminateCurve:
    """Replace slopes with ``f^c < f`` by fine oscillations between contact radii.

    Each relaxed segment ``I`` gets ``ceil(j |I| / L_min)`` teeth, each made
    of a ``lam`` fraction with slope ``xi_a`` followed by slope ``xi_b``.
    """
    if j < 1:
        raise ValueError("j must be a positive integer")
    t, s = curve.breakpoints, curve.slopes
    lmin = curve.interval_lengths.min()
    new_t, new_v = [t[0]], [curve.values[0]]
    cells = []
    for n in range(curve.n_segments):
        split = split_slope(s[n], envelope)
        if split is None:
            new_t.append(t[n + 1])
            new_v.append(curve.values[n + 1])
            continue
        xa, xb, lam = split
        width = t[n + 1] - t[n]
        teeth = math.ceil(j * width / lmin - 1e-12)
        period = width / teeth
        for m in range(teeth):
            t0 = t[n] + m * period
            v0 = curve.values[n] + m * period * s[n]
            if lam > 0:
                new_t.append(t0 + lam * period)
                new_v.append(v0 + lam * period * xa)
            if m == teeth - 1:
                new_t.append(t[n + 1])
                new_v.append(curve.values[n + 1])
            else:
                new_t.append(t0 + period)
                new_v.append(v0 + period * s[n])
        cells.append(LaminateCell(n, s[n].copy(), xa, xb, float(lam), float(period), teeth))
    refined = PiecewiseAffineCurve(np.array(new_t), np.array(new_v))
    return LaminateCurve(refined, tuple(cells), curve)


def read_curve(path) -> PiecewiseAffineCurve:
    """Read breakpoints from a text file with one ``t x y z`` row per line."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 4:
        raise ValueError("curve file rows must be 't x y z'")
    return PiecewiseAffineCurve(data[:, 0], data[:, 1:])


def write_curve(curve: PiecewiseAffineCurve, path):
    rows = np.column_stack([curve.breakpoints, curve.values])
    np.savetxt(path, rows, fmt="%.17g", header="t x y z")
