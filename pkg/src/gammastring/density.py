"""Stored energy densities, the reduced density and its radial convex envelope.

The incompressible density is ``W(F) = W0(F)`` when ``det F = 1`` and
infinite otherwise. Minimizing ``W`` over the two cross-section columns gives
the reduced density ``Wbar(xi)``; for frame-indifferent models it only depends
on ``|xi|`` through a radial profile ``f`` whose convex envelope governs the
relaxed string energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation
from scipy.stats import qmc

from .errors import FrameIndifferenceError, RangeError, ReductionError
from .tensor import det_matrix, orthogonal_unit

INFINITE = math.inf

MODELS = ("single_well_so3", "frobenius", "double_well_radial")


@dataclass(frozen=True)
class StoredDensity:
    """A stored energy ``W0`` on 3x3 matrices.

    ``single_well_so3``
        ``c * dist^2(F, SO(3))``; growth class H3 with ``c3 = C3 = c``.
    ``frobenius``
        ``|F|^2``; growth class H2 with ``c2 = C2 = 1``.
    ``double_well_radial``
        ``c * min_k dist^2(F, SO(3) U_k)`` with ``U_k = diag(r_k, r_k^-1/2, r_k^-1/2)``,
        so the reduced density vanishes exactly on the spheres ``|xi| = r_k``.
    """

    kind: str
    c: float = 1.0
    radii: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in MODELS:
            raise ValueError(f"unknown model {self.kind!r}; choose from {MODELS}")
        if not self.c > 0:
            raise ValueError("model constant must be positive")
        if self.kind == "double_well_radial":
            if len(self.radii) < 1 or min(self.radii) <= 0:
                raise ValueError("double_well_radial needs positive well radii")

    @property
    def growth_class(self):
        return "H3" if self.kind == "single_well_so3" else "H2"

    @property
    def growth_constants(self):
        """Constants of the declared growth class and of the implied H2 bounds."""
        c = self.c
        if self.kind == "single_well_so3":
            # dist^2 <= 2|F|^2 + 6 and dist^2 >= |F|^2/2 - 3
            return {"c3": c, "C3": c, "c2": c / 2, "C2": 6 * c}
        if self.kind == "frobenius":
            return {"c2": 1.0, "C2": 1.0}
        u2 = max(self._well_norm2())
        return {"c2": c / 2, "C2": max(2.0, 2.0 * u2) * c}

    @property
    def wells(self):
        """Radii where the radial profile vanishes."""
        if self.kind == "single_well_so3":
            return (1.0,)
        if self.kind == "double_well_radial":
            return tuple(sorted(float(r) for r in self.radii))
        return ()

    @property
    def frame_indifferent(self):
        return True

    def _well_matrices(self):
        return [np.diag([r, r**-0.5, r**-0.5]) for r in self.radii]

    def _well_norm2(self):
        return [r**2 + 2.0 / r for r in self.radii]

    def __call__(self, F):
        return eval_w0(self, F)


def single_well_so3(c=1.0):
    return StoredDensity("single_well_so3", c=c)


def frobenius():
    return StoredDensity("frobenius")


def double_well_radial(radii=(1.0, 2.0), c=1.0):
    return StoredDensity("double_well_radial", c=c, radii=tuple(radii))


def make_model(kind, c=1.0, radii=(1.0, 2.0)):
    if kind == "single_well_so3":
        return single_well_so3(c)
    if kind == "frobenius":
        return frobenius()
    if kind == "double_well_radial":
        return double_well_radial(radii, c)
    raise ValueError(f"unknown model {kind!r}")


def _special_procrustes(M):
    """Singular-value data for ``max_{R in SO(3)} tr(R^T M)``.

    Returns the maximal trace and the maximizing rotation.
    """
    U, s, Vt = np.linalg.svd(M)
    sign = np.where(np.linalg.det(U) * np.linalg.det(Vt) < 0, -1.0, 1.0)
    trace = s[..., 0] + s[..., 1] + sign * s[..., 2]
    D = np.ones(s.shape)
    D[..., 2] = sign
    R = (U * D[..., None, :]) @ Vt
    return trace, R


def eval_w0(model: StoredDensity, F):
    """``W0(F) >= 0`` for one matrix or a stack of matrices."""
    F = np.asarray(F, dtype=float)
    if not np.all(np.isfinite(F)):
        raise ValueError("F has non-finite entries")
    sq = np.sum(F**2, axis=(-2, -1))
    if model.kind == "frobenius":
        out = sq
    elif model.kind == "single_well_so3":
        tr, _ = _special_procrustes(F)
        out = model.c * np.maximum(sq - 2.0 * tr + 3.0, 0.0)
    else:
        vals = []
        for U, u2 in zip(model._well_matrices(), model._well_norm2()):
            tr, _ = _special_procrustes(F @ U.T)
            vals.append(sq + u2 - 2.0 * tr)
        out = model.c * np.maximum(np.min(vals, axis=0), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def grad_w0(model: StoredDensity, F):
    """Derivative of ``W0`` with respect to the entries of ``F``."""
    F = np.asarray(F, dtype=float)
    if model.kind == "frobenius":
        return 2.0 * F
    if model.kind == "single_well_so3":
        _, R = _special_procrustes(F)
        return 2.0 * model.c * (F - R)
    sq = np.sum(F**2, axis=(-2, -1))
    best, best_grad = None, None
    for U, u2 in zip(model._well_matrices(), model._well_norm2()):
        tr, R = _special_procrustes(F @ U.T)
        val = sq + u2 - 2.0 * tr
        g = 2.0 * model.c * (F - R @ U)
        if best is None:
            best, best_grad = val, g
        else:
            pick = val < best
            best = np.where(pick, val, best)
            best_grad = np.where(np.asarray(pick)[..., None, None], g, best_grad)
    return best_grad


def eval_w(model: StoredDensity, F, tol=0.0):
    """Incompressible density: ``W0(F)`` if ``|det F - 1| <= tol``, else ``INFINITE``."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    F = np.asarray(F, dtype=float)
    w0 = eval_w0(model, F)
    ok = np.abs(det_matrix(F) - 1.0) <= tol
    if np.ndim(w0) == 0:
        return w0 if bool(ok) else INFINITE
    return np.where(ok, w0, INFINITE)


@dataclass(frozen=True)
class ReducedSample:
    """Minimal ``W0((xi|A))`` over cross sections ``A`` with ``det(xi|A) = 1``."""

    xi: np.ndarray
    value: float
    A: np.ndarray | None
    grad_norm: float = 0.0
    params: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def matrix(self):
        return np.column_stack([self.xi, self.A])


@dataclass(frozen=True)
class ReduceOptions:
    starts: int = 8
    gtol: float = 1e-11
    certificate: float = 1e-7
    maxiter: int = 3000
    polish: int = 3


class _Section:
    """Exact parametrization of ``{(a1, a2) : (xi x a1) . a2 = 1}`` by 5 reals."""

    def __init__(self, xi):
        self.xi = np.asarray(xi, dtype=float)
        self.r = np.linalg.norm(self.xi)
        self.xh = self.xi / self.r
        self.Kxi = _skew(self.xi)
        self.Kxh = _skew(self.xh)

    def matrix(self, p):
        a1 = p[:3]
        w = _cross(self.xi, a1)
        n2 = w @ w
        nw = math.sqrt(n2)
        a2 = w / n2 + p[3] * self.xh + p[4] * _cross(self.xh, w) / nw
        F = np.empty((3, 3))
        F[:, 0], F[:, 1], F[:, 2] = self.xi, a1, a2
        return F, w, n2, nw

    def value_and_grad(self, model, p):
        w = _cross(self.xi, p[:3])
        if w @ w < 1e-24:
            return 1e300, np.zeros(5)
        F, w, n2, nw = self.matrix(p)
        val = eval_w0(model, F)
        G = grad_w0(model, F)
        g2, g3 = G[:, 1], G[:, 2]
        eye = np.eye(3)
        ww = np.outer(w, w)
        D = eye / n2 - 2.0 * ww / n2**2 + p[4] * self.Kxh @ (eye - ww / n2) / nw
        grad = np.empty(5)
        grad[:3] = g2 + self.Kxi.T @ (D.T @ g3)
        grad[3] = g3 @ self.xh
        grad[4] = g3 @ (_cross(self.xh, w) / nw)
        return val, grad

    def natural_start(self):
        ea = orthogonal_unit(self.xi)
        p = np.zeros(5)
        p[:3] = ea / math.sqrt(self.r)
        return p


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _starts(section: _Section, n):
    base = section.natural_start()
    halton = qmc.Halton(d=5, scramble=False).random(n + 1)[1:]
    scale = max(1.0, 1.0 / math.sqrt(section.r))
    pts = [base]
    for q in halton[: max(n - 1, 0)]:
        pts.append(base + scale * 3.0 * (q - 0.5))
    return pts


def reduce_density(model: StoredDensity, xi, opts: ReduceOptions | None = None, x0=None) -> ReducedSample:
    """Reduced density ``Wbar(xi)`` and an optimal cross section ``A``.

    The determinant constraint is linear in the second column once the first
    is fixed, so it is eliminated exactly and a 5-parameter unconstrained
    problem is solved from deterministic Halton starts with BFGS. ``x0`` adds
    an extra warm start in the internal parametrization.
    """
    opts = opts or ReduceOptions()
    xi = np.asarray(xi, dtype=float)
    if not np.all(np.isfinite(xi)):
        raise ValueError("xi has non-finite entries")
    if np.linalg.norm(xi) == 0.0:
        return ReducedSample(xi=xi, value=INFINITE, A=None, grad_norm=0.0)
    if opts.starts < 1:
        raise ValueError("need at least one start")
    sec = _Section(xi)
    starts = _starts(sec, opts.starts)
    if x0 is not None:
        starts.insert(0, np.asarray(x0, dtype=float))

    def fun(p):
        return sec.value_and_grad(model, p)

    best = None
    for p0 in starts:
        res = minimize(fun, p0, jac=True, method="BFGS",
                       options={"gtol": opts.gtol, "maxiter": opts.maxiter})
        if best is None or res.fun < best.fun:
            best = res
    # polish: BFGS restarts reset the curvature model
    for _ in range(opts.polish):
        res = minimize(fun, best.x, jac=True, method="BFGS",
                       options={"gtol": opts.gtol, "maxiter": opts.maxiter})
        if res.fun <= best.fun:
            best = res
    val, g = fun(best.x)
    gnorm = float(np.linalg.norm(g))
    F = sec.matrix(best.x)[0]
    sample = ReducedSample(xi=xi, value=float(val), A=F[:, 1:].copy(), grad_norm=gnorm,
                           params=best.x)
    if gnorm > opts.certificate * max(1.0, abs(val)):
        raise ReductionError(f"no local-min certificate at xi={xi}: |grad| = {gnorm:.3e}", best=sample)
    return sample


def default_radii(model: StoredDensity | None = None, n=400, r_min=0.05, r_max=8.0):
    """Log-spaced radii with the model's well radii placed exactly on the grid."""
    r = np.geomspace(r_min, r_max, n)
    if model is not None:
        for w in model.wells:
            if r_min <= w <= r_max:
                r[np.argmin(np.abs(np.log(r) - math.log(w)))] = w
    return np.unique(r)


@dataclass(frozen=True)
class RadialProfile:
    """Samples ``f(r_m) = Wbar(r_m e1)`` of a frame-indifferent reduced density."""

    radii: np.ndarray
    f: np.ndarray
    model: StoredDensity | None = None

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if r.ndim != 1 or np.any(np.diff(r) <= 0) or r[0] <= 0:
            raise ValueError("radii must be positive and strictly increasing")
        if len(self.f) != len(r):
            raise ValueError("one profile value per radius")


def check_frame_indifference(model, radius=1.3, rotations=3, seed=0, rtol=1e-6, opts=None):
    """Compare ``Wbar(R xi)`` with ``Wbar(xi)`` for random rotations ``R``."""
    rng = np.random.default_rng(seed)
    xi = radius * np.array([1.0, 2.0, 2.0]) / 3.0
    ref = reduce_density(model, xi, opts).value
    for R in Rotation.random(rotations, random_state=rng).as_matrix():
        val = reduce_density(model, R @ xi, opts).value
        if abs(val - ref) > rtol * (1.0 + abs(ref)):
            raise FrameIndifferenceError(
                f"Wbar changes under rotation: {val!r} vs {ref!r}; radial profile undefined")
    return True


def radial_profile(model: StoredDensity, radii=None, opts: ReduceOptions | None = None,
                   check=True, audit=12) -> RadialProfile:
    """Sample ``f(r) = Wbar(r e1)`` on a radial grid.

    Radii are swept by continuation: each one starts from the rescaled optimum
    of its neighbour plus the natural start. ``audit`` evenly spread radii are
    then re-solved with the full multi-start set; if any of them finds a lower
    value the whole profile is recomputed with full multi-start.
    """
    if not model.frame_indifferent:
        raise FrameIndifferenceError("model is not declared frame-indifferent")
    opts = opts or ReduceOptions()
    if check:
        check_frame_indifference(model, opts=opts)
    radii = default_radii(model) if radii is None else np.asarray(radii, dtype=float)
    cheap = ReduceOptions(starts=1, gtol=opts.gtol, certificate=opts.certificate,
                          maxiter=opts.maxiter, polish=1)
    vals = _sweep(model, radii, cheap)
    picks = np.unique(np.linspace(0, len(radii) - 1, max(audit, 0)).round().astype(int))
    for i in picks:
        full = reduce_density(model, radii[i] * np.array([1.0, 0.0, 0.0]), opts).value
        if full < vals[i] - 1e-10 * (1.0 + abs(full)):
            vals = _sweep(model, radii, opts)
            break
    return RadialProfile(radii=np.asarray(radii, dtype=float), f=vals, model=model)


_KICK = 1e-3 * np.array([0.3, -0.7, 0.5, 0.2, -0.4])


def _sweep(model, radii, opts):
    vals = np.empty(len(radii))
    warm = None
    prev_r = None
    for i, r in enumerate(radii):
        x0 = None
        if warm is not None:
            x0 = warm.copy()
            x0[:3] *= math.sqrt(prev_r / r)
            # break symmetric saddles the previous optimum may sit on
            x0 += _KICK
        s = reduce_density(model, r * np.array([1.0, 0.0, 0.0]), opts, x0=x0)
        vals[i] = s.value
        warm, prev_r = s.params, r
    return vals


def lower_hull(x, y, turn_tol=1e-12):
    """Indices of the lower convex hull of points sorted by ``x`` (monotone chain).

    A middle point is discarded when the turn it makes is not strictly
    counter-clockwise, measured as the sine of the turning angle.
    """
    hull = []
    for i in range(len(x)):
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            ax, ay = x[a] - x[o], y[a] - y[o]
            px, py = x[i] - x[o], y[i] - y[o]
            cross = ax * py - ay * px
            if cross <= turn_tol * math.hypot(ax, ay) * math.hypot(px, py):
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


@dataclass(frozen=True)
class RadialEnvelope:
    """Sampled profile ``f`` with its convex envelope ``f^c``.

    With ``radial=True`` the envelope is that of ``xi -> f(|xi|)`` on R^3,
    i.e. the hull of the even extension of ``f``; contact segments are then
    given in signed radii and a segment straddling 0 is symmetric.
    """

    radii: np.ndarray
    f: np.ndarray
    fc: np.ndarray
    segments: tuple[tuple[float, float], ...]
    hull_r: np.ndarray
    hull_f: np.ndarray
    radial: bool = True
    contact_tol: float = 1e-9
    model: StoredDensity | None = field(default=None, compare=False)

    @property
    def r_min(self):
        return 0.0 if self.radial else float(self.radii[0])

    @property
    def r_max(self):
        return float(self.radii[-1])

    @property
    def is_contact(self):
        """True at samples inside a contact segment, where ``f^c`` lies strictly below ``f``."""
        return self.f - self.fc > self.contact_tol

    def _check(self, r):
        r = np.asarray(r, dtype=float)
        lo = self.r_min
        if np.any(r < lo - 1e-12) or np.any(r > self.r_max + 1e-12):
            raise RangeError(f"radius outside the sampled range [{lo}, {self.r_max}]")
        return r

    def __call__(self, r):
        """``f^c`` at radius ``r`` (piecewise linear between hull vertices)."""
        r = self._check(r)
        out = np.interp(r, self.hull_r, self.hull_f)
        return float(out) if out.ndim == 0 else out

    def f_at(self, r):
        """Linear interpolation of the sampled ``f``."""
        r = np.asarray(r, dtype=float)
        if np.any(r < self.radii[0] - 1e-12) or np.any(r > self.r_max + 1e-12):
            raise RangeError("radius outside the sampled profile")
        out = np.interp(r, self.radii, self.f)
        return float(out) if out.ndim == 0 else out

    def segment_containing(self, r):
        """Contact segment ``(r1, r2)`` with ``r1 < r < r2``, or ``None``."""
        r = float(self._check(r))
        for r1, r2 in self.segments:
            if r1 < r < r2:
                return (r1, r2)
        return None

    def relaxed(self, r):
        """True where ``f^c(r)`` lies strictly below ``f``."""
        seg = self.segment_containing(r)
        if seg is None:
            return False
        if r < self.radii[0]:
            return True
        return self(r) < self.f_at(r) - self.contact_tol

    def to_csv(self, path_or_file):
        rows = np.column_stack([self.radii, self.f, self.fc, self.is_contact.astype(float)])
        header = "r,f,fc,is_contact"
        fmt = ["%.17g", "%.17g", "%.17g", "%d"]
        np.savetxt(path_or_file, rows, delimiter=",", header=header, comments="", fmt=fmt)


def convex_envelope(profile: RadialProfile, radial=True, turn_tol=1e-12, contact_tol=1e-9) -> RadialEnvelope:
    """Lower convex hull of the sampled graph and its contact segments."""
    r = np.asarray(profile.radii, dtype=float)
    f = np.asarray(profile.f, dtype=float)
    if r.size < 3:
        raise ValueError("need at least three samples")
    if not np.all(np.isfinite(f)):
        raise ValueError("profile values must be finite")
    if radial:
        x = np.concatenate([-r[::-1], r])
        y = np.concatenate([f[::-1], f])
    else:
        x, y = r, f
    idx = lower_hull(x, y, turn_tol)
    hx, hy = x[idx], y[idx]
    fc = np.minimum(np.interp(r, hx, hy), f)
    segments = []
    for a, b in zip(idx[:-1], idx[1:]):
        if hx.size and x[b] <= 0.0:
            continue
        straddles = x[a] < 0.0 < x[b]
        skipped = b - a > 1 and np.any(y[a + 1:b] - np.interp(x[a + 1:b], hx, hy) > contact_tol)
        if straddles or skipped:
            segments.append((float(x[a]), float(x[b])))
    return RadialEnvelope(radii=r, f=f, fc=fc, segments=tuple(segments), hull_r=hx, hull_f=hy,
                          radial=radial, contact_tol=contact_tol, model=profile.model)


def eval_wbar_c(envelope: RadialEnvelope, xi):
    """Relaxed reduced density ``Wbar^c(xi) = f^c(|xi|)``."""
    return envelope(np.linalg.norm(np.asarray(xi, dtype=float), axis=-1))


def zero_level_radius(envelope: RadialEnvelope, zero_tol=1e-8):
    """Largest sampled radius with ``f^c(r) <= zero_tol``; ``None`` if there is none."""
    hit = np.nonzero(envelope.fc <= zero_tol)[0]
    if hit.size == 0:
        return None
    return float(envelope.radii[hit[-1]])
