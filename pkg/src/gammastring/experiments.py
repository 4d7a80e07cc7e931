"""Energies of recovery fields, the 1d limit energy, convergence drivers and
their text configuration.
"""

from __future__ import annotations

import logging
import math
import re
import time
import warnings
from dataclasses import dataclass, fields, replace

import numpy as np

from .curve import (PiecewiseAffineCurve, SmoothCurve, caratheodory_split, insert_loops,
                    laminate_relax, mollify, read_curve)
from .density import (INFINITE, ReduceOptions, convex_envelope, default_radii, eval_w0,
                      make_model, radial_profile)
from .errors import ConfigError, GammaError
from .frame import normal_field, optimal_cross_sections, tailored_frame
from .quadrature import Quadrature
from .recovery import (build_path_deformation, build_tube, compose, det_check,
                       inner_perturbation)
from .tensor import BoxGrid, det_matrix, orthogonal_unit, rotation_about

log = logging.getLogger(__name__)

OMEGA_AREA = 1.0


@dataclass(frozen=True)
class EnergyResult:
    """``eps^-alpha int W(grad^eps u)``; infinite when ``det`` misses 1 at some node."""

    value: float
    det_error: float
    node: np.ndarray | None = None

    @property
    def finite(self):
        return math.isfinite(self.value)


def energy(field_, eps, alpha, model, quadrature: Quadrature, det_tol=1e-6, chunk=40000) -> EnergyResult:
    """Quadrature approximation of the rescaled energy ``I_eps^alpha``."""
    X, W = quadrature.rule()
    total = 0.0
    worst = 0.0
    for k in range(0, len(X), chunk):
        G = field_.rescaled(X[k:k + chunk])
        dev = np.abs(det_matrix(G) - 1.0)
        i = int(np.argmax(dev))
        worst = max(worst, float(dev[i]))
        if dev[i] > det_tol:
            return EnergyResult(INFINITE, worst, X[k + i].copy())
        total += float(np.dot(W[k:k + chunk], eval_w0(model, G)))
    return EnergyResult(eps ** (-alpha) * total, worst)


def limit_energy(curve, envelope, samples=8):
    """``|omega| int_0^L f^c(|u'|)``: exact per segment for piecewise-affine curves,
    Gauss-Legendre per piece for smooth ones."""
    if isinstance(curve, PiecewiseAffineCurve):
        r = np.linalg.norm(curve.slopes, axis=1)
        return OMEGA_AREA * float(np.dot(envelope(r), curve.interval_lengths))
    if isinstance(curve, SmoothCurve):
        x, w = np.polynomial.legendre.leggauss(samples)
        total = 0.0
        for p in curve.pieces:
            h = 0.5 * (p.end - p.start)
            t = 0.5 * (p.end + p.start) + h * x
            total += h * float(np.dot(w, envelope(np.linalg.norm(curve.derivative(t), axis=1))))
        return OMEGA_AREA * total
    raise TypeError("curve must be piecewise affine or smooth")


# --------------------------------------------------------------------------- config

def _floats(text):
    return tuple(float(_number(s)) for s in re.split(r"[,\s]+", text.strip()) if s)


def _ints(text):
    return tuple(int(s) for s in re.split(r"[,\s]+", text.strip()) if s)


def _number(s):
    """Parse a float, accepting powers of two written ``2^-k``."""
    s = s.strip()
    m = re.fullmatch(r"2\^(-?\d+)", s)
    if m:
        return 2.0 ** int(m.group(1))
    return float(s)


def _vectors(text):
    out = []
    for part in text.split(";"):
        v = _floats(part)
        if len(v) != 3:
            raise ConfigError(f"slope {part!r} must have three components")
        out.append(v)
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one convergence experiment (see the README for every key)."""

    model: str = "single_well_so3"
    model_c: float = 1.0
    model_radii: tuple[float, ...] = (1.0, 2.0)
    alpha: float = 0.0
    beta: float = 0.2
    k: int = 3
    length: float = 1.0
    slopes: tuple[tuple[float, float, float], ...] = ((0.5, 0.0, 0.0),)
    lengths: tuple[float, ...] = ()
    curve: str = ""
    eps: tuple[float, ...] = tuple(2.0**-i for i in range(4, 10))
    j_power: float = 0.125
    eta_coeff: float = 0.5
    eta_power: float = 0.5
    frame_delta_fraction: float = 0.125
    frame_eta_fraction: float = 0.25
    loop_delta_fraction: float = 0.25
    teeth: int = 4
    grid: tuple[int, int, int] = (129, 17, 33)
    check_grid: tuple[int, int, int] = (33, 5, 9)
    quad_orders: tuple[int, int, int] = (6, 4, 4)
    quad_panels: int = 2
    ode_step: float = 1e-3
    det_tol: float = 1e-6
    fd_step: float = 1e-4
    radial_points: int = 400
    r_min: float = 0.05
    r_max: float = 8.0
    starts: int = 8
    output: str = ""

    def __post_init__(self):
        if not 0.0 <= self.alpha < 2.0:
            raise ConfigError("alpha must lie in [0, 2)")
        if self.alpha > 0:
            a, b = self.alpha, self.beta
            if a >= 0.5 and not 0.0 < b < 0.5 - a / 4.0:
                raise ConfigError(f"alpha={a} needs 0 < beta < {0.5 - a / 4.0}")
            if a < 0.5 and not a < b < 0.5:
                raise ConfigError(f"alpha={a} needs {a} < beta < 0.5")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if not self.eps or min(self.eps) <= 0:
            raise ConfigError("eps list must hold positive values")
        if self.lengths and len(self.lengths) != len(self.slopes):
            raise ConfigError("one length per slope")
        if len(self.grid) != 3 or len(self.check_grid) != 3 or len(self.quad_orders) != 3:
            raise ConfigError("grid sizes and quadrature orders need three entries")

    @property
    def group(self):
        return "SO3" if self.alpha >= 0.5 else "SL3"

    @property
    def gamma(self):
        return 1.0 if self.alpha == 0 else 1.0 - 2.0 * self.beta

    def density(self):
        return make_model(self.model, self.model_c, self.model_radii)

    def target_curve(self) -> PiecewiseAffineCurve:
        if self.curve:
            return read_curve(self.curve)
        lengths = self.lengths or (self.length / len(self.slopes),) * len(self.slopes)
        return PiecewiseAffineCurve.from_slopes(self.slopes, lengths)


_PARSERS = {
    "model": str.strip,
    "model_c": _number,
    "model_radii": _floats,
    "alpha": _number,
    "beta": _number,
    "k": int,
    "length": _number,
    "slopes": _vectors,
    "lengths": _floats,
    "curve": str.strip,
    "eps": _floats,
    "j_power": _number,
    "eta_coeff": _number,
    "eta_power": _number,
    "frame_delta_fraction": _number,
    "frame_eta_fraction": _number,
    "loop_delta_fraction": _number,
    "teeth": int,
    "grid": _ints,
    "check_grid": _ints,
    "quad_orders": _ints,
    "quad_panels": int,
    "ode_step": _number,
    "det_tol": _number,
    "fd_step": _number,
    "radial_points": int,
    "r_min": _number,
    "r_max": _number,
    "starts": int,
    "output": str.strip,
}
assert set(_PARSERS) == {f.name for f in fields(ExperimentConfig)}


def parse_config(text, **overrides) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, unknown keys are errors."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    values.update(overrides)
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), **overrides)


# --------------------------------------------------------------------------- drivers

@dataclass(frozen=True)
class ConvergenceRecord:
    eps: float
    energy: float
    limit: float
    det_fd_error: float
    phi_c1_error: float
    wall_time: float
    status: str = "ok"

    @property
    def ok(self):
        return self.status == "ok"


RECORD_FIELDS = ("eps", "energy", "limit", "det_fd_error", "phi_c1_error", "wall_time", "status")


def write_records(records, path_or_file):
    own = isinstance(path_or_file, str)
    fh = open(path_or_file, "w") if own else path_or_file
    try:
        fh.write(",".join(RECORD_FIELDS) + "\n")
        for r in records:
            vals = [f"{getattr(r, k):.17g}" for k in RECORD_FIELDS[:-1]]
            fh.write(",".join(vals + [r.status.replace(",", ";")]) + "\n")
    finally:
        if own:
            fh.close()


def read_records(path):
    out = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header[:len(RECORD_FIELDS)]) != RECORD_FIELDS:
            raise ValueError("not a convergence record file")
        for line in fh:
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",", len(RECORD_FIELDS) - 1)
            nums = [float(p) for p in parts[:-1]]
            out.append(ConvergenceRecord(*nums, status=parts[-1]))
    return out


def envelope_for(config: ExperimentConfig):
    """Envelope on the configured radial grid, with the target slope lengths added as samples."""
    model = config.density()
    radii = default_radii(model, config.radial_points, config.r_min, config.r_max)
    r = np.linalg.norm(config.target_curve().slopes, axis=1)
    r = r[(r > config.r_min) & (r < config.r_max)]
    radii = np.unique(np.concatenate([radii, r]))
    prof = radial_profile(model, radii, ReduceOptions(starts=config.starts))
    return convex_envelope(prof)


@dataclass
class Alpha0Stage:
    """Intermediate objects of one alpha = 0 pipeline run."""

    eps: float
    j: int
    eta: float
    laminate: object
    looped: PiecewiseAffineCurve
    smooth: SmoothCurve
    frame: object
    tube: object
    perturbation: object
    field: object


def alpha0_schedule(config: ExperimentConfig, eps):
    j = max(1, math.ceil(eps ** (-config.j_power) - 1e-12))
    eta = config.eta_coeff * eps**config.eta_power
    return j, eta


def build_alpha0(config: ExperimentConfig, eps, envelope, model=None, target=None) -> Alpha0Stage:
    """Laminate, loops, mollification, tailored frame, tube and inner perturbation at one ``eps``."""
    model = model or config.density()
    target = target or config.target_curve()
    j, eta = alpha0_schedule(config, eps)
    lam = laminate_relax(target, envelope, j)
    lmin = lam.curve.interval_lengths.min()
    looped = insert_loops(lam.curve, config.loop_delta_fraction * lmin)
    lmin = looped.interval_lengths.min()
    eta = min(eta, 0.25 * lmin)
    smooth = mollify(looped, config.k, eta)
    moving = normal_field(smooth)
    sections = optimal_cross_sections(looped, model, moving.segment_normals(),
                                      ReduceOptions(starts=config.starts))
    parts = []
    for n in range(looped.n_segments):
        a = looped.breakpoints[n] + (eta if n > 0 else 0.0)
        b = looped.breakpoints[n + 1] - (eta if n < looped.n_segments - 1 else 0.0)
        parts.append(b - a)
    delta = config.frame_delta_fraction * min(parts)
    frame = tailored_frame(smooth, moving, sections, delta, config.frame_eta_fraction * delta)
    domain = BoxGrid(length=target.length, shape=config.grid)
    tube = build_tube(smooth, frame, eps, domain)
    pert = inner_perturbation(tube, domain, gamma=1.0, step=config.ode_step)
    return Alpha0Stage(eps, j, eta, lam, looped, smooth, frame, tube, pert, compose(tube, pert))


def _quadrature(config, length, breakpoints):
    return Quadrature(config.quad_orders, length, tuple(breakpoints), config.quad_panels)


def _record(config, model, eps, stage_field, breakpoints, limit, pert, alpha, started):
    quad = _quadrature(config, stage_field.domain.length, breakpoints)
    e = energy(stage_field, eps, alpha, model, quad, config.det_tol)
    check = BoxGrid(length=stage_field.domain.length, shape=config.check_grid)
    fd = det_check(stage_field, config.fd_step, check)
    status = "ok" if e.finite else f"infinite energy at node {e.node.tolist()}"
    return ConvergenceRecord(eps, e.value, limit, fd, pert.c1_error(), time.perf_counter() - started,
                             status)


def _failed(eps, limit, exc, started):
    log.warning("eps=%g failed: %s", eps, exc)
    nan = float("nan")
    return ConvergenceRecord(eps, nan, limit, nan, nan, time.perf_counter() - started,
                             f"{type(exc).__name__}: {exc}")


def run_alpha0(config: ExperimentConfig, envelope=None):
    """Energies of the alpha = 0 recovery construction along the ``eps`` list."""
    model = config.density()
    envelope = envelope or envelope_for(config)
    target = config.target_curve()
    limit = limit_energy(target, envelope)
    records = []
    for eps in sorted(config.eps, reverse=True):
        started = time.perf_counter()
        try:
            st = build_alpha0(config, eps, envelope, model, target)
            records.append(_record(config, model, eps, st.field, st.tube.breakpoints(), limit,
                                   st.perturbation, 0.0, started))
        except GammaError as exc:
            records.append(_failed(eps, limit, exc, started))
        log.info("eps=%g energy=%.6g", eps, records[-1].energy)
    return records


def chain_sections(curve: PiecewiseAffineCurve, model, group, opts=None):
    """Cross sections with ``(xi_n | A_n)`` in ``group``, rotated about ``xi_n`` to stay
    close to the previous segment's matrix."""
    out = []
    prev = None
    for xi in curve.slopes:
        A = optimal_cross_sections(PiecewiseAffineCurve.from_slopes([xi], [1.0]), model, None, opts)[0]
        xh = xi / np.linalg.norm(xi)
        if prev is not None:
            pxi, pA = prev
            axis = np.cross(pxi / np.linalg.norm(pxi), xh)
            s = np.linalg.norm(axis)
            turn = rotation_about(axis, math.atan2(s, pxi @ xh / np.linalg.norm(pxi))) if s > 1e-12 else np.eye(3)
            target = turn @ pA[:, 0]
        else:
            target = orthogonal_unit(xi)
        m = A[:, 0] - (A[:, 0] @ xh) * xh
        tp = target - (target @ xh) * xh
        angle = math.atan2(np.cross(m, tp) @ xh, m @ tp)
        A = rotation_about(xh, angle) @ A
        if group == "SO3":
            # snap to the exact rotation with first column xi
            if abs(np.linalg.norm(xi) - 1.0) > 1e-9:
                raise GammaError(f"slope {xi} is not a unit vector; (xi|A) cannot be a rotation")
            a1 = A[:, 0] - (A[:, 0] @ xh) * xh
            a1 /= np.linalg.norm(a1)
            A = np.column_stack([a1, np.cross(xh, a1)])
        out.append(A)
        prev = (xi, A)
    return out


def relax_to_wells(curve: PiecewiseAffineCurve, r_star, teeth):
    """Split slopes shorter than ``r_star`` into pairs of length ``r_star``."""
    t, s = curve.breakpoints, curve.slopes
    new_t, new_v = [t[0]], [curve.values[0]]
    for n in range(curve.n_segments):
        r = np.linalg.norm(s[n])
        if r >= r_star - 1e-12:
            new_t.append(t[n + 1])
            new_v.append(curve.values[n + 1])
            continue
        xa, _, lam = caratheodory_split(s[n], r_star)
        period = (t[n + 1] - t[n]) / teeth
        for m in range(teeth):
            t0 = t[n] + m * period
            v0 = curve.values[n] + m * period * s[n]
            new_t += [t0 + lam * period, t0 + period]
            new_v += [v0 + lam * period * xa, v0 + period * s[n]]
        new_t[-1], new_v[-1] = t[n + 1], curve.values[n + 1]
    return PiecewiseAffineCurve(np.array(new_t), np.array(new_v))


def build_alpha(config: ExperimentConfig, eps, model=None, target=None):
    """Path deformation, inner perturbation and composed field for ``alpha > 0``."""
    model = model or config.density()
    target = target or config.target_curve()
    wells = model.wells
    if wells:
        target = relax_to_wells(target, max(wells), config.teeth)
    sections = chain_sections(target, model, config.group, ReduceOptions(starts=config.starts))
    domain = BoxGrid(length=target.length, shape=config.grid)
    v = build_path_deformation(target, sections, config.group, config.beta, eps, domain)
    pert = inner_perturbation(v, domain, gamma=config.gamma, step=config.ode_step)
    return v, pert, compose(v, pert)


def run_alpha(config: ExperimentConfig):
    """Energies of the path recovery construction for ``alpha`` in ``(0, 2)``."""
    if config.alpha <= 0:
        raise ConfigError("run_alpha needs alpha > 0")
    model = config.density()
    target = config.target_curve()
    records = []
    for eps in sorted(config.eps, reverse=True):
        started = time.perf_counter()
        try:
            v, pert, u = build_alpha(config, eps, model, target)
            records.append(_record(config, model, eps, u, v.breakpoints(), 0.0, pert,
                                   config.alpha, started))
        except GammaError as exc:
            records.append(_failed(eps, 0.0, exc, started))
    return records


def run(config: ExperimentConfig):
    return run_alpha0(config) if config.alpha == 0 else run_alpha(config)


def rate_fit(records, field_name="energy"):
    """Least-squares slope of ``log(field)`` against ``log(eps)``, largest ``eps`` dropped."""
    recs = sorted(records, key=lambda r: -r.eps)[1:]
    pts = []
    for r in recs:
        v = getattr(r, field_name)
        if not (v > 0 and math.isfinite(v)):
            warnings.warn(f"excluding eps={r.eps}: {field_name}={v} is not positive", stacklevel=2)
            continue
        pts.append((math.log(r.eps), math.log(v)))
    if len(pts) < 3:
        raise ValueError("need at least three usable records for a rate fit")
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **kw)
