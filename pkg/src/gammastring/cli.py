"""Command line entry point ``gamma``."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import experiments as ex
from .curve import insert_loops, mollify, read_curve
from .density import convex_envelope, default_radii, make_model, radial_profile, MODELS
from .errors import GammaError
from .recovery import write_field


def _density(args):
    model = make_model(args.model, args.c, tuple(args.radii))
    prof = radial_profile(model, default_radii(model, args.points, args.r_min, args.r_max))
    env = convex_envelope(prof)
    env.to_csv(args.out or sys.stdout)
    return 0


def _mollify(args):
    curve = read_curve(args.curve)
    if args.loops:
        curve = insert_loops(curve, args.loops)
    smooth = mollify(curve, args.k, args.eta)
    smooth.export(args.out or sys.stdout, args.samples)
    return 0


def _recover(args):
    cfg = ex.load_config(args.config, alpha=args.alpha, beta=args.beta)
    eps = args.eps if args.eps else min(cfg.eps)
    if cfg.alpha == 0:
        stage = ex.build_alpha0(cfg, eps, ex.envelope_for(cfg))
        field, pert = stage.field, stage.perturbation
    else:
        _, pert, field = ex.build_alpha(cfg, eps)
    write_field(field, args.out or sys.stdout, pert.grid)
    print(f"eps={eps:.6g} |phi - x3|_C1={pert.c1_error():.6g} min det={pert.lower_bound:.6g}",
          file=sys.stderr)
    return 0


def _converge(args):
    cfg = ex.load_config(args.config)
    records = ex.run(cfg)
    out = args.out or cfg.output or sys.stdout
    ex.write_records(records, out)
    if args.plot:
        _plot(records, args.plot)
    return 0 if all(r.ok for r in records) else 1


def _plot(records, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok = [r for r in records if r.ok and r.energy > 0]
    eps = np.array([r.eps for r in ok])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(eps, [r.energy for r in ok], "o-", label="energy")
    gap = [abs(r.energy - r.limit) for r in ok]
    if any(g > 0 for g in gap):
        ax.loglog(eps, np.maximum(gap, 1e-300), "s--", label="|energy - limit|")
    ax.set_xlabel("eps")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _rates(args):
    records = ex.read_records(args.input)
    print(f"{ex.rate_fit(records, args.field):.6g}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="gamma", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("density", help="radial profile and convex envelope as CSV")
    d.add_argument("--model", choices=MODELS, required=True)
    d.add_argument("--c", type=float, default=1.0)
    d.add_argument("--radii", type=float, nargs="+", default=[1.0, 2.0])
    d.add_argument("--points", type=int, default=400)
    d.add_argument("--r-min", type=float, default=0.05)
    d.add_argument("--r-max", type=float, default=8.0)
    d.add_argument("--out")
    d.set_defaults(func=_density)

    m = sub.add_parser("mollify", help="dense samples of the mollified curve")
    m.add_argument("--curve", required=True)
    m.add_argument("--k", type=int, required=True)
    m.add_argument("--eta", type=float, required=True)
    m.add_argument("--loops", type=float, default=0.0, help="loop size at reversals")
    m.add_argument("--samples", type=int, default=1001)
    m.add_argument("--out")
    m.set_defaults(func=_mollify)

    r = sub.add_parser("recover", help="field dump of the composed recovery deformation")
    r.add_argument("--alpha", type=float, required=True)
    r.add_argument("--beta", type=float, required=True)
    r.add_argument("--config", required=True)
    r.add_argument("--eps", type=float)
    r.add_argument("--out")
    r.set_defaults(func=_recover)

    c = sub.add_parser("converge", help="energy sweep over the eps list")
    c.add_argument("--config", required=True)
    c.add_argument("--out")
    c.add_argument("--plot", help="write a log-log SVG plot")
    c.set_defaults(func=_converge)

    t = sub.add_parser("rates", help="fitted log-log slope of a record field")
    t.add_argument("--in", dest="input", required=True)
    t.add_argument("--field", default="energy")
    t.set_defaults(func=_rates)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (GammaError, ValueError, OSError) as exc:
        print(f"gamma: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
