"""``pwa-sens`` command line: fit surrogates, compute moduli and radii, verify.

Every run writes a bundle to ``--out``:

* ``report.json``   results (schema ``pwa-sens-report-v1``)
* ``curve_*.csv``   modulus curves, header ``gamma,h1``
* ``surrogate_*.json`` surrogates in ``mmps-v1`` form
* ``manifest.json`` the run configuration; ``pwa-sens replay manifest.json``
  reproduces the bundle

Exit codes: 0 success, 2 usage, 3 format, 4 evaluation. Errors are printed
to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.interpolate import LinearNDInterpolator

from . import __version__
from .bench import (C3, EGGHOLDER_PARTITION, EGGHOLDER_PIECES, REGISTRY, partition_1d,
                    reference_segment)
from .errors import (DomainViolationError, EvaluationError, FormatError, InputError,
                     PwaSensError)
from .fitting import (FitConfig, default_fit_resolution, estimate_delta, fit_mmps, fit_segment,
                      refine_to_radius, sample)
from .mmps import MmpsFunction, from_json, to_json, validate
from .modulus import (DegenerateBoundError, confidence_radius, lower_bound_modulus,
                      modulus_curve, theorem_bound, verify_bound)
from .polytope import Polytope, grid_points

REPORT_SCHEMA = "pwa-sens-report-v1"
COMMANDS = ("fit", "modulus", "radius", "verify", "case-study")
EXIT_USAGE, EXIT_FORMAT, EXIT_EVAL = 2, 3, 4

log = logging.getLogger("pwa_sens")

# error levels quoted with the reference Eggholder surrogates
REFERENCE_DELTAS = {"f3-1": [19.9], "f3-2": [2.6, 12.5]}


@dataclass
class RunConfig:
    command: str
    function: Optional[str] = None
    surrogate: Optional[str] = None
    grid_resolution: Optional[int] = None
    fit_resolution: Optional[int] = None
    gamma_steps: int = 1000
    target_chi: Optional[float] = None
    diameter_budget: Optional[float] = None
    objective: str = "linf"
    seed: int = 0
    output_dir: str = "pwa-sens-out"
    pieces: Optional[str] = None
    region: Optional[str] = None
    partition: Optional[str] = None
    delta: Optional[float] = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InputError(f"unknown command {self.command!r}")
        for name in ("grid_resolution", "fit_resolution", "gamma_steps"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise InputError(f"{name} must be positive")
        if self.surrogate and not self.surrogate.startswith("ref:") \
                and not os.path.exists(self.surrogate):
            raise InputError(f"surrogate file {self.surrogate!r} does not exist")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ReportBundle:
    report: dict
    curves: dict = field(default_factory=dict)
    surrogates: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def write(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        _dump(os.path.join(out_dir, "report.json"), self.report)
        _dump(os.path.join(out_dir, "manifest.json"), self.manifest)
        for name, text in sorted(self.curves.items()):
            with open(os.path.join(out_dir, f"curve_{name}.csv"), "w", newline="") as fh:
                fh.write(text)
        for name, doc in sorted(self.surrogates.items()):
            _dump(os.path.join(out_dir, f"surrogate_{name}.json"), doc)


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _plain(obj):
    """Convert numpy scalars and arrays to JSON-friendly Python values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# -- inputs -----------------------------------------------------------------

def load_tabulated(path: str):
    """Objective tabulated in a CSV file: point columns then a value column.

    A non-numeric first row is taken as a header. One-dimensional tables are
    interpolated linearly; higher-dimensional ones piecewise linearly over a
    Delaunay triangulation of the points.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        float(rows[0][0])
    except (ValueError, IndexError):
        rows = rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise FormatError(f"non-numeric entry in {path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] < 2 or len(data) < 2:
        raise FormatError(f"{path} needs at least two rows of point and value columns")
    X, y = data[:, :-1], data[:, -1]
    domain = Polytope.box(X.min(axis=0), X.max(axis=0))
    if X.shape[1] == 1:
        order = np.argsort(X[:, 0])
        xs, ys = X[order, 0], y[order]

        def F(P):
            P = np.atleast_2d(np.asarray(P, dtype=float))
            if np.any(P[:, 0] < xs[0] - 1e-9) or np.any(P[:, 0] > xs[-1] + 1e-9):
                raise DomainViolationError("point outside the tabulated range")
            return np.interp(P[:, 0], xs, ys)
    else:
        interp = LinearNDInterpolator(X, y)

        def F(P):
            return interp(np.atleast_2d(np.asarray(P, dtype=float)))
    return F, domain


def resolve_function(name: str):
    """Objective and its domain from a benchmark name, a CSV or an mmps-v1 file."""
    if name in REGISTRY:
        b = REGISTRY[name]
        return b.evaluator, b.domain
    if name.endswith(".csv") and os.path.exists(name):
        return load_tabulated(name)
    if name.endswith(".json") and os.path.exists(name):
        f = load_surrogate(name)
        return f, f.domain
    raise InputError(f"unknown function {name!r}; known: {sorted(REGISTRY)} or a .csv/.json path")


def load_surrogate(source: str) -> MmpsFunction:
    if source.startswith("ref:"):
        seg = reference_segment(source[len("ref:"):])
        return MmpsFunction([seg], seg.region)
    try:
        with open(source) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{source} is not valid JSON: {exc}") from exc
    return from_json(doc)


def parse_region(text: str) -> Polytope:
    """``lo,hi`` for an interval or ``lo,hi;lo,hi`` for a box."""
    try:
        parts = [tuple(float(v) for v in p.split(",")) for p in text.split(";")]
        lo = [p[0] for p in parts]
        hi = [p[1] for p in parts]
    except (ValueError, IndexError) as exc:
        raise InputError(f"bad region {text!r}; expected lo,hi[;lo,hi...]") from exc
    return Polytope.box(lo, hi)


def _pieces(text, default):
    if text is None:
        return default
    if text == "adaptive":
        return text
    vals = [int(v) for v in text.split(",")]
    return vals[0] if len(vals) == 1 else vals


# -- pipelines ---------------------------------------------------------------

def _segment_summary(seg, delta, curve=None):
    lb = lower_bound_modulus(seg)
    out = {
        "pieces": len(seg),
        "c1": lb.c1,
        "c1_all_pairs": lb.c1_conservative,
        "c0": lb.c0,
        "max_subregion_diam": lb.zero_radius,
        "region_diam": lb.diam,
        "convention": lb.convention,
        "delta": delta,
    }
    if delta is not None:
        try:
            out["chi_theorem"] = theorem_bound(lb, delta)
            out["chi_theorem_uncapped"] = theorem_bound(lb, delta, cap=False)
            out["degenerate"] = False
        except DegenerateBoundError as err:
            out["chi_theorem"] = err.radius
            out["degenerate"] = True
        if curve is not None:
            out["chi_curve"] = confidence_radius(curve, delta)
    return out


def _curve(seg, config, name, curves):
    c = modulus_curve(seg, config.gamma_steps, seed=config.seed)
    curves[name] = c.to_csv()
    return c


def run_fit(config: RunConfig, bundle: ReportBundle):
    F, domain = resolve_function(config.function)
    if config.region:
        domain = parse_region(config.region)
    res = config.fit_resolution
    if config.target_chi is not None:
        fc = FitConfig(objective=config.objective, seed=config.seed, resolution=res)
        f, rep = refine_to_radius(F, domain, config.target_chi, fc, config.diameter_budget)
        bundle.report["refinement"] = rep.to_dict()
    else:
        partition = None
        if config.partition:
            partition = partition_1d([float(v) for v in config.partition.split(",")])
        fc = FitConfig(partition=partition, pieces_per_segment=_pieces(config.pieces, 3),
                       objective=config.objective, seed=config.seed, resolution=res,
                       adaptive_tol=config.delta)
        f, est = fit_mmps(F, fc, domain)
        bundle.report["delta"] = asdict(est)
        bundle.report["validation"] = asdict(validate(f))
    bundle.surrogates["fit"] = to_json(f)
    bundle.report["segments"] = [_segment_summary(s, None) for s in f.segments]


def run_modulus(config: RunConfig, bundle: ReportBundle):
    f = load_surrogate(config.surrogate)
    segs = []
    for p, seg in enumerate(f.segments):
        c = _curve(seg, config, f"segment{p}", bundle.curves)
        info = _segment_summary(seg, config.delta, c)
        info["mode"] = c.mode
        info["curve_max"] = float(c.values.max())
        segs.append(info)
    bundle.report["segments"] = segs


def _deltas(config, f):
    if config.delta is not None:
        return [config.delta] * len(f.segments)
    if config.function is None:
        raise InputError("need --delta or --function to know the approximation error")
    F, _ = resolve_function(config.function)
    res = config.grid_resolution or (20001 if f.dim == 1 else 161)
    return [estimate_delta(F, MmpsFunction([s], s.region), s.region, res).delta
            for s in f.segments]


def run_radius(config: RunConfig, bundle: ReportBundle):
    f = load_surrogate(config.surrogate)
    deltas = _deltas(config, f)
    segs = []
    for p, (seg, d) in enumerate(zip(f.segments, deltas)):
        c = _curve(seg, config, f"segment{p}", bundle.curves)
        segs.append(_segment_summary(seg, d, c))
    bundle.report["segments"] = segs


def run_verify(config: RunConfig, bundle: ReportBundle):
    if config.function is None:
        raise InputError("verify needs --function")
    F, _ = resolve_function(config.function)
    f = load_surrogate(config.surrogate)
    out = []
    for p, seg in enumerate(f.segments):
        c = _curve(seg, config, f"segment{p}", bundle.curves)
        rep = verify_bound(F, seg, grid_resolution=config.grid_resolution, curve=c,
                           delta=config.delta)
        out.append(rep.to_dict())
    bundle.report["segments"] = out
    bundle.report["verified"] = all(r["verified"] for r in out)


def _eggholder_case(config: RunConfig, bundle: ReportBundle):
    F = REGISTRY["eggholder1d"].evaluator
    region = Polytope.interval(*C3)
    grid = config.grid_resolution or 10_000
    refs = {}
    for name, deltas in REFERENCE_DELTAS.items():
        seg = reference_segment(name)
        c = _curve(seg, config, name, bundle.curves)
        measured = estimate_delta(F, MmpsFunction([seg], region), region, 2 * grid).delta
        entry = {
            "at_printed_delta": [_segment_summary(seg, d, c) for d in deltas],
            "at_measured_delta": _segment_summary(seg, measured, c),
            "verification": [verify_bound(F, seg, radius=confidence_radius(c, d),
                                          grid_resolution=grid, delta=d).to_dict()
                             for d in deltas],
        }
        refs[name] = entry
        bundle.surrogates[name] = to_json(MmpsFunction([seg], region))
    bundle.report["reference_surrogates"] = refs

    # target radius 15 with 10 of it reserved for the largest subregion
    target = config.target_chi if config.target_chi is not None else 15.0
    budget = config.diameter_budget
    if budget is None and config.target_chi is None:
        budget = 10.0
    fc = FitConfig(objective=config.objective, seed=config.seed, resolution=config.fit_resolution)
    f, rep = refine_to_radius(F, region, target, fc, budget)
    bundle.report["refinement"] = {"target_chi": target, "diameter_budget": budget,
                                   **rep.to_dict()}
    bundle.surrogates["refined"] = to_json(f)

    domain = REGISTRY["eggholder1d"].domain
    fc = FitConfig(partition=partition_1d(EGGHOLDER_PARTITION),
                   pieces_per_segment=list(EGGHOLDER_PIECES), objective=config.objective,
                   seed=config.seed, resolution=config.fit_resolution or 2049)
    f5, est = fit_mmps(F, fc, domain)
    regional = []
    for seg in f5.segments:
        X, _ = grid_points(seg.region, 4001)
        regional.append({"region": seg.region.bounds[0].tolist() + seg.region.bounds[1].tolist(),
                         "minimizer_objective": float(X[np.argmin(F(X))][0]),
                         "minimizer_surrogate": float(X[np.argmin(seg(X))][0])})
    bundle.report["five_region_fit"] = {"delta": asdict(est), "validation": asdict(validate(f5)),
                                        "regions": regional}
    bundle.surrogates["five_region"] = to_json(f5)


def _nmpc_case(config: RunConfig, bundle: ReportBundle):
    b = REGISTRY["nmpc-theta0"]
    res = config.fit_resolution or default_fit_resolution(2)
    samples = sample(b.evaluator, b.domain, res)
    fits = {}
    for k in (4, 24):
        seg = fit_segment(samples, k, config.objective, seed=config.seed)
        f = MmpsFunction([seg], b.domain)
        delta = estimate_delta(b.evaluator, f, b.domain, 2 * res).delta
        c = modulus_curve(seg, min(config.gamma_steps, 200), seed=config.seed)
        bundle.curves[f"pieces{k}"] = c.to_csv()
        info = _segment_summary(seg, delta, c)
        info["verification"] = verify_bound(b.evaluator, seg, grid_resolution=config.grid_resolution,
                                            curve=c, delta=delta).to_dict()
        fits[f"pieces{k}"] = info
        bundle.surrogates[f"pieces{k}"] = to_json(f)
    bundle.report["fits"] = fits
    bundle.report["feasible_diam"] = b.domain.diameter


def run_case_study(config: RunConfig, bundle: ReportBundle):
    name = config.function or "eggholder1d"
    if name == "eggholder1d":
        _eggholder_case(config, bundle)
    elif name == "nmpc-theta0":
        _nmpc_case(config, bundle)
    else:
        raise InputError(f"no case study for {name!r}; choose eggholder1d or nmpc-theta0")


PIPELINES = {"fit": run_fit, "modulus": run_modulus, "radius": run_radius,
             "verify": run_verify, "case-study": run_case_study}


def run(config: RunConfig, write: bool = True) -> ReportBundle:
    """Execute one pipeline and (by default) write its bundle to disk."""
    if config.command in ("modulus", "radius", "verify") and not config.surrogate:
        raise InputError(f"{config.command} needs --surrogate")
    if config.command == "fit" and not config.function:
        raise InputError("fit needs --function")
    bundle = ReportBundle(report={"schema": REPORT_SCHEMA, "command": config.command})
    PIPELINES[config.command](config, bundle)
    bundle.manifest = {"tool": "pwa-sens", "version": __version__, "seed": config.seed,
                       "config": config.to_dict()}
    bundle.report = _plain(bundle.report)
    if write:
        bundle.write(config.output_dir)
    return bundle


# -- argument parsing --------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # report usage errors through the JSON error path instead of exiting here
    def error(self, message):
        raise InputError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pwa-sens", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--function", help="benchmark name (eggholder1d, nmpc-theta0), "
                        "a CSV table or an mmps-v1 JSON file")
        sp.add_argument("--surrogate", help="mmps-v1 JSON file or ref:f3-1 / ref:f3-2")
        sp.add_argument("--grid-resolution", type=int, default=None,
                        help="points per axis for verification grids "
                             "(default 10000 in 1-D, 2001 in 2-D)")
        sp.add_argument("--fit-resolution", type=int, default=None,
                        help="points per axis for fitting samples (default 1501 in 1-D, 31 in 2-D)")
        sp.add_argument("--gamma-steps", type=int, default=1000,
                        help="modulus curve abscissae (default 1000)")
        sp.add_argument("--target-chi", type=float, default=None,
                        help="refine the fit until the certified radius is at most this")
        sp.add_argument("--diameter-budget", type=float, default=None,
                        help="with --target-chi, also cap the largest subregion diameter")
        sp.add_argument("--objective", choices=["linf", "l1"], default="linf",
                        help="fitting objective (default linf)")
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        sp.add_argument("--out", default="pwa-sens-out", help="output directory")
        sp.add_argument("--pieces", help="pieces per segment: N, N1,N2,... or adaptive")
        sp.add_argument("--region", help="fit region lo,hi[;lo,hi...] (default: function domain); "
                        "write --region=-330,-180 when lo is negative")
        sp.add_argument("--partition", help="1-D segment edges e0,e1,...,eP")
        sp.add_argument("--delta", type=float, default=None,
                        help="approximation error to certify (default: measured)")
        sp.add_argument("-v", "--verbose", action="store_true")

    helps = {"fit": "fit a surrogate to a function",
             "modulus": "export convexity modulus curves of a surrogate",
             "radius": "certified minimiser radii for a given or measured error",
             "verify": "compare grid minimisers of function and surrogate",
             "case-study": "reproduce the Eggholder or NMPC study"}
    for name in COMMANDS:
        common(sub.add_parser(name, help=helps[name]))
    rp = sub.add_parser("replay", help="re-run the configuration stored in a manifest")
    rp.add_argument("manifest")
    rp.add_argument("--out", default=None, help="output directory (default: the manifest's)")
    rp.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> RunConfig:
    if args.command == "replay":
        try:
            with open(args.manifest) as fh:
                man = json.load(fh)
            cfg = man["config"]
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise FormatError(f"cannot read manifest {args.manifest}: {exc}") from exc
        if args.out:
            cfg = {**cfg, "output_dir": args.out}
        return RunConfig.from_dict(cfg)
    return RunConfig(command=args.command, function=args.function, surrogate=args.surrogate,
                     grid_resolution=args.grid_resolution, fit_resolution=args.fit_resolution,
                     gamma_steps=args.gamma_steps, target_chi=args.target_chi,
                     diameter_budget=args.diameter_budget,
                     objective=args.objective, seed=args.seed, output_dir=args.out,
                     pieces=args.pieces, region=args.region, partition=args.partition,
                     delta=args.delta)


def _fail(code, exc):
    json.dump({"error": type(exc).__name__, "message": str(exc), "exit_code": code}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except InputError as exc:
        return _fail(EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
        bundle = run(config)
    except FormatError as exc:
        return _fail(EXIT_FORMAT, exc)
    except (InputError, KeyError) as exc:
        return _fail(EXIT_USAGE, exc)
    except (EvaluationError, DomainViolationError, PwaSensError) as exc:
        return _fail(EXIT_EVAL, exc)
    print(json.dumps({"output_dir": config.output_dir, "command": config.command,
                      "verified": bundle.report.get("verified")}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
