"""Command-line front end: ``chaostat <subcommand> [options]``.

Exit codes: 0 success, 2 usage or domain error, 3 parameter outside the
folding regime, 4 budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction

from gmpy2 import mpfr

from . import __version__
from .dynamics import DEFAULT_ITERATION_BUDGET, advance, iterate, to_decimal, to_real, working_precision
from .errors import BudgetExhausted, ChaostatError, DomainError, OutOfRange, ResourceError
from .measures import AtomicMeasure, birkhoff_measure, monte_carlo_measure, w1_distance
from .params import find_parabolic, find_superattracting
from .steering import SteerConfig, TargetWeights, steer_stage
from .symbolic import find_c, per_set, threshold

EXIT_OK, EXIT_USAGE, EXIT_REGIME, EXIT_BUDGET = 0, 2, 3, 4


@dataclass
class RunConfig:
    precision: int = 128
    seed: int = 0
    budget_iterations: int = DEFAULT_ITERATION_BUDGET
    budget_search: int = 64
    budget_stages: int = 2
    format: str = "json"
    out: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extra"] = dict(sorted(self.extra.items()))
        return d


class UsageError(Exception):
    pass


def read_config_file(path: str) -> dict:
    """key=value lines; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{ln}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _int(v, name):
    try:
        return int(v)
    except (TypeError, ValueError):
        raise UsageError(f"{name} must be an integer") from None


def build_config(args) -> RunConfig:
    cfg = RunConfig()
    fields = {"precision", "seed", "budget_iterations", "budget_search", "budget_stages", "format", "out"}
    file_vals = read_config_file(args.config) if args.config else {}
    for k, v in file_vals.items():
        if k not in fields:
            raise UsageError(f"unknown config key {k!r}")
        setattr(cfg, k, v)
    for k in fields:
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg, k, v)
    for k in ("precision", "seed", "budget_iterations", "budget_search", "budget_stages"):
        setattr(cfg, k, _int(getattr(cfg, k), k))
    if cfg.format not in ("json", "csv"):
        raise UsageError("format must be json or csv")
    if cfg.precision < 53:
        raise UsageError("precision must be >= 53 bits")
    return cfg


# ---- output ----------------------------------------------------------------------

def _emit(cfg: RunConfig, payload: dict, rows=None, header=None, stream=None):
    if cfg.format == "csv" and rows is not None:
        buf = io.StringIO()
        buf.write("# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        text = buf.getvalue()
    else:
        text = json.dumps({"config": cfg.to_dict(), **payload}, indent=1) + "\n"
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            fh.write(text)
    else:
        (stream or sys.stdout).write(text)


# ---- subcommands ---------------------------------------------------------------------

def cmd_iterate(args, cfg):
    seg = iterate(args.a, args.x, args.n, cfg.precision, cfg.budget_iterations)
    rows = [[i, to_decimal(v)] for i, v in enumerate(seg.points)]
    cfg.extra.update(a=args.a, x=args.x, n=args.n)
    _emit(cfg, {"rows": [{"index": i, "value": v} for i, v in rows]}, rows, ["index", "value"])


def _load_measure(path, bits):
    with open(path) as fh:
        return AtomicMeasure.from_json(fh.read(), bits)


def cmd_measure(args, cfg):
    bits = cfg.precision
    cfg.extra.update(a=args.a, mode=args.mode, n=args.n, bins=args.bins)
    if args.mode == "birkhoff":
        if args.x is None:
            raise UsageError("birkhoff mode needs --x")
        cfg.extra["x"] = args.x
        mu = birkhoff_measure(args.a, args.x, args.n, bits, cfg.budget_iterations).measure
    else:
        cfg.extra["k"] = args.k
        mu = monte_carlo_measure(args.a, args.k, args.n, cfg.seed, bits, cfg.budget_iterations)
    hist = mu.histogram(args.bins)
    payload = {"measure": mu.to_dict(),
               "histogram": [{"bin": i, "lo": str(Fraction(i, args.bins)), "mass": str(h)}
                             for i, h in enumerate(hist)]}
    if args.w1_point is not None:
        cfg.extra["w1_point"] = args.w1_point
        payload["w1_to_point"] = to_decimal(w1_distance(mu, AtomicMeasure.dirac(args.w1_point, bits)))
    if args.w1_against:
        cfg.extra["w1_against"] = args.w1_against
        payload["w1_to_file"] = to_decimal(w1_distance(mu, _load_measure(args.w1_against, bits)))
    rows = [[to_decimal(x), str(w)] for x, w in mu.atoms]
    _emit(cfg, payload, rows, ["location", "weight"])
    for key in ("w1_to_point", "w1_to_file"):
        if key in payload and cfg.format == "csv":
            print(f"{key}={payload[key]}", file=sys.stderr)


def cmd_orbits(args, cfg):
    bits = cfg.precision
    a = to_real(args.a, bits)
    c = threshold(bits)
    if a <= c:
        raise OutOfRange(f"a={args.a} is not in the folding regime (c, 4] with c={to_decimal(c)}")
    if args.N < 1:
        raise UsageError("N must be >= 1")
    cfg.extra.update(a=args.a, N=args.N)
    fams = [per_set(a, n, bits) for n in range(1, args.N + 1)]
    rows = [[f.index, f.word, f.k_n, " ".join(to_decimal(p) for p in f.g_points), to_decimal(f.residual)]
            for f in fams]
    _emit(cfg, {"orbits": [f.to_dict() for f in fams]}, rows, ["index", "word", "k_n", "points", "residual"])


def _first_superattracting(q: int, bits: int, lo="2", hi="4", cells=4096):
    """First parameter in (lo, hi) at which 1/2 has least period q."""
    with working_precision(bits):
        lo, hi = to_real(lo, bits), to_real(hi, bits)
        half = mpfr(0.5)
        fn = lambda a: advance(a, half, q) - half
        prev, fprev = lo, fn(lo)
        for i in range(1, cells + 1):
            a = lo + (hi - lo) * i / cells
            fa = fn(a)
            if (fa > 0) != (fprev > 0):
                root = find_superattracting(q, (prev, a), bits)
                x, least = half, None
                for p in range(1, q + 1):
                    x = advance(root, x, 1)
                    if abs(x - half) < mpfr(2) ** (-bits // 2):
                        least = p
                        break
                if least == q:
                    return root
            prev, fprev = a, fa
    raise ChaostatError(f"no superattracting parameter of period {q} found")


def cmd_find(args, cfg):
    bits = cfg.precision
    cfg.extra["kind"] = args.kind
    if args.kind == "c":
        res = find_c(bits)
        _emit(cfg, {"result": res.to_dict()}, [[to_decimal(res.c), to_decimal(res.fold_residual),
                                               to_decimal(res.cycle_residual)]],
              ["c", "fold_residual", "cycle_residual"])
        return
    if args.period is None:
        raise UsageError(f"find {args.kind} needs --period")
    cfg.extra["period"] = args.period
    if args.bracket:
        cfg.extra["bracket"] = list(args.bracket)
        center = find_superattracting(args.period, args.bracket, bits)
    else:
        center = _first_superattracting(args.period, bits)
    if args.kind == "superattracting":
        _emit(cfg, {"result": {"a": to_decimal(center), "period": args.period}},
              [[to_decimal(center), args.period]], ["a", "period"])
        return
    pp = find_parabolic(args.period, center, bits, steps=cfg.budget_search)
    _emit(cfg, {"result": pp.to_dict(), "center": to_decimal(center)},
          [[to_decimal(pp.a), to_decimal(pp.point), pp.period, to_decimal(pp.multiplier_residual),
            to_decimal(pp.cycle_residual)]],
          ["a", "point", "period", "multiplier_residual", "cycle_residual"])


def parse_targets(spec: str) -> TargetWeights:
    """Inline 'l1,l2,...[;tail]' or a JSON file {"weights": [...], "tail_bound": ...}."""
    if spec.strip().startswith("{") or spec.endswith(".json"):
        text = spec if spec.strip().startswith("{") else open(spec).read()
        return TargetWeights.from_dict(json.loads(text))
    if spec.strip() == "":
        return TargetWeights((), Fraction(1))
    body, _, tail = spec.partition(";")
    w = tuple(Fraction(x.strip()) for x in body.split(",") if x.strip())
    return TargetWeights(w, Fraction(tail) if tail else Fraction(1) - sum(w, Fraction(0)))


def cmd_steer(args, cfg):
    bits = max(cfg.precision, 128)
    targets = parse_targets(args.targets)
    cfg.extra.update(start_period=args.start_period, start_center=args.start_center,
                     targets=targets.to_dict(), k=args.k, delta=args.delta,
                     samples=args.samples, probes=args.probes)
    start = find_parabolic(args.start_period, args.start_center, bits)
    sc = SteerConfig(bits=bits, samples=args.samples, probes=args.probes, seed=cfg.seed)
    try:
        rec = steer_stage(start, targets, args.delta, args.k, sc)
    except BudgetExhausted as exc:
        if exc.partial is not None:
            path = (cfg.out or "steer") + ".partial.json"
            with open(path, "w") as fh:
                fh.write(json.dumps({"config": cfg.to_dict(), "partial": exc.partial.to_dict()}, indent=1))
            print(f"partial record written to {path}", file=sys.stderr)
        raise
    _emit(cfg, {"record": rec.to_dict()})


def cmd_halting_demo(args, cfg):
    from .halting import DriverConfig, construction_driver, load_suite
    K = cfg.budget_stages if args.K is None else args.K
    if K < 1:
        raise UsageError("K must be >= 1")
    suite = load_suite(args.suite)
    cfg.extra.update(K=K, suite=args.suite or "shipped", samples=args.samples, probes=args.probes)
    dc = DriverConfig(bits=max(cfg.precision, 256), seed=cfg.seed, samples=args.samples,
                      probes=args.probes)
    try:
        state = construction_driver(suite, K, dc)
    except BudgetExhausted as exc:
        if exc.partial is not None:
            for line in exc.partial.log:
                print(line, file=sys.stderr)
        raise
    for line in state.log:
        print(line, file=sys.stderr)
    _emit(cfg, {"state": state.to_dict()})


def cmd_w1(args, cfg):
    bits = cfg.precision
    cfg.extra.update(mu=args.mu, nu=args.nu)
    d = w1_distance(_load_measure(args.mu, bits), _load_measure(args.nu, bits))
    _emit(cfg, {"w1": to_decimal(d)}, [[to_decimal(d)]], ["w1"])


# ---- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--precision", type=int, help="mantissa bits (default 128)")
    common.add_argument("--seed", type=int)
    common.add_argument("--format", choices=["json", "csv"])
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--budget-iterations", dest="budget_iterations", type=int)
    common.add_argument("--budget-search", dest="budget_search", type=int)
    common.add_argument("--budget-stages", dest="budget_stages", type=int)
    common.add_argument("--config", help="key=value file; flags override it")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="chaostat", description="Physical measures of the logistic family")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("iterate", parents=[common], help="orbit table")
    s.add_argument("--a", required=True)
    s.add_argument("--x", required=True)
    s.add_argument("--n", type=int, required=True)
    s.set_defaults(func=cmd_iterate)

    s = sub.add_parser("measure", parents=[common], help="empirical measures")
    s.add_argument("--a", required=True)
    s.add_argument("--mode", choices=["birkhoff", "montecarlo"], default="montecarlo")
    s.add_argument("--x")
    s.add_argument("--k", type=int, default=50)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--bins", type=int, default=20)
    s.add_argument("--w1-point", dest="w1_point")
    s.add_argument("--w1-against", dest="w1_against")
    s.set_defaults(func=cmd_measure)

    s = sub.add_parser("orbits", parents=[common], help="periodic classes Per_a(1..N)")
    s.add_argument("--a", required=True)
    s.add_argument("--N", type=int, default=5)
    s.set_defaults(func=cmd_orbits)

    s = sub.add_parser("find", parents=[common], help="threshold and special parameters")
    s.add_argument("kind", choices=["c", "superattracting", "parabolic"])
    s.add_argument("--period", type=int)
    s.add_argument("--bracket", nargs=2, metavar=("LO", "HI"))
    s.set_defaults(func=cmd_find)

    s = sub.add_parser("steer", parents=[common], help="one steering stage")
    s.add_argument("--start-period", dest="start_period", type=int, default=3)
    s.add_argument("--start-center", dest="start_center", default="3.8284")
    s.add_argument("--targets", required=True, help="'l1,l2,...' or a JSON file")
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--delta", default="0.05")
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--probes", type=int, default=5)
    s.set_defaults(func=cmd_steer)

    s = sub.add_parser("halting-demo", parents=[common], help="nested stages driven by a machine suite")
    s.add_argument("--suite", help="suite JSON (default: shipped suite)")
    s.add_argument("--K", type=int)
    s.add_argument("--samples", type=int, default=20)
    s.add_argument("--probes", type=int, default=3)
    s.set_defaults(func=cmd_halting_demo)

    s = sub.add_parser("w1", parents=[common], help="Wasserstein-1 distance of two measure files")
    s.add_argument("--mu", required=True)
    s.add_argument("--nu", required=True)
    s.set_defaults(func=cmd_w1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        args.func(args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OutOfRange as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BudgetExhausted, ResourceError) as exc:
        print(f"error: budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ChaostatError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
