"""Command-line front end: experiment orchestration and machine-readable output.

Subcommands::

    validate   run an oracle/invariant suite (exit 1 on failure)
    kernel     tabulate the transition kernel on a radial grid (CSV)
    sample     dump one jump-path or subordinator skeleton (CSV)
    estimate   single semigroup estimate (JSON)
    converge   coupled mass sweep (CSV)
    l2         weighted-L2 sweep over a base-point grid (CSV)

All randomness derives from --seed.  Field families take dotted keys
(``--set A.w=2.0`` or ``A.w=2.0`` lines in --config); outputs embed the
config digest and package version as comment headers and use shortest
round-trip float formatting, so identical (config, seed, version) runs are
byte-identical.  The output directory may be overridden with the
RELHEAT_OUT_DIR environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import (
    EstimatorKnobs,
    coupled_mass_sweep,
    estimate_semigroup,
    l2_experiment,
)
from .fields import make_fields, make_payoff
from .levy import LevyConfig, sample_path
from .levy import kernel as kernel_density
from .subordinator import sample_sub_path
from .validate import run_suite

USAGE_ERROR = 2


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    """Shortest round-trip decimal representation."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _parse_scalar(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _collect_params(pairs: list[str]) -> dict:
    """Parse dotted key=value pairs into nested {group: {key: value}}."""
    out: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got '{pair}'")
        key, _, raw = pair.partition("=")
        key = key.strip()
        parts = key.split(".")
        if len(parts) != 2:
            raise UsageError(f"dotted key must look like GROUP.param, got '{key}'")
        group, name = parts
        if group not in ("A", "V", "g", "chi", "knobs"):
            raise UsageError(f"unknown parameter group '{group}' in '{key}'")
        value: object
        if "," in raw:
            value = [_parse_scalar(v) for v in raw.split(",")]
        else:
            value = _parse_scalar(raw)
        out.setdefault(group, {})[name] = value
    return out


def _read_config_file(path: str) -> list[str]:
    lines = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        lines.append(line)
    return lines


def _out_path(arg_out: str | None, default_name: str) -> Path:
    out_dir = os.environ.get("RELHEAT_OUT_DIR", ".")
    if arg_out is None:
        return Path(out_dir) / default_name
    p = Path(arg_out)
    return p if p.is_absolute() else Path(out_dir) / p


def _header_lines(digest: str, extra: dict | None = None) -> list[str]:
    lines = [f"# version={__version__}", f"# digest={digest}"]
    for key, val in (extra or {}).items():
        lines.append(f"# {key}={val}")
    return lines


def _write_csv(path: Path, digest: str, extra: dict, columns: list[str], rows) -> None:
    lines = _header_lines(digest, extra)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="relheat", description=__doc__,
                                  formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, needs_fields=True):
        p.add_argument("--d", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--set", dest="sets", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted parameter, e.g. A.w=2.0")
        p.add_argument("--config", type=str, default=None,
                       help="file of KEY=VALUE lines (same dotted keys)")
        if needs_fields:
            p.add_argument("--A", type=str, default="zero",
                           help="vector potential family")
            p.add_argument("--V", type=str, default="zero",
                           help="scalar potential family")
            p.add_argument("--g", type=str, default="gauss", help="payoff family")
            p.add_argument("--x", type=str, default="0", help="base point, comma separated")
            p.add_argument("--t", type=float, default=1.0)
            p.add_argument("--n", type=int, default=10000)
            p.add_argument("--mode", type=str, default=None, choices=["coupled", "direct"])
            p.add_argument("--eps", type=float, default=None)
            p.add_argument("--eps-t", type=float, default=None)
            p.add_argument("--h", type=float, default=None)
            p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("validate", help="run an oracle/invariant suite")
    p.add_argument("--suite", type=str, default="all",
                   choices=["kernel", "levy", "subordinator", "coupling", "all"])
    p.add_argument("--out", type=str, default=None)

    p = sub.add_parser("kernel", help="tabulate the transition kernel")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--m", type=float, default=0.0)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--r-max", type=float, default=10.0)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--out", type=str, default=None)

    p = sub.add_parser("sample", help="dump a sampled path as CSV")
    p.add_argument("--kind", type=str, default="jump", choices=["jump", "sub"])
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--m", type=float, default=0.0)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--eps-t", type=float, default=1e-4)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)

    p = sub.add_parser("estimate", help="single semigroup estimate")
    common(p)
    p.add_argument("--j", type=int, required=True, choices=[1, 2, 3])
    p.add_argument("--m", type=float, required=True)

    p = sub.add_parser("converge", help="coupled mass sweep")
    common(p)
    p.add_argument("--j", type=int, required=True, choices=[1, 2, 3])
    p.add_argument("--m-list", type=str, required=True,
                   help="decreasing positive masses, comma separated (0 appended)")

    p = sub.add_parser("l2", help="weighted-L2 paired-difference sweep")
    common(p)
    p.add_argument("--j", type=int, required=True, choices=[1, 2, 3])
    p.add_argument("--m-list", type=str, required=True)
    p.add_argument("--grid", type=str, default="-2,2,11",
                   help="lo,hi,count for the base-point grid (trapezoid weights)")
    return top


def _knobs_from_args(args, params: dict) -> EstimatorKnobs:
    overrides = dict(params.get("knobs", {}))
    for name, arg in (("mode", "mode"), ("eps", "eps"), ("eps_t", "eps_t"),
                      ("h", "h"), ("workers", "workers")):
        val = getattr(args, arg, None)
        if val is not None:
            overrides[name] = val
    defaults = EstimatorKnobs()
    valid = set(defaults.__dataclass_fields__)
    unknown = set(overrides) - valid
    if unknown:
        raise UsageError(f"unknown knobs field(s): {sorted(unknown)}")
    return EstimatorKnobs(**{**{}, **overrides})


def _fields_from_args(args, params: dict):
    d = args.d
    chi = params.get("chi", {})
    chi_family = chi.pop("family", None) if chi else None
    try:
        fields = make_fields(
            d,
            a_family=params.get("A", {}).pop("family", args.A),
            v_family=params.get("V", {}).pop("family", args.V),
            a_params=params.get("A", {}),
            v_params=params.get("V", {}),
            chi_family=chi_family,
            chi_params=chi,
        )
        g_params = dict(params.get("g", {}))
        g_family = g_params.pop("family", args.g)
        payoff = make_payoff(g_family, d, **g_params)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    x = np.array([float(v) for v in str(args.x).split(",")])
    if x.size != d:
        raise UsageError(f"--x needs {d} coordinates, got {x.size}")
    return fields, payoff, x


def _cmd_validate(args) -> int:
    checks = run_suite(args.suite)
    lines = []
    ok_all = True
    for name, ok, detail in checks:
        status = "PASS" if ok else "FAIL"
        ok_all &= ok
        line = f"[{status}] {name}" + (f" ({detail})" if detail else "")
        print(line)
        lines.append(line)
    if args.out is not None:
        path = _out_path(args.out, "validate.txt")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
    return 0 if ok_all else 1


def _cmd_kernel(args) -> int:
    rs = np.linspace(0.0, args.r_max, args.points)
    digest = json.dumps({"d": args.d, "m": args.m, "t": args.t, "r_max": args.r_max,
                         "points": args.points}, sort_keys=True)
    import hashlib

    digest = hashlib.sha256(digest.encode()).hexdigest()[:16]
    rows = [(r, kernel_density(float(r), args.t, args.m, d=args.d)) for r in rs]
    path = _out_path(args.out, "kernel.csv")
    _write_csv(path, digest, {"d": args.d, "m": _fmt(args.m), "t": _fmt(args.t)},
               ["r", "k"], rows)
    print(f"wrote {path}")
    return 0


def _cmd_sample(args) -> int:
    rng = np.random.Generator(np.random.Philox(key=[args.seed, 0]))
    path = _out_path(args.out, f"{args.kind}_path.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "jump":
        jp = sample_path(LevyConfig(d=args.d, m=args.m, eps=args.eps), args.t, rng)
        lines = [f"# m={_fmt(args.m)}", f"# eps={_fmt(args.eps)}",
                 f"# t_max={_fmt(args.t)}", f"# seed={args.seed}"]
        lines.append("s," + ",".join(f"dx_{i + 1}" for i in range(args.d)))
        for k in range(jp.times.size):
            lines.append(_fmt(jp.times[k]) + "," + ",".join(_fmt(v) for v in jp.deltas[k]))
    else:
        sp = sample_sub_path(args.t, args.eps_t, rng)
        lines = [f"# m={_fmt(args.m)}", f"# eps={_fmt(args.eps_t)}",
                 f"# t_max={_fmt(args.t)}", f"# seed={args.seed}",
                 f"# drift={_fmt(sp.drift)}"]
        lines.append("s,dx_1")
        for k in range(sp.times.size):
            lines.append(f"{_fmt(sp.times[k])},{_fmt(sp.sizes[k])}")
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path}")
    return 0


def _cmd_estimate(args, params) -> int:
    fields, payoff, x = _fields_from_args(args, params)
    knobs = _knobs_from_args(args, params)
    if knobs.mode == "coupled" and args.m == 0.0:
        knobs = EstimatorKnobs(**{**knobs.__dict__})
    est = estimate_semigroup(args.j, x, args.t, args.m, fields, payoff, args.n,
                             knobs, seed=args.seed)
    record = {
        "mean_re": est.mean.real,
        "mean_im": est.mean.imag,
        "stderr": est.stderr,
        "n": est.n_samples,
        "rejected": est.rejected,
        "digest": est.config_digest,
        "version": __version__,
    }
    path = _out_path(args.out, "estimate.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(json.dumps(record, sort_keys=True))
    return 0


def _parse_m_list(text: str) -> list[float]:
    try:
        masses = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--m-list must be comma-separated numbers: {exc}") from exc
    if not masses:
        raise UsageError("--m-list is empty")
    return masses


def _cmd_converge(args, params) -> int:
    fields, payoff, x = _fields_from_args(args, params)
    knobs = _knobs_from_args(args, params)
    masses = _parse_m_list(args.m_list)
    try:
        rows = coupled_mass_sweep(args.j, x, args.t, masses, fields, payoff, args.n,
                                  knobs, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    digest = rows[0].estimate.config_digest
    out_rows = [
        (r.m, r.estimate.mean.real, r.estimate.mean.imag, r.estimate.stderr,
         r.paired_diff.mean.real, r.paired_diff.stderr)
        for r in rows
    ]
    path = _out_path(args.out, "converge.csv")
    _write_csv(path, digest, {"j": args.j, "n": args.n, "seed": args.seed},
               ["m", "mean_re", "mean_im", "stderr", "paired_diff", "paired_diff_se"],
               out_rows)
    print(f"wrote {path}")
    return 0


def _cmd_l2(args, params) -> int:
    fields, payoff, x = _fields_from_args(args, params)
    knobs = _knobs_from_args(args, params)
    masses = _parse_m_list(args.m_list)
    try:
        lo, hi, count = (float(v) for v in args.grid.split(","))
        count = int(count)
    except ValueError as exc:
        raise UsageError(f"--grid must be lo,hi,count: {exc}") from exc
    if args.d != 1:
        raise UsageError("the l2 subcommand builds 1-d grids only")
    pts = np.linspace(lo, hi, count)[:, None]
    w = np.full(count, (hi - lo) / (count - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    try:
        rows = l2_experiment(args.j, pts, w, args.t, masses, fields, payoff, args.n,
                             knobs, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    import hashlib

    digest = hashlib.sha256(json.dumps(
        {"grid": [lo, hi, count], "j": args.j, "n": args.n, "seed": args.seed},
        sort_keys=True).encode()).hexdigest()[:16]
    out_rows = [(r.m, r.l2, r.l2_se) for r in rows]
    path = _out_path(args.out, "l2.csv")
    _write_csv(path, digest, {"j": args.j, "n": args.n, "seed": args.seed},
               ["m", "l2", "l2_se"], out_rows)
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # accept literal dotted flags (--A.w 2.0 or --A.w=2.0) as --set pairs
    cleaned = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "." in tok.split("=")[0]:
            key = tok[2:]
            if "=" in key:
                cleaned.extend(["--set", key])
            else:
                if i + 1 >= len(argv):
                    print(f"error: dotted flag {tok} needs a value", file=sys.stderr)
                    return USAGE_ERROR
                cleaned.extend(["--set", f"{key}={argv[i + 1]}"])
                i += 1
        else:
            cleaned.append(tok)
        i += 1

    parser = _build_parser()
    try:
        args = parser.parse_args(cleaned)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0

    try:
        sets = list(getattr(args, "sets", []))
        if getattr(args, "config", None):
            sets = _read_config_file(args.config) + sets
        params = _collect_params(sets)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "kernel":
            return _cmd_kernel(args)
        if args.command == "sample":
            return _cmd_sample(args)
        if args.command == "estimate":
            return _cmd_estimate(args, params)
        if args.command == "converge":
            return _cmd_converge(args, params)
        if args.command == "l2":
            return _cmd_l2(args, params)
        raise UsageError(f"unknown command {args.command}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
