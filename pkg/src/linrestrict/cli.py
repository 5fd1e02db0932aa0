"""Command-line interface over network files and line queries.

Exit codes: 0 success, 1 usage error (bad flags or a degenerate query),
2 computation error (file, schema, shape, or metric failures).  Every
failure prints a single ``code: message`` line to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analysis, attributions, io_formats
from .errors import LinRestrictError, QueryError
from .exactline import LineQuery, canonicalize, exactline_network


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _parse_point(inline: str | None, path: str | None, flag: str) -> np.ndarray:
    if (inline is None) == (path is None):
        raise _UsageError(f"exactly one of --{flag} or --{flag}-file is required")
    if inline is not None:
        try:
            return np.array([float(t) for t in inline.split(",") if t.strip() != ""])
        except ValueError:
            raise _UsageError(f"--{flag}: expected comma-separated floats") from None
    tokens = open(path).read().replace(",", " ").split()
    try:
        return np.array([float(t) for t in tokens])
    except ValueError:
        raise LinRestrictError(f"{path}: expected whitespace/comma-separated floats") from None


def _load(args):
    return io_formats.load_network(args.network, fold=getattr(args, "fold", False))


def _emit(obj, args):
    fmt = getattr(args, "format", "structured")
    if args.out is None:
        io_formats.export_partitions(obj, sys.stdout, fmt)
    else:
        io_formats.export_partitions(obj, args.out, fmt)


def _query(args, net, from_flag="from", to_flag="to"):
    q = _parse_point(
        getattr(args, from_flag.replace("-", "_")),
        getattr(args, f"{from_flag.replace('-', '_')}_file"),
        from_flag,
    )
    r = _parse_point(
        getattr(args, to_flag.replace("-", "_")),
        getattr(args, f"{to_flag.replace('-', '_')}_file"),
        to_flag,
    )
    return LineQuery(q.reshape(net.input_shape), r.reshape(net.input_shape))


def _cmd_exactline(args) -> int:
    net = _load(args)
    part = exactline_network(net, _query(args, net))
    if args.canonical:
        part = canonicalize(part)
    _emit(part, args)
    return 0


def _cmd_ig(args) -> int:
    net = _load(args)
    baseline = _parse_point(args.baseline, args.baseline_file, "baseline")
    x = _parse_point(args.input, args.input_file, "input")
    baseline = baseline.reshape(net.input_shape)
    x = x.reshape(net.input_shape)
    if args.method == "exact":
        rep = attributions.exact_ig(net, baseline, x, args.output_index)
    else:
        if args.samples is None:
            raise _UsageError("--samples is required for sampling methods")
        rep = attributions.riemann_ig(
            net, baseline, x, args.output_index, args.samples, args.method
        )
    _emit(rep, args)
    return 0


def _cmd_ig_samples(args) -> int:
    net = _load(args)
    baseline = _parse_point(args.baseline, args.baseline_file, "baseline").reshape(
        net.input_shape
    )
    x = _parse_point(args.input, args.input_file, "input").reshape(net.input_shape)
    if args.completeness:
        res = attributions.find_m_tilde(
            net, baseline, x, args.output_index, tol=args.tolerance, cap=args.cap
        )
    else:
        res = attributions.samples_to_tolerance(
            net,
            baseline,
            x,
            args.output_index,
            scheme=args.method,
            tol=args.tolerance,
            stability=args.stability,
            cap=args.cap,
        )
    _emit(res, args)
    return 0


def _cmd_density(args) -> int:
    net = _load(args)
    query = _query(args, net)
    rep = analysis.partition_density(net, query)
    if args.output_index is not None:
        rep.gradient_deviation = analysis.gradient_deviation(
            net, query, args.output_index
        )
    _emit(rep, args)
    return 0


def _parse_lines_file(path, net):
    queries = []
    for ln, raw in enumerate(open(path), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ";" not in line:
            raise LinRestrictError(
                f"{path}:{ln}: expected 'q1,q2,... ; r1,r2,...'"
            )
        left, right = line.split(";", 1)
        q = np.array([float(t) for t in left.split(",")])
        r = np.array([float(t) for t in right.split(",")])
        queries.append(LineQuery(q.reshape(net.input_shape), r.reshape(net.input_shape)))
    if not queries:
        raise LinRestrictError(f"{path}: no line queries found")
    return queries


def _cmd_sweep(args) -> int:
    net = _load(args)
    queries = _parse_lines_file(args.lines, net)
    threads = int(os.environ.get("LINRESTRICT_THREADS", "1") or "1")

    def work(query):
        return analysis.decision_segments(net, query)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, queries))
    else:
        results = [work(q) for q in queries]

    lines = ["line,alpha_lo,alpha_hi,class"]
    for i, segs in enumerate(results):
        for s in segs:
            lines.append(
                f"{i},{io_formats._f17(s.alpha_lo)},{io_formats._f17(s.alpha_hi)},"
                f"{s.class_index}"
            )
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


def _cmd_fgsm(args) -> int:
    net = _load(args)
    x = _parse_point(args.input, args.input_file, "input").reshape(net.input_shape)
    adv = analysis.fgsm_direction(net, x, args.epsilon, args.label)
    doc = {
        "kind": "fgsm",
        "epsilon": args.epsilon,
        "label": args.label,
        "input": x.reshape(-1).tolist(),
        "fgsm_point": adv.reshape(-1).tolist(),
    }
    if args.compare_random:
        if args.seed is None:
            raise _UsageError("--seed is required with --compare-random")
        rnd = analysis.random_direction(x, args.epsilon, args.seed)
        fgsm_density = analysis.partition_density(net, LineQuery(x, adv))
        rnd_density = analysis.partition_density(net, LineQuery(x, rnd))
        doc["seed"] = args.seed
        doc["random_point"] = rnd.reshape(-1).tolist()
        doc["fgsm_density"] = io_formats._structured_doc(fgsm_density)
        doc["random_density"] = io_formats._structured_doc(rnd_density)
        doc["density_ratio"] = fgsm_density.density / rnd_density.density
    if args.out is None:
        io_formats._write_json(doc, sys.stdout)
    else:
        io_formats._write_json(doc, args.out)
    return 0


def _add_point_flags(p, names):
    for name in names:
        p.add_argument(f"--{name}", default=None, help=f"{name} point, comma-separated")
        p.add_argument(f"--{name}-file", default=None, help=f"file with the {name} point")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="linrestrict")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("exactline", help="partition a line into linear pieces")
    p.add_argument("--network", required=True)
    _add_point_flags(p, ["from", "to"])
    p.add_argument("--canonical", action="store_true", help="minimize the partition")
    p.add_argument("--fold", action="store_true", help="fold affine runs at load")
    p.add_argument("--format", choices=["structured", "tabular"], default="tabular")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_exactline)

    p = sub.add_parser("ig", help="integrated-gradient attributions")
    p.add_argument("--network", required=True)
    _add_point_flags(p, ["baseline", "input"])
    p.add_argument("--output-index", type=int, required=True)
    p.add_argument(
        "--method", choices=["exact", "left", "right", "trapezoid"], default="exact"
    )
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--format", choices=["structured", "tabular"], default="structured")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_ig)

    p = sub.add_parser("ig-samples", help="samples needed for accurate attributions")
    p.add_argument("--network", required=True)
    _add_point_flags(p, ["baseline", "input"])
    p.add_argument("--output-index", type=int, required=True)
    p.add_argument("--method", choices=["left", "right", "trapezoid"], default="left")
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--stability", type=int, default=5)
    p.add_argument("--cap", type=int, default=1000)
    p.add_argument(
        "--completeness",
        action="store_true",
        help="search by completeness gap (left sum) instead of error vs exact",
    )
    p.add_argument("--format", choices=["structured", "tabular"], default="structured")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_ig_samples)

    p = sub.add_parser("density", help="linear-partition density along a line")
    p.add_argument("--network", required=True)
    _add_point_flags(p, ["from", "to"])
    p.add_argument(
        "--output-index",
        type=int,
        default=None,
        help="also report gradient deviation for this output",
    )
    p.add_argument("--format", choices=["structured", "tabular"], default="structured")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_density)

    p = sub.add_parser("sweep", help="decision segments for many lines")
    p.add_argument("--network", required=True)
    p.add_argument("--lines", required=True, help="file of 'q1,... ; r1,...' queries")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("fgsm", help="signed-gradient perturbation (and comparison)")
    p.add_argument("--network", required=True)
    _add_point_flags(p, ["input"])
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--compare-random", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_fgsm)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        print(f"usage-error: {exc}", file=sys.stderr)
        return 1
    except QueryError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1
    except LinRestrictError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 2
    except IndexError as exc:
        print(f"index-error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
