"""Command-line interface emitting machine-readable tables and reports.

Tabular output is CSV with floats at 17 significant digits; reports and
manifests are JSON.  Every run writes a ``<output>.manifest.json`` recording
the exact argv, resolved configuration, seed and output paths, so any run
can be replayed byte for byte.  Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import RunManifest, parse_dataset, write_manifest
from .errors import DegenerateDistributionError
from .inference import ChainConfig, fit_report, posterior_summary
from .kernel import moments, prob_pdf
from .simulate import (
    CoherentErrorConfig,
    SimConfig,
    resample_runs,
    simulate_distributional,
    simulate_stepwise,
)
from .two_scale import DEFAULT_LEVELS, DiffusionRates, band_curve, pool_pdf


def _fmt(x):
    return format(float(x), ".17g")


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(c) if isinstance(c, float) else c for c in row])


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _rates_from(args):
    return DiffusionRates(d_ini=args.dini, d_n=args.dn, d_q=args.dq)


def _gate_list(parser, args, default_step=1):
    if args.gates is not None:
        try:
            gates = [int(tok) for tok in args.gates.split(",") if tok.strip()]
        except ValueError:
            parser.error("--gates must be a comma-separated list of integers")
        if not gates:
            parser.error("--gates is empty")
        return gates
    if args.gates_max is None:
        parser.error("one of --gates or --gates-max is required")
    step = args.gates_step if args.gates_step is not None else default_step
    if step < 1 or args.gates_max < 0:
        parser.error("--gates-max must be >= 0 and --gates-step >= 1")
    return list(range(0, args.gates_max + 1, step)) or [0]


def _add_rate_flags(sub):
    sub.add_argument("--dini", type=float, default=0.0, help="one-time SPAM exposure, rad^2")
    sub.add_argument("--dn", type=float, default=0.0, help="per-shot walk rate, rad^2/gate")
    sub.add_argument("--dq", type=float, default=0.0, help="pool-level walk rate, rad^2/gate")


def _add_gate_flags(sub):
    sub.add_argument("--gates", type=str, default=None, help="comma-separated gate counts")
    sub.add_argument("--gates-max", type=int, default=None, help="emit gate counts 0..N")
    sub.add_argument("--gates-step", type=int, default=None, help="stride for --gates-max")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="blochwalk",
        description="Two-scale angular-diffusion noise model: tables, simulation and fits",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("pdf", help="densities of the batch probability on a grid")
    _add_rate_flags(p)
    _add_gate_flags(p)
    p.add_argument("--grid", type=int, default=201, help="number of probability grid points")
    p.add_argument("--out", required=True)

    p = subs.add_parser("moments", help="single-level mean and variance vs gate count")
    p.add_argument("--dn", type=float, required=True)
    p.add_argument("--gates-max", type=int, required=True)
    p.add_argument("--out", required=True)

    p = subs.add_parser("bounds", help="bound/mean/percentile band vs gate count")
    _add_rate_flags(p)
    _add_gate_flags(p)
    p.add_argument(
        "--levels",
        type=str,
        default=",".join(str(l) for l in DEFAULT_LEVELS),
        help="comma-separated percentile levels in (0,1)",
    )
    p.add_argument("--seed", type=int, default=0, help="seed for the sampling fallback")
    p.add_argument("--out", required=True)

    p = subs.add_parser("simulate", help="Monte Carlo frequency draws")
    p.add_argument("--mode", choices=("stepwise", "distributional"), required=True)
    _add_rate_flags(p)
    _add_gate_flags(p)
    p.add_argument("--pools", type=int, default=1)
    p.add_argument("--shots", type=int, default=8192)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--coherent-fraction", type=float, default=None)
    p.add_argument("--over-rotation", type=float, default=None)
    p.add_argument("--out", required=True)

    p = subs.add_parser("fit", help="Bayesian fit of (d_ini, d_n, d_q) to a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--iters", type=int, default=1_000_000)
    p.add_argument("--burn-in", type=int, default=100_000)
    p.add_argument("--thin", type=int, default=20)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--rate-scale", type=float, default=0.08)
    p.add_argument("--theta-scale", type=float, default=0.2)
    p.add_argument("--out-report", required=True)
    p.add_argument("--out-chain", required=True)

    p = subs.add_parser("report", help="posterior summary of a stored chain")
    p.add_argument("--chain", required=True)
    p.add_argument("--out", required=True)

    return parser


def _cmd_pdf(parser, args, argv):
    gates = _gate_list(parser, args, default_step=1)
    if args.grid < 2:
        parser.error("--grid must be >= 2")
    rates = _rates_from(args)
    ps = np.linspace(0.0, 1.0, args.grid)
    rows = []
    for g in gates:
        tau = rates.d_ini + rates.d_n * g
        try:
            single = prob_pdf(ps, tau, clamp_negative=True)
        except DegenerateDistributionError:
            single = np.full(ps.shape, np.nan)
        try:
            pooled = pool_pdf(ps, rates, g)
        except DegenerateDistributionError:
            pooled = np.full(ps.shape, np.nan)
        for p, s, q in zip(ps, single, pooled):
            rows.append([g, float(p), float(s), float(q)])
    _write_csv(args.out, ["gates", "p", "single_level_pdf", "pool_pdf"], rows)
    return {"outputs": [args.out], "seed": None}


def _cmd_moments(parser, args, argv):
    if args.gates_max < 0:
        parser.error("--gates-max must be >= 0")
    rows = []
    for g in range(args.gates_max + 1):
        ms = moments(args.dn * g)
        rows.append([g, ms.mean, ms.variance])
    _write_csv(args.out, ["gates", "mean", "variance"], rows)
    return {"outputs": [args.out], "seed": None}


def _cmd_bounds(parser, args, argv):
    gates = _gate_list(parser, args, default_step=1)
    try:
        levels = tuple(float(tok) for tok in args.levels.split(",") if tok.strip())
    except ValueError:
        parser.error("--levels must be comma-separated numbers")
    if not levels or any(not (0.0 < l < 1.0) for l in levels):
        parser.error("--levels values must lie strictly inside (0, 1)")
    curve = band_curve(_rates_from(args), gates, levels=levels, seed=args.seed)
    header = ["gates", "lower", "upper", "pool_mean"] + [f"q{l:g}" for l in levels]
    _write_csv(args.out, header, list(curve.rows()))
    return {"outputs": [args.out], "seed": args.seed}


def _cmd_simulate(parser, args, argv):
    coherent_given = args.coherent_fraction is not None or args.over_rotation is not None
    if coherent_given and args.mode != "stepwise":
        parser.error("coherent-error flags require --mode stepwise")
    if (args.coherent_fraction is None) != (args.over_rotation is None):
        parser.error("--coherent-fraction and --over-rotation must be given together")
    gates = _gate_list(parser, args, default_step=4)
    cfg = SimConfig(
        rates=_rates_from(args),
        gates=gates,
        n_shots=args.shots,
        m_pools=args.pools,
        seed=args.seed,
        mode=args.mode,
    )
    if args.mode == "distributional":
        draws = simulate_distributional(cfg)
    elif coherent_given:
        coherent = CoherentErrorConfig(
            affected_fraction=args.coherent_fraction, over_rotation=args.over_rotation
        )
        draws = resample_runs(cfg, coherent)
    else:
        draws = simulate_stepwise(cfg)
    rows = [
        [d.gate_count, d.pool, d.observed_freq, d.true_pool_prob, d.pool_angle]
        for d in draws
    ]
    _write_csv(
        args.out,
        ["gates", "pool", "observed_freq", "true_pool_prob", "pool_angle"],
        rows,
    )
    return {"outputs": [args.out], "seed": args.seed}


def _cmd_fit(parser, args, argv):
    dataset = parse_dataset(args.data)
    cfg = ChainConfig(
        total_iterations=args.iters,
        burn_in=args.burn_in,
        thin=args.thin,
        rate_scale=args.rate_scale,
        theta_scale=args.theta_scale,
        seed=args.seed,
    )
    report, two_level, _ = fit_report(dataset, cfg, return_chains=True)
    rows = [
        [i, s.rates.d_ini, s.rates.d_n, s.rates.d_q, s.log_post]
        for i, s in enumerate(two_level.samples)
    ]
    _write_csv(args.out_chain, ["sample", "d_ini", "d_n", "d_q", "log_post"], rows)
    _write_json(args.out_report, report.to_dict())
    return {"outputs": [args.out_chain, args.out_report], "seed": args.seed, "primary": args.out_report}


def _cmd_report(parser, args, argv):
    with Path(args.chain).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["sample", "d_ini", "d_n", "d_q", "log_post"]
        if header != expected:
            raise ValueError(f"chain file header {header!r} != {expected!r}")
        body = [[float(c) for c in row] for row in reader if row]
    if not body:
        raise ValueError("chain file holds no samples")
    arr = np.array(body)
    best = int(np.argmax(arr[:, 4]))
    payload = {
        "posterior": posterior_summary(arr[:, 1:4]),
        "map_rates": {
            "d_ini": float(arr[best, 1]),
            "d_n": float(arr[best, 2]),
            "d_q": float(arr[best, 3]),
        },
        "n_samples": int(arr.shape[0]),
    }
    _write_json(args.out, payload)
    return {"outputs": [args.out], "seed": None}


_HANDLERS = {
    "pdf": _cmd_pdf,
    "moments": _cmd_moments,
    "bounds": _cmd_bounds,
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "report": _cmd_report,
}


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    argv = [str(a) for a in argv]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        result = _HANDLERS[args.command](parser, args, argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    primary = result.get("primary", result["outputs"][0])
    manifest = RunManifest(
        command=argv,
        config={k: v for k, v in vars(args).items() if k != "command"},
        seed=result.get("seed"),
        version=__version__,
        outputs=list(result["outputs"]),
    )
    write_manifest(manifest, str(primary) + ".manifest.json")
    return 0


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
