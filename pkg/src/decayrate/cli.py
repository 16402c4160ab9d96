"""Command-line front end: ``decayrate {simulate,estimate,crb,experiment,bench}``.

Exit status: 0 on success, 1 on runtime failure, 2 on invalid usage.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import sys
import time

import numpy as np

from decayrate import bench as mc
from decayrate import estimators as est
from decayrate.audio import (BLIND_ESTIMATORS, export_rows, export_segments,
                             load_wav, make_burst_fixture, read_manifest,
                             run_experiment)
from decayrate.bounds import CRB_MODES, crb_rho
from decayrate.errors import DecayRateError, ParameterError
from decayrate.model import DecayParams, SampledSignal, synth_polack

ALIASES = {"hybrid": "hybrid_mln", "mln": "hybrid_mln"}


class UsageError(Exception):
    pass


def parse_n_range(text):
    """``"100:1000:100"`` (inclusive), ``"1000"`` or ``"200,500,1000"``."""
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        fields = part.split(":")
        try:
            nums = [int(f) for f in fields]
        except ValueError:
            raise UsageError(f"bad N specification {part!r}") from None
        if len(nums) == 1:
            values.append(nums[0])
        elif len(nums) in (2, 3):
            start, stop = nums[0], nums[1]
            step = nums[2] if len(nums) == 3 else 1
            if step == 0:
                raise UsageError("N range step must be non-zero")
            values.extend(range(start, stop + (1 if step > 0 else -1), step))
        else:
            raise UsageError(f"bad N specification {part!r}")
    if not values:
        raise UsageError("empty N list")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise UsageError(f"N list must be strictly ascending: {values}")
    return values


def parse_floats(items):
    out = []
    for item in items:
        for part in item.split(","):
            if part.strip():
                try:
                    out.append(float(part))
                except ValueError:
                    raise UsageError(f"not a number: {part!r}") from None
    return out


def parse_estimators(text, allowed):
    names = [ALIASES.get(s.strip(), s.strip()) for s in text.split(",") if s.strip()]
    bad = [n for n in names if n not in allowed]
    if bad or not names:
        raise UsageError(f"unknown estimator(s) {bad}; choose from {list(allowed)}")
    return names


def parse_segment(text):
    try:
        a, b = (int(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"segment must be start:end, got {text!r}") from None
    if not 0 <= a < b:
        raise UsageError(f"segment needs 0 <= start < end, got {text!r}")
    return a, b


# ---------------------------------------------------------------- simulate

def cmd_simulate(args):
    rhos = parse_floats(args.rho) if args.rho else [0.008, 0.004, 0.002]
    try:
        config = mc.McConfig(
            rho_list=rhos, n_list=parse_n_range(args.n),
            sigma_v2=args.sigma_v2, sigma_d2=args.sigma_d2,
            trials=args.trials, seed=args.seed,
            estimators=parse_estimators(args.estimators, mc.ESTIMATOR_NAMES),
            noise_knowledge=args.noise_knowledge, crb_mode=args.crb_mode)
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    report = mc.run_sweep(config, workers=args.workers)
    mc.export_report(report, args.out)
    print(f"# MSE of rho_hat in dB, {config.trials} trials, "
          f"sigma_v2={config.sigma_v2:g}, sigma_d2={config.sigma_d2:g}, "
          f"noise {config.noise_knowledge}; CRB ({config.crb_mode}) derived "
          f"from the Gaussian decay likelihood")
    for rho in config.rho_list:
        print(f"\nrho = {rho:g}")
        names = list(config.estimators)
        print(f"{'N':>6} " + " ".join(f"{n:>11}" for n in names) + f" {'CRB':>9}")
        for n in config.n_list:
            cells = [report.row(name, rho, n) for name in names]
            line = " ".join(f"{c.mse_db:11.2f}" + ("*" if c.flagged else "")
                            for c in cells)
            print(f"{n:>6} {line} {cells[0].crb_db:9.2f}")
    print(f"\nwrote {len(report)} rows to {args.out}")
    return 0


# ---------------------------------------------------------------- estimate

def _run_one(name, signal, noise, args):
    if name == "ni":
        return est.estimate_ni(signal, noise)
    if name == "lr":
        return est.estimate_lr(signal)
    if name == "ml":
        return est.estimate_ml(signal)
    if name == "hybrid_mln":
        return est.estimate_hybrid_mln(signal, noise, args.n_l,
                                       refinements=args.refinements)
    hi, lo = args.fit_range
    return est.estimate_schroeder(signal, hi, lo)


def cmd_estimate(args):
    name = parse_estimators(args.estimator,
                            mc.ESTIMATOR_NAMES + ("schroeder",))[0]
    segments = [parse_segment(s) for s in args.segment]
    if args.noise_var is not None and args.noise_var < 0:
        raise UsageError("--noise-var must be >= 0")
    signal = load_wav(args.input)
    if not segments:
        segments = [(0, len(signal))]
    if args.noise_var is not None:
        noise = est.NoiseEstimate(args.noise_var)
    elif args.noise_from_tail is not None:
        noise = est.estimate_noise_floor(signal, args.noise_from_tail)
    else:
        noise = est.NoiseEstimate(0.0)
    status = 0
    for a, b in segments:
        seg = signal.segment(a, b)
        try:
            res = _run_one(name, seg, noise, args)
        except DecayRateError as exc:
            print(f"error: {name} on [{a}, {b}): {exc}", file=sys.stderr)
            status = 1
            continue
        if args.json_lines:
            print(json.dumps({"segment": [a, b], "estimator": name,
                              "rho_hat": res.rho_hat, "t60_s": res.t60_s,
                              "valid": res.valid,
                              "sigma_d2_hat": noise.sigma_d2_hat,
                              "diagnostics": res.diagnostics}))
        else:
            t60 = f"{res.t60_s:.4f} s" if res.valid else "n/a"
            diag = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                             for k, v in res.diagnostics.items())
            print(f"[{a}, {b}) {name}: rho_hat={res.rho_hat:.6g} T60={t60} "
                  f"valid={res.valid} ({diag})")
    return status


# --------------------------------------------------------------------- crb

def cmd_crb(args):
    ns = parse_n_range(args.n)
    if ns[0] < 2:
        raise UsageError("N must be >= 2")
    rhos = parse_floats(args.rho)
    try:
        params = [DecayParams(r, args.sigma_v2, args.sigma_d2) for r in rhos]
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    if args.sigma_v2 <= 0:
        raise UsageError("--sigma-v2 must be > 0")
    lines = [("rho", "n", "mode", "crb_rho", "crb_db")]
    for p in params:
        for n in ns:
            c = crb_rho(p, n, args.mode)
            lines.append((f"{p.rho_d:.9g}", str(n), args.mode, f"{c:.9g}",
                          f"{10 * math.log10(c):.9g}"))
    text = "\n".join(",".join(l) for l in lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(f"# CRB on rho ({args.mode}: "
          + {"nuisance": "sigma_v2 unknown, noise known",
             "full": "sigma_v2 and sigma_d2 unknown",
             "rho-only": "all variances known"}[args.mode] + ")")
    sys.stdout.write(text)
    return 0


# -------------------------------------------------------------- experiment

def cmd_experiment(args):
    estimators = parse_estimators(args.estimators, BLIND_ESTIMATORS)
    if args.synthetic:
        fx = make_burst_fixture(args.synthetic, seed=args.seed)
        dry, rirs, manifest_path = fx["dry"], fx["rirs"], fx["manifest"]
        noise_seed = fx["noise_seed"] if args.noise_seed is None else args.noise_seed
    else:
        if not (args.dry and args.rir and args.manifest):
            raise UsageError("need --dry, --rir and --manifest, or --synthetic DIR")
        dry, rirs, manifest_path = args.dry, args.rir, args.manifest
        noise_seed = args.seed if args.noise_seed is None else args.noise_seed
    manifest = read_manifest(manifest_path)
    rows, records = run_experiment(dry, rirs, manifest, args.snr_db,
                                   noise_path=args.noise, noise_seed=noise_seed,
                                   estimators=estimators, workers=args.workers)
    export_rows(rows, args.out, estimators)
    if args.segments_out:
        export_segments(records, args.segments_out)
    print(f"{'rir':<20} {'T60 Schroeder':>13} " +
          " ".join(f"{n:>11}" for n in estimators))
    for r in rows:
        if r.error:
            print(f"{r.rir_id:<20} error: {r.error}")
            continue
        med = " ".join(f"{r.median_t60_s[n]:11.3f}" if n in r.median_t60_s
                       else f"{'-':>11}" for n in estimators)
        print(f"{r.rir_id:<20} {r.t60_ground_truth_s:13.3f} {med}")
    print(f"(median T60 in seconds over {len(manifest.decay_segments)} "
          f"segments; wrote {args.out})")
    return 1 if any(r.error for r in rows) else 0


# ------------------------------------------------------------------- bench

def multiply_counts(n, refinements=5, n_l=None, seed=0):
    """Instrumented multiply counts of NI, hybrid MLN and ML on one
    Polack-model realization of length ``n``."""
    n_l = n_l or max(2, n // 5)
    sig = synth_polack(DecayParams(0.008, 1.0, 0.01), n, seed)
    noise = est.NoiseEstimate(0.01)
    counts = {}
    for name, fn in (
            ("ni", lambda o: est.estimate_ni(sig, noise, ops=o)),
            ("hybrid_mln", lambda o: est.estimate_hybrid_mln(
                sig, noise, n_l, refinements=refinements, ops=o)),
            ("ml", lambda o: est.estimate_ml(sig, ops=o))):
        ops = est.OpCounter()
        fn(ops)
        counts[name] = ops.mul
    return counts


def cmd_bench(args):
    ns = parse_n_range(args.n)
    if ns[0] < 3:
        raise UsageError("N must be >= 3")
    if args.repeat < 1:
        raise UsageError("--repeat must be >= 1")
    print(f"{'N':>6} {'estimator':>11} {'multiplies':>11} {'reference':>11} "
          f"{'median us':>10}")
    for n in ns:
        n_l = args.n_l or max(2, n // 5)
        counts = multiply_counts(n, args.refinements, n_l, args.seed)
        sig = synth_polack(DecayParams(0.008, 1.0, 0.01), n, args.seed)
        noise = est.NoiseEstimate(0.01)
        runners = {
            "ni": lambda: est.estimate_ni(sig, noise),
            "lr": lambda: est.estimate_lr(sig),
            "ml": lambda: est.estimate_ml(sig),
            "hybrid_mln": lambda: est.estimate_hybrid_mln(
                sig, noise, n_l, refinements=args.refinements),
        }
        refs = {"ni": 4 * n,
                "hybrid_mln": args.refinements * (3 * (n + 1) + n_l + 1)}
        for name, fn in runners.items():
            times = []
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                fn()
                times.append(time.perf_counter() - t0)
            med = statistics.median(times) * 1e6
            mul = counts.get(name)
            ref = refs.get(name)
            print(f"{n:>6} {name:>11} {mul if mul is not None else '-':>11} "
                  f"{ref if ref is not None else '-':>11} {med:10.1f}")
        print(f"{n:>6} {'ratio':>11} hybrid_mln/ni = "
              f"{counts['hybrid_mln'] / counts['ni']:.2f}")
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(
        prog="decayrate",
        description="Noise-robust decay-rate and reverberation-time estimation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte-Carlo MSE sweep, CSV report")
    s.add_argument("--rho", action="append",
                   help="decay rate(s) per sample, comma separated or repeated "
                        "(default 0.008,0.004,0.002)")
    s.add_argument("--n", default="100:1000:100",
                   help="window lengths, start:stop:step inclusive or list")
    s.add_argument("--sigma-v2", type=float, default=1.0)
    s.add_argument("--sigma-d2", type=float, default=0.01)
    s.add_argument("--trials", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--estimators", default="ni,lr,ml,hybrid_mln")
    s.add_argument("--noise-knowledge", choices=mc.NOISE_KNOWLEDGE,
                   default="exact")
    s.add_argument("--crb-mode", choices=CRB_MODES, default="nuisance")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default="simulate.csv", help="CSV report path")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate the decay rate of a WAV file")
    e.add_argument("input", help="WAV file")
    e.add_argument("--estimator", default="ni",
                   help="ni, lr, ml, hybrid_mln or schroeder")
    e.add_argument("--segment", action="append", default=[],
                   help="start:end in samples; repeat for several")
    g = e.add_mutually_exclusive_group()
    g.add_argument("--noise-var", type=float, help="known noise power")
    g.add_argument("--noise-from-tail", type=float, metavar="FRACTION",
                   help="estimate noise power from the trailing fraction")
    e.add_argument("--n-l", type=int, default=None,
                   help="hybrid MLN early window (default N/5)")
    e.add_argument("--refinements", type=int, default=5)
    e.add_argument("--fit-range", type=float, nargs=2, default=(-5.0, -25.0),
                   metavar=("HI_DB", "LO_DB"), help="Schroeder fit range")
    e.add_argument("--json-lines", action="store_true",
                   help="one JSON object per segment")
    e.set_defaults(func=cmd_estimate)

    c = sub.add_parser("crb", help="Cramer-Rao bound table for rho")
    c.add_argument("--rho", action="append", default=None)
    c.add_argument("--sigma-v2", type=float, default=1.0)
    c.add_argument("--sigma-d2", type=float, default=0.0)
    c.add_argument("--n", default="100:1000:100")
    c.add_argument("--mode", choices=CRB_MODES, default="nuisance",
                   help="nuisance: sigma_v2 estimated, noise known; full: "
                        "both variances estimated; rho-only: all known")
    c.add_argument("--out", default=None, help="optional CSV path")
    c.set_defaults(func=cmd_crb)

    x = sub.add_parser("experiment",
                       help="blind T60 experiment on reverberant excitation")
    x.add_argument("--synthetic", metavar="DIR",
                   help="write the interrupted-noise fixture to DIR and use it")
    x.add_argument("--dry")
    x.add_argument("--rir", action="append")
    x.add_argument("--manifest")
    x.add_argument("--noise", help="noise WAV (default: white Gaussian)")
    x.add_argument("--noise-seed", type=int, default=None)
    x.add_argument("--seed", type=int, default=2024)
    x.add_argument("--snr-db", type=float, default=12.0)
    x.add_argument("--estimators", default=",".join(BLIND_ESTIMATORS))
    x.add_argument("--workers", type=int, default=1)
    x.add_argument("--out", default="experiment.csv")
    x.add_argument("--segments-out", default=None,
                   help="per-segment long-format CSV")
    x.set_defaults(func=cmd_experiment)

    b = sub.add_parser("bench", help="multiply counts and timings")
    b.add_argument("--n", default="1000")
    b.add_argument("--refinements", type=int, default=5)
    b.add_argument("--n-l", type=int, default=None)
    b.add_argument("--repeat", type=int, default=50)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "crb" and args.rho is None:
        args.rho = ["0.008"]
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DecayRateError, OSError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
