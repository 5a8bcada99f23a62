"""Command-line interface: Monte Carlo sweeps and the figure report."""

from __future__ import annotations

import argparse
import os
import sys

from .harness import SweepSpec, emit_csv, emit_plotdata, sweep
from .solvers import SolverError

EXIT_VALIDATION = 2
EXIT_SOLVER = 3

# Hard defaults for `simulate`; a config file overrides these and explicit
# command-line flags override the config file.
_SIM_DEFAULTS = {
    "users": "2",
    "trials": "100000",
    "min_errors": "100",
    "seed": "0",
    "power": "1.0",
    "gamma_grid": "0.01",
    "g": "1.0",
    "workers": "1",
    "batch": "20000",
}
_SIM_REQUIRED = ("scheme", "k", "n", "snr_db", "fb_noise_db", "out")


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _parse_fb_list(text: str) -> tuple[float | None, ...]:
    out: list[float | None] = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        out.append(None if tok.lower() == "perfect" else float(tok))
    return tuple(out)


def _load_config(path: str) -> dict[str, str]:
    """key=value lines; '#' starts a comment; keys mirror the CLI flags."""
    values: dict[str, str] = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line (expected key=value): {raw.strip()!r}")
            key, val = line.split("=", 1)
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcfsim",
                                     description="Feedback-code simulator for the "
                                                 "Gaussian broadcast channel")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo sweep")
    sim.add_argument("--config", help="key=value file mirroring the flags")
    sim.add_argument("--scheme", choices=("ol", "eol", "lqg", "bmcl", "sk-tdd",
                                          "sk", "uncoded"))
    sim.add_argument("--users", type=int)
    sim.add_argument("--k", type=int, help="message bits per user")
    sim.add_argument("--n", type=int, help="channel uses")
    sim.add_argument("--snr-db", help="comma list of forward SNRs in dB")
    sim.add_argument("--fb-noise-db",
                     help="comma list of feedback noise powers in dB, or 'perfect'")
    sim.add_argument("--trials", type=int)
    sim.add_argument("--min-errors", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--power", type=float)
    sim.add_argument("--out", help="CSV output path")
    sim.add_argument("--plotdata", help="optional grouped plot-data path")
    sim.add_argument("--gamma-grid", type=float,
                     help="power-sharing grid step for the spreading code")
    sim.add_argument("--g", type=float,
                     help="balance gain of the two-user refinement code")
    sim.add_argument("--workers", type=int)
    sim.add_argument("--batch", type=int)

    rep = sub.add_parser("report", help="render figures and their CSV data")
    rep.add_argument("--out", default="report", help="output directory")
    rep.add_argument("--trials", type=int, default=20_000)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--quick", action="store_true",
                     help="smaller grids for a fast smoke report")
    return parser


def _resolve(args: argparse.Namespace) -> dict[str, str]:
    """Merge CLI > config file > defaults into one string-valued mapping."""
    merged = dict(_SIM_DEFAULTS)
    if args.config:
        merged.update(_load_config(args.config))
    for key in ("scheme", "users", "k", "n", "snr_db", "fb_noise_db", "trials",
                "min_errors", "seed", "power", "out", "plotdata", "gamma_grid",
                "g", "workers", "batch"):
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = str(val)
    missing = [k for k in _SIM_REQUIRED if not merged.get(k)]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise ValueError(f"missing required options: {flags}")
    return merged


def _cmd_simulate(args: argparse.Namespace) -> int:
    opt = _resolve(args)
    spec = SweepSpec(
        scheme=opt["scheme"],
        L=int(opt["users"]), K=int(opt["k"]), N=int(opt["n"]),
        snr_db=_parse_float_list(opt["snr_db"]),
        fb_noise_db=_parse_fb_list(opt["fb_noise_db"]),
        P=float(opt["power"]),
        trials=int(opt["trials"]), min_errors=int(opt["min_errors"]),
        seed=int(opt["seed"]), batch=int(opt["batch"]),
        workers=int(opt["workers"]),
        g=float(opt["g"]), gamma_step=float(opt["gamma_grid"]))

    def progress(r):
        print(f"{r.scheme} snr={r.snr_b_db:g}dB fb={r.sigma_f2_db:g}dB "
              f"bler={r.mean_bler:.3e} trials={r.trials} power={r.avg_power:.4f}")

    rows = sweep(spec, progress=progress)
    emit_csv(rows, opt["out"])
    print(f"wrote {opt['out']}")
    if opt.get("plotdata"):
        emit_plotdata(rows, opt["plotdata"])
        print(f"wrote {opt['plotdata']}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    from .figures import render_bler_figure, render_capacity_figure

    os.makedirs(args.out, exist_ok=True)
    png, csv = render_capacity_figure(args.out)
    print(f"wrote {png} and {csv}")

    snr_grid = (2.0, 4.0) if args.quick else (0.0, 2.0, 4.0, 6.0)
    rows = []
    for scheme in ("ol", "eol", "lqg", "bmcl"):
        spec = SweepSpec(scheme=scheme, L=2, K=3, N=9, snr_db=snr_grid,
                         fb_noise_db=(None,), trials=args.trials,
                         seed=args.seed)
        rows.extend(sweep(spec))
    png, csv = render_bler_figure(rows, args.out, stem="bler_perfect_feedback")
    print(f"wrote {png} and {csv}")

    fb_grid = (None, -30.0, -20.0) if args.quick else (None, -30.0, -20.0, -10.0)
    rows = []
    for scheme in ("ol", "lqg", "bmcl"):
        spec = SweepSpec(scheme=scheme, L=2, K=3, N=9, snr_db=(4.0,),
                         fb_noise_db=fb_grid, trials=args.trials,
                         seed=args.seed)
        rows.extend(sweep(spec))
    png, csv = render_bler_figure(rows, args.out, stem="bler_noisy_feedback")
    print(f"wrote {png} and {csv}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        return _cmd_report(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
