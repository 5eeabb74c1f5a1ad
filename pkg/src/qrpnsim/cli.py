"""Command-line front end.

    qrpnsim budget|sweep|stability|fit-r --config PATH --fmin HZ --fmax HZ --ppd N
            [--phases N] [--out PATH] [--format csv|json]
"""
from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import budget as nb
from . import loop, output, quantum
from .model import ConfigError, FrequencyGrid, load_config, paper_config_path


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrpnsim", description=__doc__.splitlines()[0] if __doc__ else None)
    p.add_argument("command", choices=["budget", "sweep", "stability", "fit-r"])
    p.add_argument("--config", default=None, help="config JSON (default: bundled paper.json)")
    p.add_argument("--fmin", type=float, default=None, help="Hz (default 100; stability: auto)")
    p.add_argument("--fmax", type=float, default=None, help="Hz (default 1e6; stability: auto)")
    p.add_argument("--ppd", type=int, default=100, help="points per decade (>= 8)")
    p.add_argument("--phases", type=int, default=72, help="number of squeeze angles in [0, pi) for sweep (>= 4)")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--plot-data", default=None, help="also write long-form (f_hz, series, value) records here")
    p.add_argument("--r", type=float, default=None, help="override the squeeze factor r")
    p.add_argument("--angle", type=float, default=None, help="override the squeeze angle (rad)")
    p.add_argument("--target-db", type=float, default=12.6, help="fit-r: antisqueezing increase to match")
    p.add_argument("--at-hz", type=float, default=20e3, help="fit-r: frequency of the match")
    return p


def _fail(msg: str) -> int:
    print(f"qrpnsim: error: {msg}", file=sys.stderr)
    return 2


def _grid(args) -> FrequencyGrid:
    fmin = 100.0 if args.fmin is None else args.fmin
    fmax = 1e6 if args.fmax is None else args.fmax
    if not 0 < fmin < fmax:
        raise ValueError("need 0 < fmin < fmax")
    return FrequencyGrid.log_spaced(fmin, fmax, args.ppd)


def _emit(args, text: str) -> None:
    if args.out:
        output.write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.ppd < 8:
        return _fail("--ppd must be >= 8")
    if args.command == "sweep" and args.phases < 4:
        return _fail("--phases must be >= 4")
    try:
        sys_ = load_config(args.config or paper_config_path())
        if args.r is not None or args.angle is not None:
            sys_ = sys_.with_squeezing(r=args.r, angle=args.angle)
    except ConfigError as exc:
        return _fail(str(exc))

    meta = {"config_sha256": sys_.config_hash(), "command": args.command}
    try:
        if args.command == "budget":
            b = nb.measured_budget(sys_, _grid(args))
            text = output.budget_csv(b, meta) if args.format == "csv" else output.budget_json(b, meta)
            _emit(args, text)
            if args.plot_data:
                output.emit_plot_data(b, args.plot_data, config_hash=meta["config_sha256"])
        elif args.command == "sweep":
            phases = np.arange(args.phases) * (math.pi / args.phases)
            m = nb.phase_sweep_map(sys_, _grid(args), phases)
            meta["squeeze_factor_r"] = sys_.squeezer.squeeze_factor_r
            text = output.sweep_csv(m, meta) if args.format == "csv" else output.sweep_json(m, meta)
            _emit(args, text)
            if args.plot_data:
                output.emit_plot_data(m, args.plot_data, config_hash=meta["config_sha256"])
        elif args.command == "stability":
            if sys_.controller is None:
                return _fail("config has no controller section")
            if args.fmin is None and args.fmax is None:
                grid = loop.stability_grid(sys_, args.ppd)
            else:
                grid = _grid(args)
            rep = loop.is_stable(loop.LoopModel.from_system(sys_), grid)
            verdict = "stable" if rep.stable else "unstable"
            print(f"{verdict} margin={rep.margin:.6g} open_loop_unstable_poles={rep.open_loop_unstable_poles} "
                  f"encirclements={rep.encirclements}")
            if args.out:
                doc = {"stable": rep.stable, "margin": rep.margin,
                       "open_loop_unstable_poles": rep.open_loop_unstable_poles,
                       "encirclements": rep.encirclements, "metadata": meta}
                output.write_atomic(args.out, json.dumps(doc, indent=1, sort_keys=True) + "\n")
        else:
            r = quantum.fit_r_to_antisqueezing(sys_, args.target_db, args.at_hz)
            sq_db, asq_db = quantum.squeeze_db(r)
            print(f"r={r:.6f} generated_squeezing_db={sq_db:.4f} generated_antisqueezing_db={asq_db:.4f}")
            if args.out:
                doc = {"r": r, "generated_squeezing_db": sq_db, "generated_antisqueezing_db": asq_db,
                       "target_db": args.target_db, "at_hz": args.at_hz, "metadata": meta}
                output.write_atomic(args.out, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    except (ValueError, loop.GridError) as exc:
        return _fail(str(exc))
    except OSError as exc:
        return _fail(f"cannot write output: {exc}")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
