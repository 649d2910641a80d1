"""Command line entry point.

    bdprecoding simulate <config> [--precoder ...] [--ebno ...] [--trials N]
                                  [--seed S] [--sweep KIND] [--out PATH] [--errbars]
    bdprecoding flops <config>
    bdprecoding condpdf <config>

Exit status is 0 on success, 2 for an invalid configuration and 3 for an
I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

import numpy as np

from .errors import ConfigInvalid, IoError
from .harness import SWEEPS, load_config, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


def _split(values: Optional[List[str]]) -> Optional[List[str]]:
    if not values:
        return None
    return [v.strip() for item in values for v in item.split(",") if v.strip()]


def _ebno_list(values: Optional[List[str]]) -> Optional[List[float]]:
    """Accept comma lists and inclusive ``start:stop:step`` ranges."""
    items = _split(values)
    if items is None:
        return None
    out = []
    for item in items:
        if ":" in item:
            start, stop, step = (float(x) for x in item.split(":"))
            if step <= 0:
                raise ValueError("range step must be positive")
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            out.extend(start + step * np.arange(n))
        else:
            out.append(float(item))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bdprecoding",
        description="Monte Carlo sweeps for MU-MIMO block-diagonalization precoders.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="flat YAML file of ExperimentConfig keys")
        p.add_argument("--precoder", action="append",
                       help="precoder tag; repeat or comma-separate")
        p.add_argument("--ebno", action="append",
                       help="Eb/N0 in dB; comma list or start:stop:step")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output CSV path")
        p.add_argument("--workers", type=int)
        p.add_argument("--errbars", action="store_true", default=None,
                       help="append the binomial standard error of the BER")

    sim = sub.add_parser("simulate", help="run the sweep described by the config")
    common(sim)
    sim.add_argument("--sweep", choices=SWEEPS, type=str.upper)
    common(sub.add_parser("flops", help="FLOP sweep over the number of users or antennas"))
    common(sub.add_parser("condpdf", help="condition numbers of effective channels"))
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {
            "precoders": _split(args.precoder),
            "ebno_db": _ebno_list(args.ebno),
            "trials": args.trials,
            "seed": args.seed,
            "output_path": args.out,
            "workers": args.workers,
            "errbars": args.errbars,
        }
        if args.command == "simulate":
            overrides["sweep"] = args.sweep
        else:
            overrides["sweep"] = args.command.upper()
        cfg = load_config(args.config, overrides)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IoError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        results = run_experiment(cfg)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    if cfg.sweep == "CONDPDF":
        for kind in cfg.precoders:
            for e in cfg.ebno_db:
                x = np.array([r.param for r in results
                              if r.precoder == kind and r.ebno_db == e])
                print(f"{kind:>16s} {e:5.1f} dB  mean ln-cond {x.mean():.4f}  "
                      f"std {x.std(ddof=1) if x.size > 1 else 0.0:.4f}")
    print(f"wrote {len(results)} rows to {cfg.output_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
