"""Command-line entry point ``fiap-sim``."""
from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .dfiap import BudgetExceeded
from .experiments import MODES, dumps, load_experiment, run
from .model import ConfigError
from .point_process.thinning import ThinningBoundError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fiap-sim", description=__doc__)
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--paths", type=int, help="paths per M (overrides n_paths)")
    p.add_argument("--grid", type=int, help="number of time cells (overrides n_cells)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_experiment(args.config, mode=args.mode, seed=args.seed, out=args.out,
                              paths=args.paths, grid=args.grid)
        summary = run(cfg, args.mode)
    except (ConfigError, BudgetExceeded, ThinningBoundError) as exc:
        print(f"fiap-sim: error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
