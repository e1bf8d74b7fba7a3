"""Command line entry point: ``geosom <subcommand> --config <file> [overrides]``.

Exit codes: 0 success, 2 validation error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from geosom import __version__, pipeline, synthetic
from geosom.errors import GeosomError

logger = logging.getLogger("geosom")


def _overrides(args: argparse.Namespace) -> dict:
    out: dict = {}

    def put(section, key, value):
        if value is not None:
            if section is None:
                out[key] = value
            else:
                out.setdefault(section, {})[key] = value

    put("paths", "output_dir", args.output_dir)
    put("som", "rows", args.rows)
    put("som", "cols", args.cols)
    put("som", "sigma0", args.sigma0)
    put("som", "theta0", args.theta0)
    put("som", "iterations", args.iterations)
    put("som", "time_constant_G", args.time_constant)
    put("dimred", "components", args.components)
    put("dimred", "feature_count", args.feature_count)
    put("dimred", "sigma", args.kernel_sigma)
    put("dimred", "kernel", args.kernel)
    put("validity", "k_min", args.k_min)
    put("validity", "k_max", args.k_max)
    put(None, "seed", args.seed)
    if args.outcome_features is not None:
        out["include_outcome_features"] = args.outcome_features
    return out


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, type=Path, help="pipeline configuration (JSON)")
    p.add_argument("--output-dir", help="override paths.output_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--rows", type=int, help="SOM lattice rows")
    p.add_argument("--cols", type=int, help="SOM lattice columns")
    p.add_argument("--sigma0", type=float, help="initial neighbourhood radius (lattice units)")
    p.add_argument("--theta0", type=float, help="initial learning rate (default 0.57)")
    p.add_argument("--iterations", type=int, help="number of sample presentations")
    p.add_argument("--time-constant", type=float, help="decay constant G")
    p.add_argument("--components", type=int, help="kernel PCA components")
    p.add_argument("--feature-count", type=int, help="number of features to keep")
    p.add_argument("--kernel", choices=["gaussian", "linear"])
    p.add_argument("--kernel-sigma", type=float, help="Gaussian bandwidth (default: median heuristic)")
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--outcome-features", dest="outcome_features", action="store_true", default=None,
                   help="append population and case counts to the clustering inputs")
    g.add_argument("--no-outcome-features", dest="outcome_features", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geosom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"geosom {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run every phase")
    _add_common(run)
    for phase in pipeline.PHASES:
        _add_common(sub.add_parser(phase, help=f"run the {phase} phase from persisted artifacts"))
    demo = sub.add_parser("make-fixture", help="write the synthetic mini-census and a config")
    demo.add_argument("directory", type=Path)
    demo.add_argument("--seed", type=int, default=2020)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "make-fixture":
            for name, path in synthetic.write_mini_census(args.directory, args.seed).items():
                print(f"{name}: {path}")
            return 0
        cfg = pipeline.PipelineConfig.load(args.config, _overrides(args))
        if args.command == "run":
            manifest = pipeline.run_pipeline(cfg)
        else:
            cfg.validate([args.command])
            manifest = pipeline.run_phase(cfg, args.command)
    except GeosomError as exc:
        print(f"geosom: error: {exc}", file=sys.stderr)
        return exc.exit_code
    for phase, result in manifest.phase_results.items():
        if args.command in ("run", phase):
            _print_result(phase, result)
    return 0


def _print_result(phase: str, result: dict) -> None:
    if phase == "report":
        print(f"{'cluster':<12}{'cases':>8}{'population':>12}{'cases/pop':>11}")
        for row in result["clusters"]:
            print(f"Cluster {row['cluster_id'] + 1:<4}{row['cases']:>8}{row['population']:>12,}{row['rate']:>11.4f}")
    else:
        summary = ", ".join(
            f"{k}={len(v)}" if isinstance(v, list) else f"{k}={v}"
            for k, v in result.items() if not isinstance(v, dict)
        )
        print(f"[{phase}] {summary}")


if __name__ == "__main__":
    sys.exit(main())
