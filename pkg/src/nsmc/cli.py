"""Command-line experiment runner.

Subcommands: converge | misspec | cluster | semisup | verify. Every run is
driven by a flat key-value config (INI file section per subcommand, all keys
overridable by flags of the same name), writes results.csv plus auxiliary
CSVs to --out, and records the fully resolved config alongside the results.

Exit codes: 0 success, 1 verification-check failure, 2 config/input error.
"""

import os

# Pin BLAS thread pools before numpy loads so results are byte-identical at
# any --threads setting (cell-level parallelism uses separate processes that
# inherit this environment).
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import configparser
import sys

from . import experiments
from .experiments import ConfigError, SCHEMAS


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="nsmc",
        description="Experiment runner for the pairwise rank-comparison "
                    "embedding estimator and its baselines.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--out", default=os.path.join("runs", name),
                       help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for independent grid cells")
        p.add_argument("--seed", type=int, default=None,
                       help="override the seed list with a single root seed")
        if name == "verify":
            p.add_argument("--debug-flip-b", action="store_true",
                           help=argparse.SUPPRESS)
        for key in schema:
            if key == "seed":
                continue  # covered by the shared --seed flag
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)
    return parser


def _file_section(path, subcommand):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    ini = configparser.ConfigParser()
    try:
        ini.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not ini.has_section(subcommand):
        return {}
    return dict(ini.items(subcommand))


def main(argv=None):
    args = _build_parser().parse_args(argv)
    sub = args.subcommand
    overrides = {key: getattr(args, key) for key in SCHEMAS[sub]
                 if getattr(args, key, None) is not None}
    if args.seed is not None:
        if "seeds" in SCHEMAS[sub]:
            overrides["seeds"] = str(args.seed)
        else:
            overrides["seed"] = str(args.seed)
    try:
        file_values = _file_section(args.config, sub)
        cfg = experiments.resolve_config(sub, file_values, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    text = experiments.config_text(sub, cfg)
    digest = experiments.config_hash(sub, cfg)
    with open(os.path.join(out_dir, "resolved_config.txt"), "w") as fh:
        fh.write(text)
        fh.write(f"# config_hash = {digest}\n")

    try:
        if sub == "verify":
            if getattr(args, "debug_flip_b", False):
                from . import loss as loss_mod

                loss_mod.DEBUG_FLIP_GRAD_WEIGHT = True
            _, all_passed = experiments.run_verify(cfg, out_dir, threads=args.threads)
            if not all_passed:
                print("verification FAILED; see checks.csv", file=sys.stderr)
                return 1
            print(f"verification passed; results in {out_dir}")
            return 0
        report = experiments.RUNNERS[sub](cfg, out_dir, threads=args.threads)
        print(f"{sub}: wrote {len(report.rows)} metric rows to "
              f"{os.path.join(out_dir, 'results.csv')}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def run():  # console entry point
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
