"""Command-line entry point: ``cyclecl <command> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 1 configuration error, 2 missing artifact,
3 numeric failure.
"""

import argparse
import json
import logging
import sys

from . import experiment as ex
from .exceptions import ConfigError, CycleCLError, MissingArtifactError, NumericError

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3

PER_SEED = {
    "gen": ex.cmd_gen,
    "train": ex.cmd_train,
    "embed": ex.cmd_embed,
    "anomaly": ex.cmd_anomaly,
    "diag": ex.cmd_diag,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="cyclecl", description="Self-supervised cycle embeddings on synthetic data.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry by dotted path, e.g. train.miner.strategy=topk")
    common.add_argument("--output-dir", help="shortcut for --set output_dir=...")
    common.add_argument("--seeds", help="comma-separated seeds, shortcut for --set seeds=[...]")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("gen", "generate train/test datasets"),
        ("train", "train the projection head"),
        ("embed", "embed the test split with a trained head"),
        ("anomaly", "unsupervised anomaly scoring of the test embeddings"),
        ("diag", "dump TSM, autocorrelation, PCA and NN-distance traces"),
        ("run", "full chain for every seed plus aggregate metrics"),
        ("show-config", "print the effective config"),
    ]:
        sub.add_parser(name, parents=[common], help=helptext)
    p_eval = sub.add_parser("eval", parents=[common], help="leave-one-video-out k-NN evaluation")
    p_eval.add_argument("--baseline", choices=["frozen", "random"],
                        help="evaluate frozen-encoder or random embeddings instead of the trained head")
    p_ablate = sub.add_parser("ablate", parents=[common], help="ablation grid over one axis")
    p_ablate.add_argument("--axis", required=True, choices=sorted(ex.AXES))
    p_ablate.add_argument("--values", required=True, help="comma-separated values (JSON literals or strings)")
    return parser


def _parse_values(text):
    out = []
    for item in text.split(","):
        try:
            out.append(json.loads(item))
        except json.JSONDecodeError:
            out.append(item.strip())
    return out


def _config(args):
    overrides = list(args.overrides)
    if args.output_dir:
        overrides.append(f"output_dir={json.dumps(args.output_dir)}")
    if args.seeds:
        overrides.append(f"seeds={json.dumps([int(s) for s in args.seeds.split(',')])}")
    return ex.load_config(args.config, overrides)


def dispatch(args):
    cfg = _config(args)
    if args.command == "show-config":
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return
    if args.command == "run":
        agg = ex.cmd_run(cfg)
        print(f"f1 median {agg['f1']['median']:.4f}  ap median {agg['ap']['median']:.4f}  "
              f"(frozen f1 {agg['baseline_frozen']['f1']['median']:.4f})")
        return
    if args.command == "ablate":
        rows = ex.cmd_ablate(cfg, args.axis, _parse_values(args.values))
        for r in rows:
            print(r["value"], r["seed"], r.get("f1", ""), r["status"])
        return
    for seed in cfg["seeds"]:
        if args.command == "eval":
            report = ex.cmd_eval(cfg, seed, baseline=args.baseline)
            print(f"seed {seed}: ap {report.ap:.4f} f1 {report.f1:.4f} oracle_f1 {report.oracle_f1:.4f}")
        else:
            PER_SEED[args.command](cfg, seed)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CycleCLError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
