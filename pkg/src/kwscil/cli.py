"""Command-line entry points: prepare, run, report, synth.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import dataset as dataset_mod
from . import harness, synth
from .errors import ConfigError, DataError


def _load_config_file(path: Path) -> dict:
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        data = yaml.safe_load(text)
    elif path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        raise ConfigError(f"config must be .yaml/.yml/.toml, got {path.suffix!r}")
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def _cmd_prepare(args) -> int:
    manifest = dataset_mod.scan_dataset(args.data_dir)
    manifest = dataset_mod.split_train_test(manifest, args.test_fraction, args.seed)
    dataset_mod.write_manifest(manifest, args.out)
    print(
        f"wrote {args.out}: {len(manifest.records)} records, "
        f"{len(manifest.keywords)} keywords, {manifest.skipped} skipped"
    )
    return 0


def _cmd_run(args) -> int:
    data = _load_config_file(Path(args.config))
    config = harness.ExperimentConfig.from_dict(data)
    if args.seed is not None:
        config.seed = args.seed
    if args.memory_size is not None:
        config.memory_size = args.memory_size
    if args.sampler is not None:
        config.sampler = args.sampler
    if args.kd is not None:
        config.kd = args.kd == "on"
    if args.augment is not None:
        config.augment = args.augment
    out_dir = Path(args.out) if args.out else Path(config.output_dir or "results")
    report = harness.run_experiment(config, out_dir)
    bwt = "n/a" if report.bwt is None else f"{report.bwt:.4f}"
    print(
        f"ACC {report.acc:.4f}  BWT {bwt}  params {report.param_count}  "
        f"memory {report.memory_bytes} B  -> {out_dir}"
    )
    return 0


def _cmd_report(args) -> int:
    bundle = harness.render_report(args.run_dirs, args.out)
    print(f"wrote {bundle.figure_path} and {bundle.summary_path}")
    return 0


def _cmd_synth(args) -> int:
    root = synth.make_corpus(
        args.out, keywords=args.keywords, clips_per_keyword=args.clips, seed=args.seed
    )
    print(f"wrote synthetic corpus with {args.keywords} keywords under {root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kwscil", description="Class-incremental keyword spotting toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="scan a corpus and write a split manifest")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("run", help="run one incremental-learning experiment")
    p.add_argument("--config", required=True, help="YAML or TOML experiment config")
    p.add_argument("--out", help="output directory (overrides config output_dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--memory-size", type=int)
    p.add_argument("--sampler", choices=list(harness.memory_mod.SAMPLER_KINDS))
    p.add_argument("--kd", choices=["on", "off"])
    p.add_argument("--augment", choices=list(harness.AUGMENT_KINDS))
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="render plots and a summary for finished runs")
    p.add_argument("--in", dest="run_dirs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("synth", help="generate a synthetic benchmark corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--keywords", type=int, default=10)
    p.add_argument("--clips", type=int, default=80)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
