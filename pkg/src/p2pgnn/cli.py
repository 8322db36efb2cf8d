"""Command-line front end: pretrain, oracle, simulate, report.

All outputs are files (CSV/JSON/TSV/binary); there is no interactive UI.
Exit codes: 0 success, 2 configuration or usage error, 3 numerical
non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import learn, oracle, sim
from .graph import DatasetError, load_dataset

SEED_ENV_VAR = "P2PGNN_SEED"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NONCONVERGENCE = 3

# The config file carries exactly this key set; everything else (parameter
# file handoff, metrics cadence, oracle comparison, paired half-rate runs)
# is a command-line flag.
_CONFIG_TYPES = {
    "dataset.nodes": str,
    "dataset.edges": str,
    "dataset.splits": str,
    "classifier": str,
    "mode": str,
    "beta": float,
    "s": float,
    "steps": int,
    "repetitions": int,
    "sigma_max": float,
    "seed": int,
    "output_dir": str,
}


class ConfigError(Exception):
    pass


def parse_config(path) -> dict:
    """Flat `key = value` config file; '#' starts a comment."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _CONFIG_TYPES[key](raw)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value {raw!r} for {key}") from None
    return values


def _resolve(args, config, key, default=None):
    """Flag > config file > (seed only: environment) > default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    if key == "seed" and os.environ.get(SEED_ENV_VAR):
        try:
            return int(os.environ[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from None
    return default


def _require_dataset(args, config):
    paths = {}
    for key, flag in (("dataset.nodes", "nodes"), ("dataset.edges", "edges"), ("dataset.splits", "splits")):
        value = getattr(args, flag, None) or config.get(key)
        if value is None:
            raise ConfigError(f"missing {key} (set it in the config file or pass --{flag})")
        if not Path(value).exists():
            raise ConfigError(f"dataset file not found: {value}")
        paths[flag] = value
    return paths["nodes"], paths["edges"], paths["splits"]


def _output_dir(args, config):
    out = getattr(args, "output_dir", None) or config.get("output_dir") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _source_revision() -> str:
    try:
        proc = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5
        )
        if proc.returncode == 0:
            return proc.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_pretrain(args) -> int:
    config = parse_config(args.config) if args.config else {}
    nodes, edges, splits_path = _require_dataset(args, config)
    kind = _resolve(args, config, "classifier", "lr")
    if kind == "label":
        raise ConfigError("the label classifier has no parameters to pretrain")
    if kind not in learn.KINDS:
        raise ConfigError(f"unknown classifier {kind!r}")
    seed = _resolve(args, config, "seed", 0)
    out = _output_dir(args, config)

    _, data, splits = load_dataset(nodes, edges, splits_path)
    log_rows = []
    params = learn.pretrain(
        data, splits, kind,
        learn.TrainConfig(rng_seed=seed),
        on_epoch=lambda epoch, train_loss, valid_loss: log_rows.append(
            (epoch, train_loss, valid_loss)
        ),
    )
    params_path = out / "params.bin"
    learn.save_params(params, params_path)
    log_path = out / "training_log.csv"
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,valid_loss\n")
        for epoch, tr, va in log_rows:
            fh.write(f"{epoch},{tr:.17g},{va:.17g}\n")
    print(f"wrote {params_path} and {log_path} ({len(log_rows)} epochs)")
    return EXIT_OK


def _base_table_for_oracle(args, config, data, known):
    mode = _resolve(args, config, "mode", "pretrained")
    kind = _resolve(args, config, "classifier", "lr")
    if mode == "labels" or kind == "label":
        table = np.zeros_like(data.labels)
        idx = np.fromiter(sorted(known), dtype=np.int64)
        table[idx] = data.labels[idx]
        return table, "label"
    params_path = args.params
    if not params_path:
        raise ConfigError("oracle needs a pretrained parameter file (set params or use labels mode)")
    if not Path(params_path).exists():
        raise ConfigError(f"parameter file not found: {params_path}")
    params = learn.load_params(params_path)
    return learn.forward_all(params, data.features), params.kind


def cmd_oracle(args) -> int:
    config = parse_config(args.config) if args.config else {}
    nodes, edges, splits_path = _require_dataset(args, config)
    beta = _resolve(args, config, "beta", 0.9)
    s = _resolve(args, config, "s", 1.0)
    out = _output_dir(args, config)

    graph, data, splits = load_dataset(nodes, edges, splits_path)
    known = frozenset(splits.train | splits.valid)
    base_table, kind = _base_table_for_oracle(args, config, data, known)
    table = oracle.fdiff_scale(
        graph, base_table, data.labels, known, oracle.DiffusionParams(beta=beta, s=s)
    )
    pred_path = out / "predictions.tsv"
    oracle.save_predictions(table, pred_path)
    acc = oracle.accuracy(table, data.labels, splits.test)
    acc_path = out / "accuracy.json"
    _write_json(acc_path, {
        "kind": "oracle",
        "classifier": kind,
        "beta": beta,
        "s": s,
        "test_accuracy": acc,
    })
    print(f"oracle test accuracy {acc:.4f}; wrote {pred_path} and {acc_path}")
    return EXIT_OK


def _experiment_config(args, config) -> sim.ExperimentConfig:
    nodes, edges, splits_path = _require_dataset(args, config)
    return sim.ExperimentConfig(
        nodes_path=nodes,
        edges_path=edges,
        splits_path=splits_path,
        classifier=_resolve(args, config, "classifier", "lr"),
        mode=_resolve(args, config, "mode", "pretrained"),
        beta=_resolve(args, config, "beta", 0.9),
        s=_resolve(args, config, "s", 1.0),
        steps=_resolve(args, config, "steps", 1000),
        repetitions=_resolve(args, config, "repetitions", 5),
        sigma_max=_resolve(args, config, "sigma_max", 0.1),
        seed=_resolve(args, config, "seed", 0),
        metrics_every=args.metrics_every if args.metrics_every is not None else 10,
        compare_oracle=bool(args.compare_oracle),
        params_path=args.params,
    )


def _run_and_write(cfg: sim.ExperimentConfig, out: Path, suffix: str = ""):
    result = sim.run(cfg)
    metrics_path = out / f"metrics{suffix}.csv"
    sim.write_metrics_csv(result.records, metrics_path)
    summary = dict(result.summary)
    summary["sigma_max"] = cfg.sigma_max * cfg.rate_scale
    if result.base_accuracy is not None:
        summary["base_accuracy"] = result.base_accuracy
    if result.oracle_accuracy is not None:
        summary["oracle_accuracy"] = result.oracle_accuracy
    summary_path = out / f"summary{suffix}.json"
    _write_json(summary_path, summary)
    return result, [str(metrics_path), str(summary_path)]


def cmd_simulate(args) -> int:
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        cfg = sim.ExperimentConfig(**manifest["config"])
        out = Path(args.output_dir) if args.output_dir else Path(args.manifest).parent
        out.mkdir(parents=True, exist_ok=True)
        half_rate = manifest.get("half_rate", False)
    else:
        config = parse_config(args.config) if args.config else {}
        cfg = _experiment_config(args, config)
        out = _output_dir(args, config)
        half_rate = bool(args.half_rate)

    started = time.time()
    result, outputs = _run_and_write(cfg, out)
    if half_rate:
        _, more = _run_and_write(
            sim.ExperimentConfig(**{**_cfg_dict(cfg), "rate_scale": cfg.rate_scale * 0.5}),
            out,
            suffix="_halfrate",
        )
        outputs.extend(more)

    manifest_path = out / "manifest.json"
    _write_json(manifest_path, {
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "revision": _source_revision(),
        "config": _cfg_dict(cfg),
        "root_seed": cfg.seed,
        "half_rate": half_rate,
        "outputs": outputs,
        "elapsed_seconds": time.time() - started,
    })
    print(
        f"mean final test accuracy {result.summary['mean_final_accuracy']:.4f} "
        f"(std {result.summary['std_final_accuracy']:.4f}); wrote {manifest_path}"
    )
    return EXIT_OK


def _cfg_dict(cfg: sim.ExperimentConfig) -> dict:
    return {
        "nodes_path": cfg.nodes_path,
        "edges_path": cfg.edges_path,
        "splits_path": cfg.splits_path,
        "classifier": cfg.classifier,
        "mode": cfg.mode,
        "beta": cfg.beta,
        "s": cfg.s,
        "steps": cfg.steps,
        "repetitions": cfg.repetitions,
        "sigma_max": cfg.sigma_max,
        "seed": cfg.seed,
        "metrics_every": cfg.metrics_every,
        "compare_oracle": cfg.compare_oracle,
        "params_path": cfg.params_path,
        "rate_scale": cfg.rate_scale,
    }


def cmd_report(args) -> int:
    accuracy_rows = []
    byte_rows = []
    for name in args.files:
        path = Path(name)
        if not path.exists():
            raise ConfigError(f"report input not found: {name}")
        if path.suffix == ".json":
            payload = json.loads(path.read_text(encoding="utf-8"))
            if "mean_final_accuracy" in payload:
                label = f"{payload.get('classifier', '?')}/{payload.get('mode', '?')}"
                kind = "base (no diffusion)" if payload.get("steps") == 0 else "p2p diffusion"
                accuracy_rows.append((name, kind, label, payload["mean_final_accuracy"]))
            elif "test_accuracy" in payload:
                label = f"{payload.get('classifier', '?')}"
                accuracy_rows.append((name, "centralized oracle", label, payload["test_accuracy"]))
            else:
                raise ConfigError(f"{name}: not a summary or oracle accuracy file")
        elif path.suffix == ".csv":
            records = sim.read_metrics_csv(path)
            if not records:
                raise ConfigError(f"{name}: empty metrics file")
            last = records[-1]
            ratio = (last.bytes_training / last.bytes_diffusion) if last.bytes_diffusion else None
            byte_rows.append((name, last.bytes_diffusion, last.bytes_training, ratio))
        else:
            raise ConfigError(f"{name}: expected a .json summary or .csv metrics file")

    lines = []
    if accuracy_rows:
        lines.append("accuracy")
        lines.append(f"{'source':<40} {'kind':<22} {'classifier':<16} accuracy")
        for name, kind, label, acc in accuracy_rows:
            lines.append(f"{name:<40} {kind:<22} {label:<16} {acc:.4f}")
    if byte_rows:
        if lines:
            lines.append("")
        lines.append("communication bytes (cumulative)")
        lines.append(f"{'source':<40} {'diffusion':>12} {'training':>12} {'training/diffusion':>20}")
        for name, diff, train, ratio in byte_rows:
            shown = f"{ratio:.1f}x" if ratio is not None else "-"
            lines.append(f"{name:<40} {diff:>12} {train:>12} {shown:>20}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("source,kind,classifier,accuracy\n")
            for name, kind, label, acc in accuracy_rows:
                fh.write(f"{name},{kind},{label},{acc:.17g}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="p2pgnn",
        description="Decentralized graph diffusion experiments on simulated peer-to-peer networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--nodes", help="nodes TSV (overrides dataset.nodes)")
        p.add_argument("--edges", help="edges TSV (overrides dataset.edges)")
        p.add_argument("--splits", help="splits TSV (overrides dataset.splits)")
        p.add_argument("--output-dir", help="directory for output artifacts")

    p = sub.add_parser("pretrain", help="centralized base-classifier training")
    add_common(p)
    p.add_argument("--classifier", choices=("lr", "mlp", "label"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("oracle", help="centralized diffusion reference run")
    add_common(p)
    p.add_argument("--classifier", choices=("lr", "mlp", "label"))
    p.add_argument("--mode", choices=("pretrained", "labels"))
    p.add_argument("--params", help="pretrained parameter file")
    p.add_argument("--beta", type=float)
    p.add_argument("--s", type=float)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("simulate", help="peer-to-peer simulation run")
    add_common(p)
    p.add_argument("--classifier", choices=("lr", "mlp", "label"))
    p.add_argument("--mode", choices=("pretrained", "gossip", "labels"))
    p.add_argument("--params", help="pretrained parameter file")
    p.add_argument("--beta", type=float)
    p.add_argument("--s", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--sigma-max", dest="sigma_max", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--metrics-every", dest="metrics_every", type=int)
    p.add_argument("--compare-oracle", dest="compare_oracle", action="store_true")
    p.add_argument("--half-rate", dest="half_rate", action="store_true",
                   help="also run the same schedule at half the communication rate")
    p.add_argument("--manifest", help="reproduce a previous run from its manifest")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="tabulate accuracy and byte overhead across runs")
    p.add_argument("files", nargs="+", help="summary/accuracy JSON and metrics CSV files")
    p.add_argument("--csv", help="also write the accuracy table as CSV")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except oracle.ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
