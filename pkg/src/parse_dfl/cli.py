"""Command-line entry point.

Subcommands:
  generate-data --spec FILE --out CSV
  run           --config FILE --out DIR [--threads N]
  sweep         --config FILE --param NAME --values a,b,c --out DIR [--threads N]
  pid           --dist CSV

Config files are flat ``key = value`` lines with ``#`` comments; unknown
keys are errors. The env var PARSE_DFL_THREADS overrides --threads.
Exit codes: 0 on success, 2 for config/parse problems, 1 for a diverged
run or other failure.
"""

import argparse
import dataclasses
import json
import os
import sys
import zlib
from pathlib import Path

from . import model as mdl
from . import network, pid, synthdata, trainer
from .errors import ConfigurationError, DataParseError, TrainingDivergedError

SWEEPABLE = ("beta", "split_dims", "fusion", "topology", "alpha", "strategy")


def _parse_bool(text):
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_name(text):
    return text.strip().lower().replace("-", "_")


def _parse_int_tuple(text):
    return tuple(int(p) for p in text.split(":"))


CONFIG_KEYS = {
    "dataset": str,
    "n_modalities": int,
    "n_classes": int,
    "dim_per_modality": int,
    "strength_redundant": float,
    "strength_unique": float,
    "strength_synergy": float,
    "noise_std": float,
    "n_samples": int,
    "agent_mix": _parse_int_tuple,
    "strategy": _parse_name,
    "topology": _parse_name,
    "rounds": int,
    "eta": float,
    "batch_size": int,
    "beta": float,
    "tau": float,
    "split_dims": _parse_int_tuple,
    "fusion": _parse_name,
    "alpha": float,
    "seed": int,
    "hidden_dim": int,
    "eval_interval": int,
    "grad_cosine_interval": int,
    "nce_include_positive_in_denominator": _parse_bool,
}


def read_key_values(path):
    """Flat key = value lines; '#' starts a comment; keys must be known."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataParseError("expected 'key = value'", path=path, line=lineno)
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in CONFIG_KEYS:
                raise DataParseError(f"unknown key {key!r}", path=path, line=lineno)
            if key in values:
                raise DataParseError(f"duplicate key {key!r}", path=path, line=lineno)
            try:
                values[key] = CONFIG_KEYS[key](value)
            except ValueError as exc:
                raise DataParseError(f"bad value for {key!r}: {exc}",
                                     path=path, line=lineno) from None
    return values


def parse_config(path):
    """Load a RunConfig, applying documented defaults for missing keys."""
    values = read_key_values(path)
    try:
        return trainer.RunConfig(**values)
    except ConfigurationError as exc:
        raise DataParseError(str(exc), path=path) from None


def config_echo(config):
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ":".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines)


def derive_sweep_seed(seed, param, value_token):
    """Per-value run seed: documented, stable mix of the base seed."""
    return (seed + zlib.crc32(f"{param}={value_token}".encode())) % 2 ** 32


def sweep_config(config, param, token):
    """The RunConfig for one sweep point, including its derived seed."""
    seed = derive_sweep_seed(config.seed, param, token)
    if param in ("beta", "alpha"):
        return dataclasses.replace(config, **{param: float(token), "seed": seed})
    if param in ("fusion", "topology", "strategy"):
        return dataclasses.replace(config, **{param: _parse_name(token), "seed": seed})
    if param == "split_dims":
        # value = synergistic width; the remaining budget splits equally
        total = sum(config.split_dims)
        d_s = int(token)
        remainder = total - d_s
        if d_s < 1 or remainder < 2 or remainder % 2 != 0:
            raise ConfigurationError(
                f"synergistic width {d_s} does not leave an even remainder of {total}")
        half = remainder // 2
        return dataclasses.replace(config, split_dims=(half, d_s, half), seed=seed)
    raise ConfigurationError(f"unsupported sweep parameter {param!r} (use one of {SWEEPABLE})")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate_data(args):
    values = read_key_values(args.spec)
    seed = values.pop("seed", 0)
    spec_fields = {f.name for f in dataclasses.fields(synthdata.SyntheticSpec)}
    extra = set(values) - spec_fields
    if extra:
        raise ConfigurationError(f"keys not usable for data generation: {sorted(extra)}")
    dataset = synthdata.generate_dataset(synthdata.SyntheticSpec(**values), seed)
    synthdata.save_dataset(dataset, args.out)
    print(f"wrote {dataset.n_samples} samples x {dataset.n_modalities} modalities to {args.out}")
    return 0


def _thread_count(args):
    env = os.environ.get("PARSE_DFL_THREADS")
    if env is not None:
        return max(1, int(env))
    return max(1, args.threads)


def _run_one(config, out_dir, threads, metrics_name="metrics.csv", checkpoint=True):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history, state = trainer.run_experiment(config, threads=threads)
    write = out_dir / metrics_name
    trainer.write_metrics_csv(write, history)
    if checkpoint:
        trainer.save_checkpoint(out_dir / "checkpoint.txt", state.agents)
    _, groups = trainer.evaluate(state)
    return history, state, groups, write


def cmd_run(args):
    config = parse_config(args.config)
    print(config_echo(config))
    threads = _thread_count(args)
    _, _, groups, path = _run_one(config, args.out, threads)
    for sig in sorted(groups):
        print(f"final accuracy {sig}: {groups[sig]:.4f}")
    print(f"metrics: {path}")
    return 0


def cmd_sweep(args):
    config = parse_config(args.config)
    param = args.param
    if param not in SWEEPABLE:
        raise ConfigurationError(f"unsupported sweep parameter {param!r} (use one of {SWEEPABLE})")
    tokens = [t.strip() for t in args.values.split(",") if t.strip()]
    if not tokens:
        raise ConfigurationError("no sweep values given")
    threads = _thread_count(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    all_groups = []
    for token in tokens:
        cfg = sweep_config(config, param, token)
        name = f"sweep_{param}_{token}.csv"
        _, state, groups, _ = _run_one(cfg, out_dir, threads, metrics_name=name,
                                       checkpoint=False)
        overall = sum(groups.values()) / len(groups)
        all_groups.append((token, overall, groups))
        print(f"{param}={token}: overall accuracy {overall:.4f}")

    signatures = sorted(all_groups[0][2])
    with open(out_dir / "summary.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("param,value,overall," + ",".join(signatures) + "\n")
        for token, overall, groups in all_groups:
            cells = [param, token, format(overall, ".17g")]
            cells += [format(groups[sig], ".17g") for sig in signatures]
            fh.write(",".join(cells) + "\n")
    print(f"summary: {out_dir / 'summary.csv'}")
    return 0


def cmd_pid(args):
    dist = pid.read_distribution_csv(args.dist)
    result = pid.pid_decompose(dist)
    print(json.dumps(result.as_dict(), indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="parse-dfl",
        description="Multimodal decentralized-SGD simulator with feature fission "
                    "and a discrete partial-information-decomposition calculator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset CSV")
    p.add_argument("--spec", required=True, help="key=value spec file")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one experiment per parameter value")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pid", help="decompose a joint distribution CSV")
    p.add_argument("--dist", required=True, help="CSV with columns x_1,..,x_n,y,p")
    p.set_defaults(func=cmd_pid)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, DataParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
