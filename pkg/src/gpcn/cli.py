"""Command-line entry point: ``gpcn <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (or a failed ``verify``).
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import platform
import sys
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .bounds import (
    BOUND_COLUMNS,
    bound_row,
    extract_bound_inputs,
    oversmoothing_profile,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data_io import (
    GraphDataset,
    SyntheticSpec,
    generate_sbm,
    load_dataset,
    load_splits,
    row_normalize,
    save_dataset,
)
from .errors import (
    ConfigError,
    DataError,
    GPCNError,
    InsufficientSpectrumError,
    NumericError,
    ShapeError,
    SizeError,
)
from .graph import class_homophily, edge_homophily, normalized_adjacency, spectrum
from .models import ModelConfig
from .training import (
    ABLATION_SWEEP,
    RESULT_COLUMNS,
    TrainConfig,
    ablation_sweep,
    grid_search,
    make_split,
    run_splits,
    summarize,
    write_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_LIST = {"type": "array", "minItems": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["path"],
            "properties": {
                "path": {"type": "string"},
                "format": {"enum": ["text", "binary"]},
                "directed": {"type": "boolean"},
                "splits": {"type": "string"},
                "normalize_features": {"type": "boolean"},
                "name": {"type": "string"},
            },
        },
        "synthetic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": _INT, "classes": _INT, "p_in": _NUM, "p_out": _NUM,
                "feature_dim": _INT, "feature_separation": _NUM, "seed": _INT,
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"type": "string"},
                "T": _INT, "L": _INT, "hidden": _INT, "gamma": _NUM, "dropout": _NUM,
                "sgc_power": _INT, "gcn_layers": _INT,
                "gpr_init": {"enum": ["ppr", "uniform", "delta"]}, "gpr_alpha": _NUM,
                "mu_mode": {"enum": ["sigmoid", "clamp"]},
                "link_adjacency": {"enum": ["normalized", "raw"]},
                "link_dropout": {"type": "boolean"},
                "theta_decay": {"type": ["number", "null"]},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": _NUM, "weight_decay": _NUM, "max_epochs": _INT, "patience": _INT,
                "eval_every": _INT, "decoupled_weight_decay": {"type": "boolean"},
                "symmetrize": {"enum": ["auto", "force", "never"]}, "float32": {"type": "boolean"},
            },
        },
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "protocol": {"enum": ["per_class_60_20_20", "random_50_25_25", "fixed_file"]},
                "seeds": {"type": "array", "items": _INT, "minItems": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "record_wall_time": {"type": "boolean"},
                "checkpoint": {"type": "boolean"},
            },
        },
        "grid": {"type": "object", "additionalProperties": _LIST},
        "sweep": {"type": "object", "additionalProperties": _LIST},
    },
    "required": ["model"],
    "oneOf": [{"required": ["dataset"]}, {"required": ["synthetic"]}],
}


# --------------------------------------------------------------------------- config handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def load_config(path) -> tuple[dict, str]:
    """Parse and validate a JSON or YAML experiment file; returns (config, sha256)."""
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    try:
        cfg = json.loads(raw) if p.suffix == ".json" else yaml.safe_load(raw)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"{path}: not valid JSON/YAML: {e}") from None
    validate_config(cfg, str(path))
    return cfg, hashlib.sha256(raw).hexdigest()


def validate_config(cfg, where: str = "config") -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        loc = "/".join(str(x) for x in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {loc}: {e.message}") from None
    # semantic checks the schema cannot express
    ModelConfig.from_dict(cfg["model"])
    TrainConfig.from_dict(cfg.get("train", {}))
    if "synthetic" in cfg:
        try:
            SyntheticSpec(**cfg["synthetic"])
        except ValueError as e:
            raise ConfigError(f"{where}: synthetic: {e}") from None
    if cfg.get("split", {}).get("protocol") == "fixed_file" and "splits" not in cfg.get("dataset", {}):
        raise ConfigError(f"{where}: fixed_file protocol needs dataset.splits")


def apply_cli_overrides(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    train = cfg.setdefault("train", {})
    if getattr(args, "symmetrize", None):
        train["symmetrize"] = args.symmetrize
    if getattr(args, "f32", False):
        train["float32"] = True
    if getattr(args, "seed", None) is not None:
        cfg.setdefault("split", {})["seeds"] = [args.seed]
    if getattr(args, "out", None):
        cfg.setdefault("output", {})["dir"] = args.out
    return cfg


def dataset_from_config(cfg: dict, fmt: str | None = None) -> GraphDataset:
    if "synthetic" in cfg:
        return generate_sbm(SyntheticSpec(**cfg["synthetic"]), cfg.get("name"))
    d = cfg["dataset"]
    ds = read_dataset(d["path"], d.get("format", fmt), d.get("directed", True), d.get("name"))
    if d.get("normalize_features"):
        ds.X = row_normalize(ds.X)
    if "splits" in d:
        ds.fixed_splits = load_splits(d["splits"], ds.n_nodes)
    return ds


def read_dataset(path, fmt=None, directed=True, name=None) -> GraphDataset:
    try:
        return load_dataset(path, fmt, name, directed)
    except OSError as e:
        raise DataError(f"cannot read dataset {path}: {e.strerror}") from None


def splits_from_config(cfg: dict, ds: GraphDataset):
    sp = cfg.get("split", {})
    protocol = sp.get("protocol", "fixed_file" if ds.fixed_splits else "per_class_60_20_20")
    if protocol == "fixed_file":
        if not ds.fixed_splits:
            raise ConfigError("fixed_file protocol but the dataset has no split file")
        seeds = sp.get("seeds")
        return [s for s in ds.fixed_splits if seeds is None or s.seed in seeds]
    return [make_split(ds.y, protocol, s) for s in sp.get("seeds", list(range(10)))]


def resolve_jobs(args) -> int:
    if getattr(args, "jobs", None):
        return max(1, args.jobs)
    env = os.environ.get("PGCN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"PGCN_THREADS must be an integer, got {env!r}") from None
    return 1


def out_dir(cfg: dict, args, default: str) -> Path:
    d = Path(getattr(args, "out", None) or cfg.get("output", {}).get("dir") or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_manifest(directory: Path, command: str, argv, config_hash=None, seeds=None, extra=None) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config_sha256": config_hash,
        "code_version": __version__,
        "seeds": seeds,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _pct(mean: float, std: float) -> str:
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def _experiment(args):
    cfg, digest = load_config(args.config)
    cfg = apply_cli_overrides(cfg, args)
    validate_config(cfg, args.config)
    ds = dataset_from_config(cfg, args.format)
    model_cfg = ModelConfig.from_dict(cfg["model"])
    train_cfg = TrainConfig.from_dict(cfg.get("train", {}))
    splits = splits_from_config(cfg, ds)
    record = cfg.get("output", {}).get("record_wall_time", True)
    return cfg, digest, ds, model_cfg, train_cfg, splits, record


# --------------------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg, digest, ds, model_cfg, train_cfg, splits, record = _experiment(args)
    out = out_dir(cfg, args, "runs/train")
    outcomes = run_splits(ds, model_cfg, train_cfg, splits, resolve_jobs(args), record)
    rows = [o[0] for o in outcomes]
    with open(out / "results.csv", "w", newline="") as fh:
        write_csv(rows, fh, RESULT_COLUMNS)
    if cfg.get("output", {}).get("checkpoint", True):
        from .models import ParameterSet

        for split, (_, ok, _, arrays) in zip(splits, outcomes):
            meta = {
                "model": model_cfg.to_dict(), "dataset": ds.name, "split_protocol": split.protocol,
                "split_seed": split.seed, "symmetrize": train_cfg.symmetrize, "ok": ok,
            }
            save_checkpoint(out / f"model_seed{split.seed}.pgck", ParameterSet.from_arrays(arrays), meta)
    write_manifest(out, "train", sys.argv, digest, [s.seed for s in splits])
    mean, std = summarize([r["test_acc"] for r in rows])
    failed = sum(not o[1] for o in outcomes)
    print(f"{model_cfg.kind.value} on {ds.name}: test accuracy {_pct(mean, std)} over {len(rows) - failed} runs")
    print(f"results: {out / 'results.csv'}")
    if failed:
        print(f"{failed} run(s) aborted on non-finite values", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _dataset_arg(args) -> GraphDataset:
    if args.dataset:
        return read_dataset(args.dataset, args.format, not args.undirected)
    if args.config:
        cfg, _ = load_config(args.config)
        return dataset_from_config(cfg, args.format)
    raise ConfigError("give a dataset path or --config")


def cmd_homophily(args) -> int:
    ds = _dataset_arg(args)
    h = edge_homophily(ds.A, ds.y)
    try:
        hc = class_homophily(ds.A, ds.y)
    except GPCNError as e:
        hc = float("nan")
        print(f"class homophily undefined: {e}", file=sys.stderr)
    print(f"dataset         {ds.name}")
    print(f"nodes / entries {ds.n_nodes} / {ds.A.nnz}")
    print(f"edge homophily  {h:.6f}")
    print(f"class homophily {hc:.6f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report = {"dataset": ds.name, "edge_homophily": h, "class_homophily": None if math.isnan(hc) else hc}
        (out / "homophily.json").write_text(json.dumps(report, indent=2) + "\n")
        write_manifest(out, "homophily", sys.argv)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    ds = _dataset_arg(args)
    k = "all" if args.k == "all" else int(args.k)
    spec = spectrum(normalized_adjacency(ds.A, args.symmetrize or "auto"), k, which=args.which, seed=args.seed or 0)
    lines = ["index,eigenvalue"] + [f"{i},{repr(float(v))}" for i, v in enumerate(spec.eigenvalues)]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "spectrum.csv").write_text(text)
        write_manifest(out, "spectrum", sys.argv, extra={"method": spec.method})
        print(f"{spec.n_computed} eigenvalues ({spec.method}) -> {out / 'spectrum.csv'}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_bound(args) -> int:
    ds = read_dataset(args.dataset, args.format, not args.undirected)
    params, meta = load_checkpoint(args.checkpoint)
    if "model" not in meta:
        raise ConfigError("checkpoint carries no model configuration")
    model_cfg = ModelConfig.from_dict(meta["model"])
    protocol = meta.get("split_protocol", "per_class_60_20_20")
    seed = args.seed if args.seed is not None else meta.get("split_seed", 0)
    if protocol == "fixed_file":
        if not args.splits:
            raise ConfigError("checkpoint was trained on file splits; pass --splits")
        matches = [s for s in load_splits(args.splits, ds.n_nodes) if s.seed == seed]
        if not matches:
            raise ConfigError(f"split file has no split number {seed}")
        split = matches[0]
    else:
        split = make_split(ds.y, protocol, seed)
    sym = args.symmetrize or meta.get("symmetrize", "auto")
    inp = extract_bound_inputs(ds, params, split, model_cfg, R=args.R, symmetrize=sym)
    if args.L_range:
        rows = oversmoothing_profile(inp, [int(x) for x in args.L_range.split(",")], args.coefficients, args.delta)
    else:
        rows = [bound_row(inp, args.theorem, args.coefficients, args.delta, args.c_prime, args.c0)]
    target = sys.stdout
    out = None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        target = open(out / "bound.csv", "w", newline="")
    try:
        write_csv(rows, target, BOUND_COLUMNS)
    finally:
        if out is not None:
            target.close()
            write_manifest(out, "bound", sys.argv, seeds=[seed], extra={"up_to_constants": True})
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg, digest, ds, model_cfg, train_cfg, splits, record = _experiment(args)
    sweep = json.loads(args.sweep) if args.sweep else cfg.get("sweep", ABLATION_SWEEP)
    if not isinstance(sweep, dict) or not sweep:
        raise ConfigError("sweep must be a non-empty mapping of factor -> values")
    out = out_dir(cfg, args, "runs/ablate")
    rows = ablation_sweep(ds, model_cfg, train_cfg, sweep, splits, resolve_jobs(args), record)
    with open(out / "sweep.csv", "w", newline="") as fh:
        write_csv(rows, fh, ("factor",) + RESULT_COLUMNS)
    write_manifest(out, "ablate", sys.argv, digest, [s.seed for s in splits], {"sweep": sweep})
    for factor in sweep:
        accs: dict = {}
        for r in rows:
            if r["factor"] == factor:
                accs.setdefault(r[factor], []).append(r["test_acc"])
        cells = ", ".join(f"{v}: {_pct(*summarize(a))}" for v, a in accs.items())
        print(f"{factor:>8}  {cells}")
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg, digest, ds, model_cfg, train_cfg, splits, record = _experiment(args)
    grid = json.loads(args.grid) if args.grid else cfg.get("grid")
    if not grid:
        raise ConfigError("no grid given (config 'grid' section or --grid)")
    out = out_dir(cfg, args, "runs/grid")
    res = grid_search(ds, grid, splits, model_cfg, train_cfg, resolve_jobs(args), record)
    with open(out / "grid.csv", "w", newline="") as fh:
        write_csv(res.rows, fh, RESULT_COLUMNS)
    best = {"model": res.best_model.to_dict(), "train": {k: v for k, v in vars(res.best_train).items() if k != "seed"}}
    (out / "best.json").write_text(json.dumps(best, indent=2) + "\n")
    write_manifest(out, "grid", sys.argv, digest, [s.seed for s in splits], {"grid": grid})
    print(f"best cell {json.dumps(res.best, sort_keys=True)}  mean val acc {100 * res.best_score:.2f}")
    print(json.dumps(best, indent=2))
    if math.isinf(res.best_score):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n=args.n, classes=args.classes, p_in=args.p_in, p_out=args.p_out,
        feature_dim=args.feature_dim, feature_separation=args.separation, seed=args.seed or 0,
    )
    ds = generate_sbm(spec, args.name)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fmt = args.format or "text"
    save_dataset(ds, out, fmt)
    write_manifest(out.parent, "synth", sys.argv, seeds=[spec.seed], extra={"spec": vars(spec), "file": out.name})
    print(f"{ds.name}: {ds.n_nodes} nodes, {ds.A.nnz} entries, edge homophily {edge_homophily(ds.A, ds.y):.4f} -> {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(args.seed or 0)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML experiment file")
    common.add_argument("--seed", type=int, help="run seed; replaces the config's split seeds")
    common.add_argument("--jobs", type=int, help="worker processes (fallback: PGCN_THREADS, else 1)")
    common.add_argument("--out", help="output directory (output file for synth)")
    common.add_argument("--format", choices=["text", "binary"], help="dataset file format")
    common.add_argument("--symmetrize", choices=["auto", "force", "never"])
    common.add_argument("--coefficients", choices=["canonical", "paper"], default="paper",
                        help="coefficient pattern for the fixed-gamma bound")
    common.add_argument("--f32", action="store_true", help="train in 32-bit floats")

    p = _Parser(prog="gpcn", description="Graph polynomial convolution networks: training, diagnostics and bounds.")
    p.add_argument("--version", action="version", version=f"gpcn {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", parents=[common], help="train over all configured splits")
    s.set_defaults(func=cmd_train, needs_config=True)

    for name, fn, helptext in (("homophily", cmd_homophily, "edge and class homophily"),
                               ("spectrum", cmd_spectrum, "eigenvalues of the normalized adjacency")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("dataset", nargs="?")
        s.add_argument("--undirected", action="store_true", help="file lists each edge once")
        s.set_defaults(func=fn)
    sub.choices["spectrum"].add_argument("--k", default="all", help="'all' or number of extreme eigenvalues")
    sub.choices["spectrum"].add_argument("--which", choices=["LA", "SA", "LM"], default="LA")

    s = sub.add_parser("bound", parents=[common], help="evaluate the Rademacher bounds for a checkpoint")
    s.add_argument("dataset")
    s.add_argument("checkpoint")
    s.add_argument("--theorem", type=int, choices=[1, 2], default=1,
                   help="1: fixed-gamma bound, 2: adaptive-coefficient bound")
    s.add_argument("--delta", type=float, default=0.05)
    s.add_argument("--R", type=float, default=1.0, help="activation output bound")
    s.add_argument("--c-prime", dest="c_prime", type=float, default=1.0)
    s.add_argument("--c0", type=float, default=1.0)
    s.add_argument("--L-range", dest="L_range", help="comma list; emit the depth profile instead")
    s.add_argument("--splits", help=".npz split file for checkpoints trained on fixed splits")
    s.add_argument("--undirected", action="store_true")
    s.set_defaults(func=cmd_bound)

    s = sub.add_parser("ablate", parents=[common], help="one-factor-at-a-time sweep")
    s.add_argument("--sweep", help='JSON mapping, e.g. \'{"L": [1, 2, 4]}\'')
    s.set_defaults(func=cmd_ablate, needs_config=True)

    s = sub.add_parser("grid", parents=[common], help="Cartesian hyperparameter search")
    s.add_argument("--grid", help="JSON mapping of key -> values")
    s.set_defaults(func=cmd_grid, needs_config=True)

    s = sub.add_parser("synth", parents=[common], help="write a stochastic block model dataset")
    s.add_argument("--n", type=int, default=400)
    s.add_argument("--classes", type=int, default=2)
    s.add_argument("--p-in", dest="p_in", type=float, default=0.05)
    s.add_argument("--p-out", dest="p_out", type=float, default=0.005)
    s.add_argument("--feature-dim", dest="feature_dim", type=int, default=16)
    s.add_argument("--separation", type=float, default=1.0)
    s.add_argument("--name")
    s.set_defaults(func=cmd_synth, needs_out=True)

    s = sub.add_parser("verify", parents=[common], help="run the built-in invariant checks")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "needs_config", False) and not args.config:
        parser.error(f"{args.command} requires --config")
    if getattr(args, "needs_out", False) and not args.out:
        parser.error(f"{args.command} requires --out")
    try:
        return args.func(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, SizeError, ShapeError, InsufficientSpectrumError, IndexError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except GPCNError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
