"""Full-batch transductive training, splits, metrics and hyperparameter sweeps."""

from __future__ import annotations

import csv
import io
import itertools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Literal, Sequence

import numpy as np

from . import autodiff as ad
from .data_io import GraphDataset
from .errors import ConfigError, NumericError
from .graph import LabelVector
from .models import (
    DECAY_EXEMPT,
    GraphInputs,
    ModelConfig,
    ParameterSet,
    forward,
    init_params,
    loss_fn,
    mu_scalar,
    prepare_graph,
)

Protocol = Literal["per_class_60_20_20", "random_50_25_25", "fixed_file"]
PROTOCOLS = ("per_class_60_20_20", "random_50_25_25", "fixed_file")


@dataclass(frozen=True, eq=False)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int = 0
    protocol: str = "per_class_60_20_20"
    n: int | None = None

    def __post_init__(self):
        parts = []
        for name in ("train", "val", "test"):
            arr = np.unique(np.asarray(getattr(self, name), dtype=np.int64))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            parts.append(arr)
        if self.train.size == 0:
            raise ValueError("training set is empty")
        allidx = np.concatenate(parts)
        if np.unique(allidx).size != allidx.size:
            raise ValueError("train/val/test sets overlap")
        if allidx.min() < 0 or (self.n is not None and allidx.max() >= self.n):
            raise ValueError("split index outside [0, N)")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown split protocol {self.protocol!r}")

    def masks(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        out = []
        for idx in (self.train, self.val, self.test):
            m = np.zeros(n, dtype=bool)
            m[idx] = True
            out.append(m)
        return tuple(out)


def make_split(y: LabelVector, protocol: Protocol = "per_class_60_20_20", seed: int = 0) -> Split:
    """Random split, deterministic in ``seed``.

    ``per_class_60_20_20`` stratifies by class: floor(0.2 n_c) nodes each
    for validation and test, the remainder for training.
    ``random_50_25_25`` samples globally with the same rounding rule.
    """
    labels = y.labels if isinstance(y, LabelVector) else np.asarray(y, dtype=np.int64)
    n = labels.size
    rng = np.random.Generator(np.random.Philox(seed))
    if protocol == "per_class_60_20_20":
        tr, va, te = [], [], []
        for c in range(int(labels.max()) + 1):
            idx = np.flatnonzero(labels == c)
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            k = int(math.floor(idx.size * 0.2))
            va.append(idx[:k])
            te.append(idx[k : 2 * k])
            tr.append(idx[2 * k :])
        return Split(np.concatenate(tr), np.concatenate(va), np.concatenate(te), seed, protocol, n)
    if protocol == "random_50_25_25":
        perm = rng.permutation(n)
        k = int(math.floor(n * 0.25))
        return Split(perm[2 * k :], perm[:k], perm[k : 2 * k], seed, protocol, n)
    raise ConfigError(f"protocol {protocol!r} cannot be generated; load fixed splits from file")


# --------------------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    decoupled: bool = False,
    exempt: Iterable[str] = (),
) -> AdamState:
    """One in-place Adam update with bias correction.

    Weight decay is added to the gradient before the moment updates unless
    ``decoupled`` is set, in which case parameters shrink by lr * wd directly.
    Names in ``exempt`` never decay.
    """
    b1, b2 = betas
    state.step += 1
    t = state.step
    exempt = set(exempt)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        wd = 0.0 if name in exempt else weight_decay
        if wd and not decoupled:
            g = g + wd * p
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        if wd and decoupled:
            p -= lr * wd * p
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


# --------------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 0.0
    max_epochs: int = 1000
    patience: int = 100
    seed: int = 0
    eval_every: int = 1
    decoupled_weight_decay: bool = False
    symmetrize: Literal["auto", "force", "never"] = "auto"
    float32: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1 or self.eval_every < 1:
            raise ConfigError("max_epochs and eval_every must be >= 1")
        if self.symmetrize not in ("auto", "force", "never"):
            raise ConfigError(f"unknown symmetrize mode {self.symmetrize!r}")

    @property
    def dtype(self):
        return np.float32 if self.float32 else np.float64

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class RunResult:
    best_val_acc: float
    test_acc: float
    epochs_run: int
    best_epoch: int
    loss_curve: list[float]
    learned_mu: float | None = None
    learned_theta: list[float] | None = None
    status: str = "ok"
    wall_ms: float = 0.0
    params: ParameterSet | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def test_acc_at_best_val(self) -> float:
        return self.test_acc


def accuracy(logits, y, mask) -> float:
    """Share of masked rows whose argmax equals the label; ties go to the lowest class."""
    Z = logits.data if isinstance(logits, ad.Tensor) else np.asarray(logits)
    labels = y.labels if isinstance(y, LabelVector) else np.asarray(y)
    idx = ad._mask_indices(mask, Z.shape[0])
    if idx.size == 0:
        raise ValueError("accuracy over an empty mask")
    return float(np.mean(np.argmax(Z[idx], axis=1) == labels[idx]))


def train(
    dataset: GraphDataset | GraphInputs,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    split: Split,
    y: LabelVector | None = None,
) -> RunResult:
    """Train with early stopping on validation accuracy.

    The returned parameters and test accuracy are those of the best
    validation checkpoint.  Non-finite values abort the run with
    ``status="numeric_failure"`` instead of raising.
    """
    t0 = time.perf_counter()
    if isinstance(dataset, GraphDataset):
        g = prepare_graph(dataset.A, dataset.X, train_cfg.symmetrize, train_cfg.dtype)
        y = dataset.y
    else:
        g = dataset
        if y is None:
            raise ValueError("labels are required when passing prepared graph inputs")
    init_rng, drop_rng = (
        np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(train_cfg.seed).spawn(2)
    )
    params = init_params(model_cfg, g.n_nodes, g.n_features, y.num_classes, init_rng, train_cfg.dtype)
    arrays = {k: t.data for k, t in params.items()}
    state = AdamState()
    best_val, best_test, best_epoch = -1.0, 0.0, 0
    best_snap = params.snapshot()
    losses: list[float] = []
    bad = 0
    status = "ok"
    epoch = 0
    try:
        for epoch in range(1, train_cfg.max_epochs + 1):
            loss = loss_fn(model_cfg, params, g, y, split.train, train_cfg.weight_decay, True, drop_rng)
            lv = loss.item()
            if not math.isfinite(lv):
                raise NumericError("non-finite training loss")
            losses.append(lv)
            grads = ad.backward(loss)
            adam_step(
                arrays, {k: grads[t] for k, t in params.items()}, state, train_cfg.lr,
                weight_decay=train_cfg.weight_decay, decoupled=train_cfg.decoupled_weight_decay,
                exempt=DECAY_EXEMPT,
            )
            if not all(np.all(np.isfinite(a)) for a in arrays.values()):
                raise NumericError("non-finite parameters after update")
            if epoch % train_cfg.eval_every:
                continue
            logits = forward(model_cfg, params, g, training=False)
            val = accuracy(logits, y, split.val) if split.val.size else accuracy(logits, y, split.train)
            if val > best_val:
                best_val, best_epoch, bad = val, epoch, 0
                best_test = accuracy(logits, y, split.test) if split.test.size else float("nan")
                best_snap = params.snapshot()
            else:
                bad += 1
                if bad >= train_cfg.patience:
                    break
    except NumericError:
        status = "numeric_failure"
    params.restore(best_snap)
    mu = mu_scalar(params, model_cfg) if "mu_raw" in params else None
    theta = params["theta"].data.ravel().astype(float).tolist() if "theta" in params else None
    return RunResult(
        best_val_acc=max(best_val, 0.0),
        test_acc=best_test,
        epochs_run=epoch,
        best_epoch=best_epoch,
        loss_curve=losses,
        learned_mu=mu,
        learned_theta=theta,
        status=status,
        wall_ms=(time.perf_counter() - t0) * 1e3,
        params=params,
    )


# --------------------------------------------------------------------------- results tables

RESULT_COLUMNS = (
    "model", "dataset", "seed", "split_protocol", "T", "L", "gamma", "hidden", "lr",
    "weight_decay", "dropout", "best_val_acc", "test_acc", "epochs", "learned_mu",
    "learned_theta", "wall_ms",
)


def result_row(
    dataset_name: str, model_cfg: ModelConfig, train_cfg: TrainConfig, split: Split,
    res: RunResult, record_wall_time: bool = True,
) -> dict:
    failed = not res.ok
    return {
        "model": model_cfg.kind.value,
        "dataset": dataset_name,
        "seed": train_cfg.seed,
        "split_protocol": split.protocol,
        "T": model_cfg.T,
        "L": model_cfg.L,
        "gamma": model_cfg.gamma,
        "hidden": model_cfg.hidden,
        "lr": train_cfg.lr,
        "weight_decay": train_cfg.weight_decay,
        "dropout": model_cfg.dropout,
        "best_val_acc": float("nan") if failed else res.best_val_acc,
        "test_acc": float("nan") if failed else res.test_acc,
        "epochs": res.epochs_run,
        "learned_mu": "" if res.learned_mu is None else res.learned_mu,
        "learned_theta": "" if res.learned_theta is None else ";".join(repr(float(t)) for t in res.learned_theta),
        "wall_ms": round(res.wall_ms, 3) if record_wall_time else 0,
    }


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows: Sequence[dict], fh, columns: Sequence[str] | None = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else RESULT_COLUMNS))
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])


def csv_text(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    write_csv(rows, buf, columns)
    return buf.getvalue()


def summarize(accs: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (ddof=1; 0 for a single value)."""
    a = np.asarray([x for x in accs if math.isfinite(x)], dtype=np.float64)
    if a.size == 0:
        return float("nan"), float("nan")
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


# --------------------------------------------------------------------------- sweeps

MODEL_KEYS = {f.name for f in fields(ModelConfig)}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}

# search space of the hyperparameter study
SEARCH_GRID = {
    "hidden": [64, 512],
    "lr": [0.01, 0.05],
    "weight_decay": [0.0, 0.001, 0.00001],
    "T": [1, 2, 3, 4, 5],
    "L": [1, 2, 4, 8],
    "gamma": [2.0**e for e in range(8, -7, -2)],
    "dropout": [0.0, 0.3, 0.6, 0.9],
}

ABLATION_SWEEP = {
    "gamma": [2.0**-e for e in range(0, 9, 2)],
    "L": [1, 2, 4, 8, 16],
    "dropout": [0.0, 0.3, 0.6, 0.9],
}


def apply_overrides(model_cfg: ModelConfig, train_cfg: TrainConfig, overrides: dict):
    m = {k: v for k, v in overrides.items() if k in MODEL_KEYS}
    t = {k: v for k, v in overrides.items() if k in TRAIN_KEYS}
    unknown = set(overrides) - MODEL_KEYS - TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
    return replace(model_cfg, **m), replace(train_cfg, **t)


def _seeded(train_cfg: TrainConfig, split: Split) -> TrainConfig:
    return replace(train_cfg, seed=split.seed)


def _run_cell(args):
    dataset, model_cfg, train_cfg, split, record_wall_time = args
    res = train(dataset, model_cfg, train_cfg, split)
    row = result_row(dataset.name, model_cfg, train_cfg, split, res, record_wall_time)
    return row, res.ok, res.best_val_acc, res.params.snapshot()


def _execute(tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_cell(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, tasks))


def run_splits(dataset, model_cfg, train_cfg, splits, jobs: int = 1, record_wall_time: bool = True):
    """Train once per split; the training seed is the split's seed.

    Returns ``(row, ok, best_val_acc, parameter arrays)`` per split.
    """
    tasks = [(dataset, model_cfg, _seeded(train_cfg, s), s, record_wall_time) for s in splits]
    return _execute(tasks, jobs)


@dataclass
class GridResult:
    best: dict
    best_model: ModelConfig
    best_train: TrainConfig
    best_score: float
    rows: list[dict]


def grid_search(
    dataset: GraphDataset,
    grid: dict[str, list],
    splits: Sequence[Split],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    jobs: int = 1,
    record_wall_time: bool = True,
) -> GridResult:
    """Cartesian sweep; the winner has the highest mean validation accuracy over splits.

    Runs that fail numerically score -inf.
    """
    keys = list(grid)
    cells = [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    if not cells:
        raise ConfigError("empty grid")
    tasks, owners = [], []
    for ci, cell in enumerate(cells):
        mc, tc = apply_overrides(model_cfg, train_cfg, cell)
        for s in splits:
            tasks.append((dataset, mc, _seeded(tc, s), s, record_wall_time))
            owners.append(ci)
    outcomes = _execute(tasks, jobs)
    scores: dict[int, list[float]] = {}
    rows = []
    for ci, (row, ok, val, _) in zip(owners, outcomes):
        scores.setdefault(ci, []).append(val if ok else -math.inf)
        rows.append(row)
    means = {ci: float(np.mean(v)) for ci, v in scores.items()}
    best_ci = max(range(len(cells)), key=lambda c: (means[c], -c))
    bm, bt = apply_overrides(model_cfg, train_cfg, cells[best_ci])
    return GridResult(cells[best_ci], bm, bt, means[best_ci], rows)


def ablation_sweep(
    dataset: GraphDataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    sweep: dict[str, list],
    splits: Sequence[Split],
    jobs: int = 1,
    record_wall_time: bool = True,
) -> list[dict]:
    """Vary one factor at a time, the rest held at the base configuration."""
    tasks, tags = [], []
    for factor, values in sweep.items():
        for v in values:
            mc, tc = apply_overrides(model_cfg, train_cfg, {factor: v})
            for s in splits:
                tasks.append((dataset, mc, _seeded(tc, s), s, record_wall_time))
                tags.append(factor)
    rows = []
    for factor, (row, *_) in zip(tags, _execute(tasks, jobs)):
        rows.append({"factor": factor, **row})
    return rows


def curve(rows: Sequence[dict], factor: str) -> dict:
    """Mean test accuracy per value of ``factor`` from ablation rows."""
    acc: dict = {}
    for r in rows:
        if r.get("factor", factor) != factor:
            continue
        acc.setdefault(r[factor], []).append(r["test_acc"])
    return {k: summarize(v)[0] for k, v in acc.items()}


__all__ = [
    "Split", "make_split", "AdamState", "adam_step", "TrainConfig", "RunResult", "accuracy",
    "train", "grid_search", "ablation_sweep", "run_splits", "write_csv", "csv_text", "summarize",
    "RESULT_COLUMNS", "SEARCH_GRID", "ABLATION_SWEEP",
]
