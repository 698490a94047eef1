"""Training loops, experiment orchestration and report files."""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import time
import traceback
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np

from . import augment, flatness, robustness
from ._rng import child_rng
from .data import Dataset, SyntheticSpec, make_synthetic
from .io import load_dataset, save_checkpoint
from .nnet import Model, risk_and_grad
from .robustness import error_rate

ERM = "erm"


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "cosine"
    epochs: int = 100
    batch_size: int = 64
    augmentation: Optional[augment.AugmentationConfig] = None
    seed: int = 0
    dtype: str = "float64"
    loss: str = "ce"
    early_stop_loss: Optional[float] = 1e-3
    test_mode: bool = False  # permits lr == 0

    def __post_init__(self):
        if not (self.lr > 0 or (self.test_mode and self.lr == 0)):
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError("schedule must be 'constant' or 'cosine'")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if isinstance(self.augmentation, dict):
            object.__setattr__(self, "augmentation",
                               augment.AugmentationConfig.from_dict(self.augmentation))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentation"] = self.augmentation.to_dict() if self.augmentation else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def cosine_lr(base_lr: float, step: int, total: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total))


def sgd_step(params, grad, velocity, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0):
    """Heavy-ball SGD with L2 weight decay added to the gradient.

    ``v <- momentum * v + (grad + wd * params)``, ``params <- params - lr * v``.
    Returns the new ``(params, velocity)``.
    """
    g = grad + weight_decay * params
    velocity = momentum * velocity + g
    return params - lr * velocity, velocity


def train(model: Model, dataset: Dataset, cfg: TrainConfig,
          init: np.ndarray | None = None) -> tuple[np.ndarray, list[float]]:
    """Mini-batch SGD; returns final parameters and the per-epoch mean training loss.

    With an augmentation, every epoch trains on a fresh augmented copy of the
    data (sample i of epoch e uses seed ``(seed, e, i)``), so the recorded loss
    is the loss on augmented samples. Training stops early once an epoch's
    loss falls below ``early_stop_loss``.
    """
    params = model.init_params(cfg.seed) if init is None else np.array(init, dtype=np.float64)
    velocity = np.zeros_like(params)
    n = len(dataset)
    per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * per_epoch
    trace: list[float] = []
    t = 0
    for epoch in range(cfg.epochs):
        data = dataset
        if cfg.augmentation is not None:
            data = augment.augment_dataset(cfg.augmentation, dataset, cfg.seed, epoch)
        order = child_rng(cfg.seed, 1, epoch).permutation(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    value, grad = risk_and_grad(model, params, data.x[idx], data.y[idx], cfg.loss)
            except ValueError as exc:
                if "non-finite" not in str(exc):
                    raise
                value, grad = float("nan"), params
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                trace.append(float("nan"))
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", trace)
            running += value * len(idx)
            lr = cosine_lr(cfg.lr, t, total) if cfg.schedule == "cosine" else cfg.lr
            params, velocity = sgd_step(params, grad, velocity, lr, cfg.momentum,
                                        cfg.weight_decay)
            if cfg.dtype == "float32":
                params = params.astype(np.float32).astype(np.float64)
            t += 1
        trace.append(running / n)
        if cfg.early_stop_loss is not None and trace[-1] < cfg.early_stop_loss:
            break
    return params, trace


# --- experiments -------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Arms x seeds study.

    ``dataset`` is either ``{"synthetic": {...SyntheticSpec...}}`` or
    ``{"train": path, "test": path}``. ``model`` is ``{"kind": "mlp",
    "hidden": [...], "activation": ...}`` or ``{"kind": "convnet", "channels":
    ..., "hidden": [...]}``.
    """

    dataset: dict
    model: dict
    arms: tuple[tuple[str, TrainConfig], ...]
    seeds: tuple[int, ...] = (0, 1, 2)
    flatness_preset: str = "cifar"
    flatness_overrides: dict = field(default_factory=dict)
    attacks: tuple[str, ...] = ("cifar-l2", "cifar-linf")
    corruptions: tuple[str, ...] = robustness.CORRUPTIONS
    severities: tuple[int, ...] = (1, 2, 3, 4, 5)
    psa_thresholds: tuple[float, ...] = (0.01, 0.05, 0.1, 0.5)
    psa_n: int = 2000
    eval_seed: int = 0
    name: str = "experiment"

    def __post_init__(self):
        arms = tuple((str(n), c if isinstance(c, TrainConfig) else TrainConfig.from_dict(c))
                     for n, c in self.arms)
        object.__setattr__(self, "arms", arms)
        names = [n for n, _ in arms]
        if names.count(ERM) != 1:
            raise ValueError("exactly one arm must be named 'erm'")
        if len(set(names)) != len(names):
            raise ValueError("arm names must be unique")
        if not self.seeds:
            raise ValueError("need at least one seed")
        for key in ("seeds", "attacks", "corruptions", "severities", "psa_thresholds"):
            object.__setattr__(self, key, tuple(getattr(self, key)))
        for a in self.attacks:
            if a not in robustness.ATTACK_PRESETS:
                raise ValueError(f"unknown attack preset {a!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arms"] = [[n, c.to_dict()] for n, c in self.arms]
        for k in ("seeds", "attacks", "corruptions", "severities", "psa_thresholds"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["arms"] = tuple((n, TrainConfig.from_dict(c)) for n, c in d["arms"])
        return cls(**d)

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def desk_scale_experiment(seeds: Sequence[int] = (0, 1, 2), sigma: float = 0.05,
                          **overrides) -> ExperimentConfig:
    """ERM against a Gaussian-noise arm on 8x8 four-class mini images with a 64-64 MLP."""
    noise = TrainConfig(augmentation=augment.AugmentationConfig("gaussian_noise", {"sigma": sigma}))
    fields = dict(
        dataset={"synthetic": {"kind": "mini_images", "n": 2000, "k": 4, "size": 8}},
        model={"kind": "mlp", "hidden": [64, 64]},
        arms=((ERM, TrainConfig()), ("gaussian_noise", noise)),
        seeds=tuple(seeds), name="desk-scale")
    fields.update(overrides)
    return ExperimentConfig(**fields)


def load_experiment_data(spec: dict) -> tuple[Dataset, Dataset]:
    if "synthetic" in spec:
        return make_synthetic(SyntheticSpec.from_dict(spec["synthetic"]))
    return load_dataset(spec["train"]), load_dataset(spec["test"])


def build_model(spec: dict, train_set: Dataset) -> Model:
    kind = spec.get("kind", "mlp")
    hidden = list(spec.get("hidden", [64, 64]))
    act = spec.get("activation", "relu")
    if kind == "mlp":
        return Model.mlp(train_set.n_features, hidden, train_set.n_classes, act)
    if kind == "linear":
        return Model.linear(train_set.n_features, train_set.n_classes)
    if kind == "convnet":
        return Model.convnet(train_set.resolved_image_shape(), int(spec.get("channels", 4)),
                             hidden, train_set.n_classes, int(spec.get("kernel", 3)), act)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass
class RunRecord:
    arm: str
    seed: int
    train_error: Optional[float] = None
    test_error: Optional[float] = None
    epochs_run: Optional[int] = None
    final_loss: Optional[float] = None
    flatness: Optional[dict] = None
    robustness: Optional[dict] = None
    psa: Optional[dict] = None
    skipped: dict = field(default_factory=dict)
    checkpoint: Optional[str] = None
    wall_clock: Optional[float] = field(default=None, compare=False)

    @property
    def failed(self) -> bool:
        return any(k.startswith("error:") for k in self.skipped)

    def to_dict(self, with_timing: bool = False) -> dict:
        d = asdict(self)
        if not with_timing:
            d.pop("wall_clock")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)


def is_image_data(ds: Dataset) -> bool:
    """Unit-range rows with a known or inferable image layout."""
    try:
        ds.resolved_image_shape()
    except ValueError:
        return False
    return bool(ds.x.min() >= 0.0 and ds.x.max() <= 1.0)


def _psa_dict(rep: augment.PsaReport) -> dict:
    return {"ecdf_at": {repr(k): v for k, v in rep.ecdf_at.items()},
            "gamma_A_hat": rep.gamma_A_hat, "compliant": bool(rep.compliant),
            "designated": rep.designated, "quantile": rep.quantile, "n": rep.n}


def _step(record: RunRecord, name: str, fn):
    try:
        return fn()
    except Exception as exc:  # recorded, run continues
        record.skipped[f"error:{name}"] = "".join(
            traceback.format_exception_only(type(exc), exc)).strip()
        return None


def run_single(cfg: ExperimentConfig, arm: str, tcfg: TrainConfig, seed: int,
               train_set: Dataset, test_set: Dataset, model: Model,
               out_dir: str | None = None) -> RunRecord:
    t0 = time.perf_counter()
    rec = RunRecord(arm, int(seed))
    tcfg = replace(tcfg, seed=int(seed))
    trained = _step(rec, "train", lambda: train(model, train_set, tcfg))
    if trained is None:
        rec.wall_clock = time.perf_counter() - t0
        return rec
    params, trace = trained
    rec.epochs_run = len(trace)
    rec.final_loss = trace[-1]
    rec.train_error = error_rate(model, params, train_set.x, train_set.y)
    rec.test_error = error_rate(model, params, test_set.x, test_set.y)
    if out_dir is not None:
        ck = os.path.join("checkpoints", f"{arm}-seed{seed}.bin")
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        save_checkpoint(os.path.join(out_dir, ck), model, params, tcfg.dtype, int(seed))
        rec.checkpoint = ck

    if tcfg.augmentation is None:
        rec.skipped["psa"] = "arm has no augmentation"
    else:
        rep = _step(rec, "psa", lambda: augment.psa_score(
            tcfg.augmentation, train_set, cfg.psa_thresholds, cfg.psa_n, cfg.eval_seed))
        rec.psa = _psa_dict(rep) if rep is not None else None

    fcfg = flatness.FlatnessConfig.preset(cfg.flatness_preset, **cfg.flatness_overrides)
    frep = _step(rec, "flatness", lambda: flatness.flatness_report(
        model, params, train_set, fcfg, tcfg.loss))
    rec.flatness = frep.to_dict() if frep is not None else None

    attacks = {a: robustness.ATTACK_PRESETS[a] for a in cfg.attacks}
    kinds, bounds = cfg.corruptions, (0.0, 1.0)
    if not is_image_data(test_set):
        rec.skipped["corruptions"] = "inputs are not unit-range images"
        kinds, bounds = (), None
    rrep = _step(rec, "robustness", lambda: robustness.robustness_report(
        model, params, test_set, attacks, kinds, cfg.severities, cfg.eval_seed, bounds))
    rec.robustness = rrep.to_dict() if rrep is not None else None
    rec.wall_clock = time.perf_counter() - t0
    return rec


@dataclass
class ExperimentResult:
    records: list[RunRecord]
    summary: list[dict]
    failed: bool


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> ExperimentResult:
    """Train and evaluate every arm under every seed, then summarise against ERM."""
    train_set, test_set = load_experiment_data(cfg.dataset)
    model = build_model(cfg.model, train_set)
    records = [run_single(cfg, arm, tcfg, seed, train_set, test_set, model, out_dir)
               for arm, tcfg in cfg.arms for seed in cfg.seeds]
    summary = summarize(records)
    if out_dir is not None:
        report(records, out_dir, summary)
    return ExperimentResult(records, summary, any(r.failed for r in records))


# --- summaries and report files ---------------------------------------------

# metric -> True if larger is better
METRIC_DIRECTIONS = {
    "test_error": False, "mu_pac_bayes": False, "lpf": False, "eps_sharp": False,
    "b_hat": True, "clean_error": False, "mce": False,
}


def record_metrics(rec: RunRecord) -> dict[str, float]:
    """Flat metric name -> value for one run (missing pieces are left out)."""
    m: dict[str, float] = {}
    for k in ("train_error", "test_error", "final_loss"):
        if getattr(rec, k) is not None:
            m[k] = getattr(rec, k)
    if rec.flatness:
        for k in ("mu_pac_bayes", "lpf", "eps_sharp", "b_hat"):
            m[k] = rec.flatness[k]
    if rec.robustness:
        if rec.robustness.get("clean_error") is not None:
            m["clean_error"] = rec.robustness["clean_error"]
        if rec.robustness.get("mce") is not None:
            m["mce"] = rec.robustness["mce"]
        for name, v in sorted(rec.robustness.get("adv_error", {}).items()):
            m[f"adv:{name}"] = v
    if rec.psa:
        for t, v in rec.psa["ecdf_at"].items():
            m[f"ecdf@{t}"] = v
    return m


def _better(metric: str, value: float, ref: float) -> bool:
    if metric.startswith("adv:"):
        return value < ref
    return value > ref if METRIC_DIRECTIONS[metric] else value < ref


def summarize(records: Sequence[RunRecord]) -> list[dict]:
    """Per-arm means and standard errors, deltas to ERM and an improvement rate."""
    arms: dict[str, list[dict]] = {}
    for r in records:
        arms.setdefault(r.arm, []).append(record_metrics(r))
    rows = []
    means: dict[str, dict[str, float]] = {}
    for arm, ms in arms.items():
        keys = sorted({k for m in ms for k in m})
        row: dict[str, Any] = {"arm": arm, "runs": len(ms)}
        means[arm] = {}
        for k in keys:
            vals = np.array([m[k] for m in ms if k in m], dtype=np.float64)
            means[arm][k] = float(vals.mean())
            row[k] = means[arm][k]
            row[f"{k}:stderr"] = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        rows.append(row)
    ref = means.get(ERM, {})
    for row in rows:
        compared = wins = 0
        for k, v in means[row["arm"]].items():
            if k in ref and (k in METRIC_DIRECTIONS or k.startswith("adv:")):
                row[f"{k}:delta"] = v - ref[k]
                if row["arm"] != ERM:
                    compared += 1
                    wins += _better(k, v, ref[k])
        row["improvement_rate"] = f"{wins}/{compared}" if row["arm"] != ERM else ""
    return rows


def format_delta(delta: float) -> str:
    """``(-1.23)`` / ``(+0.45)``; an exact tie prints ``(0.00)``."""
    text = f"{delta:+.2f}"
    if text in ("+0.00", "-0.00"):
        return "(0.00)"
    return f"({text})"


RUN_COLUMNS = ("arm", "seed", "train_error", "test_error", "epochs_run", "final_loss",
               "mu_pac_bayes", "lpf", "eps_sharp", "b_hat", "clean_error", "mce")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def runs_csv(records: Sequence[RunRecord]) -> str:
    extra = sorted({k for r in records for k in record_metrics(r)} - set(RUN_COLUMNS))
    cols = list(RUN_COLUMNS) + extra
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in records:
        m = {**record_metrics(r), "arm": r.arm, "seed": r.seed, "epochs_run": r.epochs_run}
        w.writerow([_fmt(m.get(c)) for c in cols])
    return buf.getvalue()


def summary_csv(summary: Sequence[dict]) -> str:
    metrics = sorted({k for row in summary for k in row
                      if ":" not in k or k.startswith(("adv:", "ecdf@"))} - {"arm", "runs", "improvement_rate"})
    metrics = [m for m in metrics if not m.endswith((":stderr", ":delta"))]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arm", "runs", *metrics, "improvement_rate"])
    for row in summary:
        cells = []
        for m in metrics:
            if m not in row:
                cells.append("")
                continue
            cell = f"{row[m]:.4f}"
            if f"{m}:delta" in row and row["arm"] != ERM:
                cell += " " + format_delta(row[f"{m}:delta"])
            cells.append(cell)
        w.writerow([row["arm"], row["runs"], *cells, row["improvement_rate"]])
    return buf.getvalue()


def report(records: Sequence[RunRecord], out_dir: str, summary: Sequence[dict] | None = None) -> list[str]:
    """Write ``runs.csv``, ``summary.csv``, ``records.json`` (deterministic) and
    ``timings.json`` (wall-clock, excluded from the deterministic files)."""
    if not records:
        raise ValueError("no records to report")
    os.makedirs(out_dir, exist_ok=True)
    summary = summarize(records) if summary is None else summary
    paths = {
        "runs.csv": runs_csv(records),
        "summary.csv": summary_csv(summary),
        "records.json": json.dumps([r.to_dict() for r in records], indent=2, sort_keys=True) + "\n",
        "timings.json": json.dumps([{"arm": r.arm, "seed": r.seed, "wall_clock": r.wall_clock}
                                    for r in records], indent=2) + "\n",
    }
    out = []
    for name, text in paths.items():
        p = os.path.join(out_dir, name)
        with open(p, "w", newline="") as fh:
            fh.write(text)
        out.append(p)
    return out


def load_records(path: str) -> list[RunRecord]:
    with open(path) as fh:
        return [RunRecord.from_dict(d) for d in json.load(fh)]


def parse_runs_csv(text: str) -> list[dict[str, Any]]:
    """Rows of ``runs.csv`` with numeric cells converted back to numbers."""
    rows = []
    for row in csv.DictReader(_io.StringIO(text)):
        parsed: dict[str, Any] = {}
        for k, v in row.items():
            if v == "":
                parsed[k] = None
            elif k == "arm":
                parsed[k] = v
            elif k in ("seed", "epochs_run"):
                parsed[k] = int(v)
            else:
                parsed[k] = float(v)
        rows.append(parsed)
    return rows
