"""Teacher pretraining, student distillation and ablation grids."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .containers import write_jsonl
from .core import AdamW, Module, NonFiniteError, Tensor, no_grad, poly_lr
from .data import TrainingData
from .frontend import mask_values
from .losses import (LossBundle, Temperature, UncertaintyWeights, WEIGHTING_MODES, cls_loss, distill_loss,
                     stat_loss, struct_loss, total_loss)
from .metrics import METRIC_NAMES, evaluate, predict_logits, write_metrics_csv
from .models import Adapter, ConvNet, StudentNet, TeacherNet
from .stat_texture import stat_texture
from .struct_texture import FUSION_MODES, EdgeFusion, struct_texture

LOSS_TERMS = ("cls", "stat", "struct", "distill")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _opt(default, help_text, choices=None):
    return field(default=default, metadata={"help": help_text, "choices": choices})


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = _opt(150, "maximum number of epochs")
    patience: int = _opt(50, "epochs without validation improvement before stopping")
    batch_size: int = _opt(32, "mini-batch size (last partial batch dropped)")
    base_lr: float = _opt(1e-4, "initial learning rate of the polynomial schedule")
    lr_power: float = _opt(0.9, "polynomial schedule exponent")
    weight_decay: float = _opt(0.01, "decoupled weight decay on network weights")
    seed: int = _opt(0, "initialisation, batch order and augmentation seed")
    loss_mask: tuple = _opt(LOSS_TERMS, "enabled losses, comma separated; cls is mandatory")
    temperature: float = _opt(1.0, "initial distillation temperature")
    temperature_mode: str = _opt("learnable", "fixed or learnable temperature", ("fixed", "learnable"))
    fusion: str = _opt("all", "edge response fusion", FUSION_MODES)
    levels: int = _opt(4, "Laplacian pyramid levels")
    quant_levels: int = _opt(4, "quantisation levels of the statistical texture")
    binning: str = _opt("rbf", "soft binning of similarity values", ("rbf", "linear"))
    weighting: str = _opt("literal", "uncertainty weighting form", WEIGHTING_MODES)
    spec_augment: bool = _opt(True, "time/frequency masking of training batches")
    seeds: tuple = _opt((0, 1, 2), "seeds for repeated runs (ablate)")
    n_per_class: int = _opt(50, "synthetic recordings per class (synth-data)")
    snr_db: float = _opt(-3.0, "synthetic signal-to-background ratio in dB (synth-data)")
    seconds: float = _opt(5.0, "segment length in seconds (synth-data, featurize)")
    split_seed: int = _opt(0, "seed of the source-level train/val/test split (featurize)")

    @property
    def mask(self) -> dict[str, bool]:
        return {t: t in self.loss_mask for t in LOSS_TERMS}

    @property
    def cls_only(self) -> bool:
        return set(self.loss_mask) == {"cls"}


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None, source: str = "config"):
        self.key, self.line, self.source = key, line, source
        where = source + (f":{line}" if line is not None else "")
        super().__init__(f"{where}: " + (f"key '{key}': " if key else "") + message)


def config_keys() -> list[tuple[str, str, str]]:
    """(key, default, help) for every accepted config key."""
    out = []
    for f in fields(TrainConfig):
        default = f.default
        shown = ",".join(map(str, default)) if isinstance(default, tuple) else str(default).lower() \
            if isinstance(default, bool) else str(default)
        text = f.metadata["help"]
        if f.metadata["choices"]:
            text += f" {{{', '.join(f.metadata['choices'])}}}"
        out.append((f.name, shown, text))
    return out


def _convert(f, raw: str):
    kind = type(f.default)
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is tuple:
        items = [s.strip() for s in raw.replace("+", ",").split(",") if s.strip()]
        if f.name == "seeds":
            return tuple(int(s) for s in items)
        return tuple(items)
    return kind(raw)


def validate(cfg: TrainConfig, source: str = "config", lines: dict | None = None) -> TrainConfig:
    lines = lines or {}

    def fail(key, msg):
        raise ConfigError(msg, key, lines.get(key), source)

    if cfg.epochs < 1:
        fail("epochs", "must be >= 1")
    if cfg.patience < 1:
        fail("patience", "must be >= 1")
    if cfg.batch_size < 1:
        fail("batch_size", "must be >= 1")
    if cfg.base_lr <= 0:
        fail("base_lr", "must be positive")
    unknown = [t for t in cfg.loss_mask if t not in LOSS_TERMS]
    if unknown:
        fail("loss_mask", f"unknown loss {unknown[0]!r}; expected names from {LOSS_TERMS}")
    if "cls" not in cfg.loss_mask:
        fail("loss_mask", "cls must always be enabled")
    if cfg.temperature <= 0:
        fail("temperature", "must be positive")
    if cfg.levels < 1:
        fail("levels", "must be >= 1")
    if cfg.quant_levels < 2:
        fail("quant_levels", "must be >= 2")
    if not cfg.seeds:
        fail("seeds", "at least one seed required")
    if cfg.n_per_class < 1:
        fail("n_per_class", "must be >= 1")
    if cfg.seconds <= 0:
        fail("seconds", "must be positive")
    for f in fields(TrainConfig):
        choices = f.metadata["choices"]
        if choices and getattr(cfg, f.name) not in choices:
            fail(f.name, f"{getattr(cfg, f.name)!r} is not one of {choices}")
    # canonical order keeps logs and checksums independent of how the mask was written
    return replace(cfg, loss_mask=tuple(t for t in LOSS_TERMS if t in cfg.loss_mask))


def parse_config(text: str, source: str = "config", base: TrainConfig | None = None) -> TrainConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    known = {f.name: f for f in fields(TrainConfig)}
    values, lines = {}, {}
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=no, source=source)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError("unknown key", key, no, source)
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key, no, source)
        try:
            values[key] = _convert(known[key], raw)
        except ValueError as exc:
            raise ConfigError(f"bad value {raw!r} ({exc})", key, no, source) from None
        lines[key] = no
    return validate(replace(base or TrainConfig(), **values), source, lines)


def load_config(path=None, **overrides) -> TrainConfig:
    cfg = TrainConfig() if path is None else parse_config(Path(path).read_text(), str(path))
    return validate(replace(cfg, **{k: v for k, v in overrides.items() if v is not None}))


def format_config(cfg: TrainConfig) -> str:
    out = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        out.append(f"{f.name} = " + (",".join(map(str, v)) if isinstance(v, tuple)
                                     else str(v).lower() if isinstance(v, bool) else str(v)))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------

class TrainingError(RuntimeError):
    pass


@dataclass
class RunRecord:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    test: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def last_epoch(self) -> int:
        return self.epochs[-1]["epoch"] if self.epochs else 0

    @property
    def best_val_accuracy(self) -> float:
        return max(e["val_acc"] for e in self.epochs)

    def summary(self) -> dict:
        return {"best_epoch": self.best_epoch, "last_epoch": self.last_epoch,
                "stopped_early": self.stopped_early, "best_val_acc": self.best_val_accuracy,
                "test": self.test, **self.extras}

    def write(self, path) -> None:
        """JSON-lines log: one row per step, one per epoch, then a summary row."""
        rows = [{"type": "step", **s} for s in self.steps]
        rows += [{"type": "epoch", **e} for e in self.epochs]
        rows.append({"type": "summary", "config": self.config, **self.summary()})
        write_jsonl(path, rows)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _batch(data: TrainingData, idx: np.ndarray, cfg: TrainConfig, epoch: int, step: int) -> np.ndarray:
    x = data.train.x[idx]
    if cfg.spec_augment:
        x = np.stack([mask_values(x[i], [cfg.seed, epoch, step, i]) for i in range(len(idx))])
    return data.standardize(x)


def _validation(model, data: TrainingData, batch_size: int) -> tuple[float, float]:
    if len(data.val) == 0:
        return float("nan"), 0.0
    logits = predict_logits(model, data.standardize(data.val.x), batch_size)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = data.val.y
    return float(-logp[np.arange(len(y)), y].mean()), float((logits.argmax(axis=1) == y).mean())


def _fit(cfg: TrainConfig, data: TrainingData, state: Module, model: ConvNet, step_loss, groups,
         record: RunRecord) -> None:
    """Shared epoch loop: poly lr per optimizer step, early stopping, best-val restore."""
    n = len(data.train)
    bs = min(cfg.batch_size, n)
    steps_per_epoch = n // bs
    max_iter = cfg.epochs * steps_per_epoch
    opt = AdamW(groups, lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    order = np.random.default_rng([cfg.seed, 7])
    best_key, best_state, stale, step = None, None, 0, 0
    for epoch in range(1, cfg.epochs + 1):
        perm = order.permutation(n)
        loss_sum = correct = 0.0
        for b in range(steps_per_epoch):
            idx = perm[b * bs:(b + 1) * bs]
            opt.zero_grad()
            total, logits, info = step_loss(Tensor(_batch(data, idx, cfg, epoch, b)), data.train.y[idx])
            bad = [k for k, v in info.items() if isinstance(v, float) and not math.isfinite(v)]
            if bad or not np.isfinite(total.data):
                raise TrainingError(f"epoch {epoch} step {step}: non-finite {bad or ['total']} ({info})")
            total.backward()
            lr = poly_lr(step, max_iter, cfg.base_lr, cfg.lr_power)
            try:
                opt.step(lr)
            except NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch} step {step}: {exc}") from None
            step += 1
            record.steps.append({"step": step, "epoch": epoch, "lr": lr, **info})
            loss_sum += float(total.data)
            correct += float((logits.data.argmax(axis=1) == data.train.y[idx]).sum())
        val_loss, val_acc = _validation(model, data, bs)
        record.epochs.append({"epoch": epoch, "train_loss": loss_sum / steps_per_epoch,
                              "train_acc": correct / (steps_per_epoch * bs),
                              "val_loss": val_loss, "val_acc": val_acc})
        # higher accuracy wins; equal accuracy with lower loss also counts as progress
        key = (val_acc, -val_loss if math.isfinite(val_loss) else 0.0)
        if best_key is None or key > best_key:
            best_key, best_state, stale = key, state.state_dict(), 0
            record.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                record.stopped_early = True
                break
    state.load_state_dict(best_state)


def _param_groups(decayed: list, plain: list) -> list[dict]:
    return [{"params": [p for p in decayed if p.requires_grad]},
            {"params": [p for p in plain if p.requires_grad], "weight_decay": 0.0}]


def train_plain(cfg: TrainConfig, data: TrainingData, model: ConvNet) -> RunRecord:
    """Cross-entropy training of ``model`` in place; returns the run record (best-val weights restored)."""
    record = RunRecord(config=asdict(cfg))

    def step_loss(x, y):
        logits, _ = model(x)
        loss = cls_loss(logits, y)
        return loss, logits, {"l_cls": float(loss.data)}

    _fit(cfg, data, model, model, step_loss, _param_groups(model.parameters(), []), record)
    record.test = evaluate(model, data, "test")[0].as_dict() if len(data.test) else {}
    return record


def train_teacher(cfg: TrainConfig, data: TrainingData) -> tuple[TeacherNet, RunRecord]:
    teacher = TeacherNet(n_classes=data.n_classes, seed=cfg.seed)
    return teacher, train_plain(cfg, data, teacher)


def train_student(cfg: TrainConfig, data: TrainingData) -> tuple[StudentNet, RunRecord]:
    """Baseline: the student trained on labels alone."""
    student = StudentNet(n_classes=data.n_classes, seed=cfg.seed)
    return student, train_plain(cfg, data, student)


class Distiller(Module):
    """Everything the distillation run optimises: student, adapter, fusion, temperature, log-variances."""

    def __init__(self, cfg: TrainConfig, teacher: ConvNet, n_classes: int):
        self.student = StudentNet(n_classes=n_classes, seed=cfg.seed)
        c_t = teacher.tap_channels
        self.adapter = Adapter(self.student.tap_channels, c_t, seed=cfg.seed)
        self.fusion = EdgeFusion(cfg.fusion, c_t if cfg.fusion == "weighted_sum" else None, seed=cfg.seed)
        self.temperature = Temperature(cfg.temperature, cfg.temperature_mode == "learnable")
        self.weights = UncertaintyWeights(len(LOSS_TERMS))

    def modules(self) -> dict[str, Module]:
        return {"student": self.student, "adapter": self.adapter, "fusion": self.fusion,
                "temperature": self.temperature, "log_vars": self.weights}


def distill_student(cfg: TrainConfig, teacher: ConvNet, data: TrainingData) -> tuple[Distiller, RunRecord]:
    """Train a fresh student against a frozen teacher with the losses enabled in ``cfg.loss_mask``."""
    mask = cfg.mask
    teacher.freeze()
    before = teacher.checksum()
    d = Distiller(cfg, teacher, data.n_classes)
    record = RunRecord(config=asdict(cfg))

    def step_loss(x, y):
        logits, tap = d.student(x)
        bundle = LossBundle(l_cls=cls_loss(logits, y))
        if not cfg.cls_only:
            with no_grad():
                t_logits, t_tap = teacher(x)
            if mask["stat"]:
                bundle.l_stat = stat_loss(stat_texture(t_tap, cfg.quant_levels, cfg.binning),
                                          stat_texture(tap, cfg.quant_levels, cfg.binning))
            if mask["struct"]:
                with no_grad():  # teacher maps share the current fusion weights, detached
                    t_maps = struct_texture(t_tap, cfg.levels, d.fusion)
                bundle.l_struct = struct_loss(t_maps, struct_texture(d.adapter(tap), cfg.levels, d.fusion))
            if mask["distill"]:
                bundle.l_distill = distill_loss(logits, t_logits, d.temperature)
        if cfg.cls_only:
            total = bundle.l_cls  # nothing to weigh: identical to the plain trainer
        else:
            total = total_loss(bundle, d.weights.log_vars, cfg.weighting)
        info = {k: v for k, v in bundle.as_dict().items() if k != "total"}
        info["T"] = d.temperature.value
        return total, logits, info

    decayed = d.student.parameters() + d.adapter.parameters() + d.fusion.parameters()
    plain = d.temperature.parameters() + d.weights.parameters()
    _fit(cfg, data, d, d.student, step_loss, _param_groups(decayed, plain), record)
    after = teacher.checksum()
    if after != before:
        raise TrainingError("teacher parameters changed during distillation")
    record.extras["teacher_checksum"] = after
    record.extras["final_T"] = d.temperature.value
    record.extras["final_alphas"] = [float(a) for a in d.weights.alphas(cfg.weighting)]
    record.test = evaluate(d.student, data, "test")[0].as_dict() if len(data.test) else {}
    return d, record


# ---------------------------------------------------------------------------
# ablation grids
# ---------------------------------------------------------------------------

def _mask_cells():
    cells = []
    for bits in range(8):
        extra = tuple(t for k, t in enumerate(("stat", "struct", "distill")) if bits >> k & 1)
        cells.append(("cls",) + extra)
    cells.sort(key=lambda m: (len(m), [LOSS_TERMS.index(t) for t in m]))
    return cells


AXES = {
    "loss-mask": [({t: int(t in m) for t in LOSS_TERMS}, {"loss_mask": m}) for m in _mask_cells()],
    "temperature": [({"temperature_mode": mode, "temperature": t}, {"temperature_mode": mode, "temperature": t})
                    for mode in ("fixed", "learnable") for t in (1.0, 2.0)],
    "fusion": [({"fusion": m}, {"fusion": m}) for m in FUSION_MODES],
    "levels": [({"levels": n}, {"levels": n}) for n in (2, 4, 8)],
    "binning": [({"binning": b}, {"binning": b}) for b in ("linear", "rbf")],
    "quant": [({"quant_levels": n}, {"quant_levels": n}) for n in (2, 4, 8, 16, 32)],
}


def grid(axis: str) -> list[tuple[str, dict, dict]]:
    """(cell id, axis labels, config overrides) for every cell of ``axis``."""
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {sorted(AXES)}")
    return [(f"{axis}-{i:02d}", labels, overrides) for i, (labels, overrides) in enumerate(AXES[axis])]


def _run_cell(args):
    cfg, teacher, data, log_dir = args
    d, record = distill_student(cfg, teacher, data)
    if log_dir is not None:
        record.write(Path(log_dir) / f"seed{cfg.seed}.jsonl")
    return record.test


def _workers() -> int:
    raw = os.environ.get("TEXDISTILL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"TEXDISTILL_THREADS must be an integer, got {raw!r}") from None


def ablate(cfg: TrainConfig, data: TrainingData, teacher: ConvNet, axis: str, out_dir=None) -> list[dict]:
    """Distil one student per (cell, seed); returns one row per cell with mean and std per metric.

    A failing cell is reported in its ``error`` column and the grid carries on.
    """
    cells = grid(axis)
    jobs = []
    for cell_id, _, overrides in cells:
        log_dir = None
        if out_dir is not None:
            log_dir = Path(out_dir) / "cells" / cell_id
            log_dir.mkdir(parents=True, exist_ok=True)
        for seed in cfg.seeds:
            jobs.append((cell_id, (validate(replace(cfg, seed=seed, **overrides)), teacher, data, log_dir)))

    def guarded(job):
        try:
            return _run_cell(job), ""
        except Exception as exc:  # recorded per cell; the grid continues
            return None, f"{type(exc).__name__}: {exc}"

    workers = min(_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_run_cell, job) for _, job in jobs]
            results = []
            for f in futures:
                try:
                    results.append((f.result(), ""))
                except Exception as exc:
                    results.append((None, f"{type(exc).__name__}: {exc}"))
    else:
        results = [guarded(job) for _, job in jobs]

    rows = []
    for cell_id, labels, _ in cells:
        outcomes = [r for (cid, _), r in zip(jobs, results) if cid == cell_id]
        ok = [t for t, err in outcomes if t is not None]
        errors = sorted({err for _, err in outcomes if err})
        row = {"cell": cell_id, **labels, "runs": len(ok)}
        for name in METRIC_NAMES:
            vals = np.array([t[name] for t in ok])
            row[f"{name}_mean"] = float(vals.mean()) if len(vals) else float("nan")
            row[f"{name}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else (0.0 if len(vals) else float("nan"))
        row["error"] = "; ".join(errors)
        rows.append(row)
    if out_dir is not None:
        write_metrics_csv(Path(out_dir) / f"ablation_{axis}.csv", rows)
        (Path(out_dir) / "ablation_config.txt").write_text(format_config(cfg))
    return rows


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
