import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from texdistill.containers import read_jsonl
from texdistill.core import Tensor
from texdistill.engine import (AXES, ConfigError, RunRecord, TrainConfig, TrainingError, _fit, ablate,
                               config_keys, distill_student, format_config, grid, load_config, parse_config,
                               train_student, train_teacher)
from texdistill.models import StudentNet, TeacherNet


def quick(**kw):
    return replace(load_config(None), **{"epochs": 2, "patience": 5, "base_lr": 1e-3, **kw})


# -- configuration -------------------------------------------------------------

def test_parse_roundtrip():
    cfg = parse_config("epochs = 7\nloss_mask = distill, cls\nspec_augment = off  # comment\n")
    assert cfg.epochs == 7 and not cfg.spec_augment
    assert cfg.loss_mask == ("cls", "distill")
    assert parse_config(format_config(cfg)) == cfg


@pytest.mark.parametrize("text,key,line", [
    ("epochs = 3\nbogus = 1\n", "bogus", 2),
    ("epochs = 3\n\nepochs = 4\n", "epochs", 3),
    ("# header\nbase_lr = fast\n", "base_lr", 2),
    ("loss_mask = stat,struct\n", "loss_mask", 1),
    ("fusion = median\n", "fusion", 1),
    ("levels = 0\n", "levels", 1),
])
def test_config_errors_carry_line_and_key(text, key, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text, source="run.cfg")
    assert info.value.key == key and info.value.line == line
    assert str(info.value).startswith(f"run.cfg:{line}: key '{key}'")


def test_config_line_without_equals():
    with pytest.raises(ConfigError, match="run.cfg:1"):
        parse_config("epochs 3", source="run.cfg")


def test_config_keys_cover_dataclass():
    assert [k for k, _, _ in config_keys()] == list(TrainConfig.__dataclass_fields__)


# -- training ------------------------------------------------------------------

def test_masking_equivalence_is_bitwise(tiny_data):
    cfg = quick(loss_mask=("cls",))
    student, plain = train_student(cfg, tiny_data)
    d, masked = distill_student(cfg, TeacherNet(seed=9), tiny_data)
    assert d.student.checksum() == student.checksum()
    assert [s["l_cls"] for s in masked.steps] == [s["l_cls"] for s in plain.steps]
    assert all("l_stat" not in s and "l_distill" not in s for s in masked.steps)


def test_training_is_reproducible(tiny_data):
    cfg = quick(seed=4)
    a, ra = train_student(cfg, tiny_data)
    b, rb = train_student(cfg, tiny_data)
    assert a.checksum() == b.checksum()
    assert ra.epochs == rb.epochs
    c, _ = train_student(replace(cfg, seed=5), tiny_data)
    assert c.checksum() != a.checksum()


def test_early_stopping_on_frozen_lr(tiny_data):
    cfg = quick(epochs=30, patience=3, base_lr=1e-30)
    _, record = train_student(cfg, tiny_data)
    assert record.stopped_early
    assert record.last_epoch == record.best_epoch + 3
    best = record.epochs[record.best_epoch - 1]["val_acc"]
    assert best == record.best_val_accuracy


def test_best_epoch_is_never_worse(tiny_data):
    _, record = train_student(quick(epochs=4), tiny_data)
    assert record.epochs[record.best_epoch - 1]["val_acc"] == max(e["val_acc"] for e in record.epochs)


def test_full_distillation_keeps_teacher_frozen(tiny_data, tmp_path):
    teacher = TeacherNet(seed=2)
    before = teacher.checksum()
    d, record = distill_student(quick(epochs=1), teacher, tiny_data)
    assert teacher.checksum() == before == record.extras["teacher_checksum"]
    for s in record.steps:
        for k in ("l_cls", "l_stat", "l_struct", "l_distill"):
            assert math.isfinite(s[k])
        assert all(math.isfinite(a) for a in s["alphas"])
    # literal weighting: the log-variances sit at their fixed point, so every alpha stays 1
    assert record.extras["final_alphas"] == [1.0, 1.0, 1.0, 1.0]
    record.write(tmp_path / "log.jsonl")
    rows = read_jsonl(tmp_path / "log.jsonl")
    assert rows[-1]["type"] == "summary" and rows[0]["type"] == "step"


@pytest.mark.parametrize("overrides", [
    {"fusion": "weighted_sum", "weighting": "kendall", "temperature_mode": "fixed"},
    {"fusion": "max", "binning": "linear", "levels": 2, "quant_levels": 8},
])
def test_distillation_variants_run(tiny_data, overrides):
    d, record = distill_student(quick(epochs=1, **overrides), TeacherNet(seed=1), tiny_data)
    assert record.steps and all(math.isfinite(s["l_struct"]) for s in record.steps)


def test_learnable_temperature_moves(tiny_data):
    d, record = distill_student(quick(epochs=2, loss_mask=("cls", "distill"), temperature=2.0),
                                TeacherNet(seed=1), tiny_data)
    assert record.extras["final_T"] != 2.0


def test_teacher_training_returns_record(tiny_data):
    teacher, record = train_teacher(quick(epochs=1), tiny_data)
    assert isinstance(teacher, TeacherNet) and record.test["support"]


def test_non_finite_loss_aborts(tiny_data):
    model = StudentNet()

    def step_loss(x, y):
        logits, _ = model(x)
        return Tensor(np.array(np.nan)), logits, {}

    with pytest.raises(TrainingError, match="non-finite"):
        _fit(quick(), tiny_data, model, model, step_loss, [{"params": model.parameters()}],
             RunRecord(config={}))


# -- ablation ------------------------------------------------------------------

EXPECTED = {
    "loss-mask": 8, "fusion": 3, "levels": 3, "binning": 2, "quant": 5, "temperature": 4,
}


@pytest.mark.parametrize("axis,count", EXPECTED.items())
def test_grid_sizes(axis, count):
    cells = grid(axis)
    assert len(cells) == count
    assert len({c for c, _, _ in cells}) == count


def test_grid_labels():
    assert [l["fusion"] for _, l, _ in grid("fusion")] == ["all", "max", "weighted_sum"]
    assert [l["levels"] for _, l, _ in grid("levels")] == [2, 4, 8]
    assert [l["quant_levels"] for _, l, _ in grid("quant")] == [2, 4, 8, 16, 32]
    masks = [o["loss_mask"] for _, _, o in grid("loss-mask")]
    assert masks[0] == ("cls",) and masks[-1] == ("cls", "stat", "struct", "distill")
    assert all(m[0] == "cls" for m in masks) and len(set(masks)) == 8
    with pytest.raises(ValueError):
        grid("dropout")


def test_ablate_writes_table(tiny_data, tmp_path):
    cfg = quick(epochs=1, seeds=(0, 1))
    rows = ablate(cfg, tiny_data, TeacherNet(seed=1), "binning", tmp_path)
    assert [r["binning"] for r in rows] == ["linear", "rbf"]
    assert all(r["runs"] == 2 and r["error"] == "" for r in rows)
    with open(tmp_path / "ablation_binning.csv") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == 2 and "accuracy_mean" in table[0] and "accuracy_std" in table[0]
    assert (tmp_path / "cells" / "binning-00" / "seed1.jsonl").exists()


def test_ablate_records_failing_cells(tiny_data):
    cfg = quick(epochs=1, seeds=(0,))
    teacher = TeacherNet(seed=1)
    teacher.blocks[1].weight.data[:] = np.nan  # poisons every distillation step
    rows = ablate(cfg, tiny_data, teacher, "fusion")
    assert len(rows) == 3
    assert all(r["runs"] == 0 and r["error"] and math.isnan(r["accuracy_mean"]) for r in rows)


def test_axes_are_known():
    assert set(AXES) == set(EXPECTED)
