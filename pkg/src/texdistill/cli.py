"""Command-line entry point: ``texdistill <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__

COMMANDS = {
    "synth-data": "write a synthetic labelled WAV corpus",
    "featurize": "resample, segment and log-mel a WAV tree; split by source; dump texture previews",
    "train-teacher": "train the teacher network on cross-entropy",
    "distill": "train a student against a frozen teacher (loss_mask=cls gives the baseline)",
    "eval": "score a checkpoint on one partition",
    "ablate": "distil one student per grid cell and seed; write a CSV table",
    "gradcheck": "finite-difference check of every op and loss",
}


class UsageError(Exception):
    pass


def _keys_epilog() -> str:
    from .engine import config_keys
    rows = config_keys()
    width = max(len(k) for k, _, _ in rows)
    lines = ["config keys (flat 'key = value' file passed with --config):"]
    lines += [f"  {k:<{width}}  {text} [default: {default}]" for k, default, text in rows]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="texdistill", description=__doc__.splitlines()[0],
                                     epilog=_keys_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=_keys_epilog(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", type=Path, help="run config file")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        if name == "synth-data":
            p.add_argument("--n", type=int, help="recordings per class (overrides n_per_class)")
        if name in ("featurize", "train-teacher", "distill", "eval", "ablate"):
            p.add_argument("--data", type=Path, required=True,
                           help="WAV tree (featurize) or feature directory (other commands)")
        if name in ("distill", "ablate"):
            p.add_argument("--teacher", type=Path, required=True, help="teacher checkpoint")
        if name == "eval":
            p.add_argument("--model", type=Path, required=True, help="checkpoint to score")
            p.add_argument("--split", default="test", choices=("train", "val", "test"))
        if name == "ablate":
            from .engine import AXES
            p.add_argument("--axis", required=True, choices=sorted(AXES))
        if name == "featurize":
            p.add_argument("--previews", type=int, default=1, help="texture previews per class")
    return parser


def _out_dir(args) -> Path:
    if args.out is None:
        raise UsageError(f"{args.command}: --out is required")
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _config(args):
    from .engine import load_config
    extra = {"n_per_class": getattr(args, "n", None)}
    return load_config(args.config, seed=args.seed, **extra)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth_data(args) -> int:
    from .data import tree_checksum
    from .frontend import CLASS_NAMES, synth_corpus, write_wav
    cfg = _config(args)
    out = _out_dir(args)
    corpus = synth_corpus(cfg.n_per_class, cfg.seed, cfg.seconds, cfg.snr_db)
    for w in corpus:
        write_wav(out / CLASS_NAMES[w.label] / f"{w.source_id}.wav", w, pcm16=True)
    digest = tree_checksum(out)
    print(f"wrote {len(corpus)} recordings to {out}")
    print(f"sha256 {digest}")
    return 0


def cmd_featurize(args) -> int:
    from .containers import save_pgm, save_txd
    from .core import Tensor, precision
    from .data import save_features, split_by_source, tree_checksum
    from .frontend import featurize, load_wav_tree
    from .stat_texture import stat_texture
    from .struct_texture import sobel_bank, struct_texture
    cfg = _config(args)
    out = _out_dir(args)
    waves, classes = load_wav_tree(args.data)
    specs = featurize(waves, seconds=cfg.seconds)
    if not specs:
        raise ValueError(f"{args.data}: no segment of {cfg.seconds} s could be cut")
    split = split_by_source(specs, seed=cfg.split_seed)
    save_features(out, specs, [split.partition_of[s.source_id] for s in specs], classes)

    previews = out / "previews"
    previews.mkdir(exist_ok=True)
    taken: dict[int, int] = {}
    with precision(np.float64):
        for s in specs:
            if taken.get(s.label, 0) >= args.previews:
                continue
            taken[s.label] = taken.get(s.label, 0) + 1
            stem = s.source_id.replace("/", "_") + f"_seg{s.segment_index}"
            save_pgm(previews / f"{stem}_logmel.pgm", s.values[::-1], scale=2)
            x = (s.values - s.values.mean()) / (s.values.std() + 1e-12)
            A = Tensor(x[None, None])
            for k, m in enumerate(struct_texture(A, cfg.levels, "max")):
                save_txd(previews / f"{stem}_struct_L{k}.txd", m.data[0, 0].astype(np.float32))
                save_pgm(previews / f"{stem}_struct_L{k}.pgm", np.abs(m.data[0, 0])[::-1], scale=2 ** (k + 1))
            edges = sobel_bank(A)  # orientation responses serve as channels
            tex = stat_texture(Tensor(edges.data[:, 0]), cfg.quant_levels, cfg.binning)
            save_txd(previews / f"{stem}_cooc.txd", tex.as_array()[0].astype(np.float32))
            save_pgm(previews / f"{stem}_cooc.pgm", tex.counts.data[0], scale=32, vmin=0.0)
    print(f"{len(specs)} segments from {len(waves)} recordings "
          f"(train {len(split.train)}, val {len(split.val)}, test {len(split.test)})")
    print(f"sha256 {tree_checksum(out)}")
    return 0


def _write_run(out: Path, record, modules: dict, data, name: str) -> None:
    from .engine import dump_json
    from .metrics import evaluate, save_confusion_pgm, write_metrics_csv
    from .models import save_checkpoint
    save_checkpoint(out / f"{name}.txdw", modules, {"mean": data.mean, "std": data.std,
                                                    "classes": list(data.class_names), "config": record.config})
    record.write(out / f"{name}_log.jsonl")
    dump_json(out / f"{name}_summary.json", record.summary())
    if len(data.test):
        metrics, cm = evaluate(modules["student" if "student" in modules else "teacher"], data, "test")
        write_metrics_csv(out / f"{name}_test_metrics.csv", [metrics.as_dict()])
        save_confusion_pgm(out / f"{name}_confusion.pgm", cm)


def cmd_train_teacher(args) -> int:
    from .data import load_features
    from .engine import train_teacher
    cfg = _config(args)
    out = _out_dir(args)
    data = load_features(args.data)
    teacher, record = train_teacher(cfg, data)
    _write_run(out, record, {"teacher": teacher}, data, "teacher")
    print(f"teacher: best epoch {record.best_epoch}, val acc {record.best_val_accuracy:.4f}, "
          f"test acc {record.test.get('accuracy', float('nan')):.4f}")
    return 0


def _load_teacher(path):
    from .models import load_checkpoint
    modules, meta = load_checkpoint(path)
    if "teacher" not in modules:
        raise ValueError(f"{path}: no teacher in checkpoint (found {sorted(modules)})")
    return modules["teacher"], meta


def cmd_distill(args) -> int:
    from .data import load_features
    from .engine import distill_student
    cfg = _config(args)
    out = _out_dir(args)
    data = load_features(args.data)
    teacher, _ = _load_teacher(args.teacher)
    d, record = distill_student(cfg, teacher, data)
    _write_run(out, record, d.modules(), data, "student")
    print(f"student ({'+'.join(cfg.loss_mask)}): best epoch {record.best_epoch}, "
          f"val acc {record.best_val_accuracy:.4f}, test acc {record.test.get('accuracy', float('nan')):.4f}")
    return 0


def cmd_eval(args) -> int:
    from .data import load_features
    from .engine import dump_json
    from .metrics import evaluate, save_confusion_pgm, write_metrics_csv
    from .models import load_checkpoint
    out = _out_dir(args)
    _config(args)  # validates --config even though scoring needs no hyperparameters
    data = load_features(args.data)
    modules, meta = load_checkpoint(args.model)
    if "mean" in meta:  # standardise with the statistics the model was trained on
        data.mean, data.std = meta["mean"], meta["std"]
    key = "student" if "student" in modules else "teacher" if "teacher" in modules else None
    if key is None:
        raise ValueError(f"{args.model}: no student or teacher network inside")
    metrics, cm = evaluate(modules[key], data, args.split)
    write_metrics_csv(out / f"metrics_{args.split}.csv", [metrics.as_dict()])
    dump_json(out / f"metrics_{args.split}.json", {**metrics.as_dict(), "confusion": cm.counts.tolist(),
                                                   "model": key, "classes": list(data.class_names)})
    save_confusion_pgm(out / f"confusion_{args.split}.pgm", cm)
    print(json.dumps(metrics.as_dict()))
    return 0


def cmd_ablate(args) -> int:
    from .data import load_features
    from .engine import ablate
    cfg = _config(args)
    out = _out_dir(args)
    data = load_features(args.data)
    teacher, _ = _load_teacher(args.teacher)
    rows = ablate(cfg, data, teacher, args.axis, out)
    print(f"wrote {len(rows)} rows to {out / f'ablation_{args.axis}.csv'}")
    failed = [r["cell"] for r in rows if r["error"]]
    if failed:
        print(f"failed cells: {', '.join(failed)}", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_suite
    cfg = _config(args)
    results = run_suite(seed=cfg.seed)
    worst = 0.0
    for name, err in results:
        worst = max(worst, err)
        print(f"{name:32s} {err:.3e} {'ok' if err <= TOLERANCE else 'FAIL'}")
    print(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    if args.out is not None:
        out = _out_dir(args)
        (out / "gradcheck.json").write_text(json.dumps(dict(results), indent=2) + "\n")
    return 0 if worst <= TOLERANCE else 1


HANDLERS = {
    "synth-data": cmd_synth_data, "featurize": cmd_featurize, "train-teacher": cmd_train_teacher,
    "distill": cmd_distill, "eval": cmd_eval, "ablate": cmd_ablate, "gradcheck": cmd_gradcheck,
}


def _origin(exc: BaseException) -> str:
    """Innermost package module on the traceback, e.g. ``texdistill.engine``."""
    tag = "texdistill"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("texdistill") and mod != "texdistill.cli":
            tag = mod
    return tag


def main(argv=None) -> int:
    from .engine import ConfigError
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"texdistill {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure becomes a tagged message and exit 1
        print(f"texdistill {args.command}: [{_origin(exc)}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
