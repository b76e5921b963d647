"""Operator command line.

Subcommands cover the full pipeline: synth, ingest, bin, train, eval,
gradcam, saliency, validate, report. Option resolution order is command
line flag, then NUTRICAST_* environment variable, then JSON config file,
then built-in default. Every command writes its artifacts under a run
directory with a fixed layout (checkpoint/, reports/, overlays/) plus a
run-manifest.json sufficient to replay it.

Failures print a single structured diagnostic line and exit 1; argparse
usage errors exit 2.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .binning import bin_nutrient
from .checkpoint import (
    Checkpoint,
    checkpoint_digest,
    load_checkpoint,
    save_checkpoint,
    write_loss_csv,
)
from .config import DEFAULT_CHANNELS, PRESETS, TrainConfig
from .data import load_manifest, select_items, split_dataset
from .errors import ConfigError, DomainError, IngestError, NutricastError
from .evaluation import evaluate_model, write_errors_csv
from .images import load_image, save_image
from .interpret import gradcam, save_heatmap_json, save_saliency, render_overlay, text_saliency
from .binning import representative_value
from .chemval import (
    load_chem_csv,
    three_source_report,
    write_comparison_csv,
    write_report_json,
)
from .synth import synth_generate
from .training import train_model

ENV_PREFIX = "NUTRICAST_"


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Resolved options, artifact paths, and the run manifest for one
    command invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file_config: dict[str, Any] = {}
        config_path = getattr(args, "config", None)
        if config_path:
            p = Path(config_path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            try:
                self.file_config = json.loads(p.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
            if not isinstance(self.file_config, dict):
                raise ConfigError(f"config file {p} must hold a JSON object")
        self.resolved: dict[str, Any] = {}
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    def opt(self, name: str, default, cast: Callable[[str], Any] = str):
        """Flag > environment > config file > default."""
        flag = getattr(self.args, name, None)
        if flag is not None:
            value = flag
        else:
            env = os.environ.get(ENV_PREFIX + name.upper())
            if env is not None:
                value = cast(env)
            elif name in self.file_config:
                raw = self.file_config[name]
                value = cast(raw) if isinstance(raw, str) else raw
            else:
                value = default
        self.resolved[name] = value
        return value

    def out_dir(self) -> Path:
        out = Path(self.opt("out", "runs/run"))
        out.mkdir(parents=True, exist_ok=True)
        return out

    def note_input(self, path: str | Path) -> Path:
        p = Path(path)
        if p.is_file():
            self.inputs[str(p)] = _sha256_file(p)
        return p

    def note_output(self, path: str | Path) -> Path:
        self.outputs.append(str(path))
        return Path(path)

    def write_manifest(self, out: Path, command: str) -> None:
        manifest = {
            "command": command,
            "argv": sys.argv[1:],
            "resolved_config": self.resolved,
            "input_hashes": self.inputs,
            "outputs": sorted(self.outputs),
            "seed": self.resolved.get("seed"),
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "version": __version__,
        }
        path = out / "run-manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _subdir(out: Path, name: str) -> Path:
    d = out / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _bool_cast(raw: str) -> bool:
    return raw.strip().lower() in ("1", "true", "yes", "on")


def _channels_cast(raw) -> tuple[str, ...]:
    if isinstance(raw, (list, tuple)):
        return tuple(raw)
    return tuple(c.strip() for c in str(raw).split(",") if c.strip())


# ---------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------


def cmd_synth(run: Run) -> None:
    out = run.out_dir()
    n = run.opt("n", 100, int)
    seed = run.opt("seed", 0, int)
    manifest = synth_generate(n, seed, out)
    run.note_output(manifest)
    run.note_output(out / "synth-truth.json")
    run.write_manifest(out, "synth")
    print(f"synth: wrote {n} items under {out}")


def cmd_ingest(run: Run) -> None:
    out = run.out_dir()
    manifest_path = run.note_input(run.opt("manifest", None))
    if manifest_path is None or not Path(manifest_path).is_file():
        raise IngestError(f"manifest not found: {manifest_path}")
    items = load_manifest(manifest_path)
    nutrients = sorted({n for item in items for n in item.nutrients})
    categories = sorted({item.category or "(uncategorized)" for item in items})
    summary = {
        "n_items": len(items),
        "nutrients": {
            n: {
                "unit": next(
                    item.nutrients[n].unit for item in items if n in item.nutrients
                ),
                "n_annotated": sum(1 for item in items if n in item.nutrients),
                "n_zero": sum(
                    1 for item in items if n in item.nutrients and item.value_of(n) == 0
                ),
            }
            for n in nutrients
        },
        "categories": {c: sum(1 for i in items if (i.category or "(uncategorized)") == c) for c in categories},
    }
    path = run.note_output(_subdir(out, "reports") / "ingest-summary.json")
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    run.write_manifest(out, "ingest")
    print(f"ingest: {len(items)} valid items, summary at {path}")


def cmd_bin(run: Run) -> None:
    out = run.out_dir()
    manifest_path = run.note_input(run.opt("manifest", None))
    nutrient = run.opt("nutrient", None)
    if nutrient is None:
        raise ConfigError("--nutrient is required")
    k_override = run.opt("k_override", None, int)
    items = load_manifest(manifest_path)
    values = np.array([item.value_of(nutrient) for item in items])
    labels, spec = bin_nutrient(values, k_override=k_override, nutrient=nutrient)
    payload = {
        "spec": spec.to_dict(),
        "n_items": len(items),
        "n_excluded": int((labels == -1).sum()),
        "label_counts": {
            str(c): int((labels == c).sum()) for c in sorted(set(labels.tolist()))
        },
    }
    path = run.note_output(_subdir(out, "reports") / f"binning-{nutrient}.json")
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    run.write_manifest(out, "bin")
    print(f"bin: {nutrient} -> {spec.class_count} non-zero classes, spec at {path}")


def _load_split(run: Run, items, ratio: float, seed: int):
    split = split_dataset(items, ratio=ratio, seed=seed)
    return split


def cmd_train(run: Run) -> None:
    out = run.out_dir()
    manifest_path = run.note_input(run.opt("manifest", None))
    items = load_manifest(manifest_path)
    preset = run.opt("preset", "tiny")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    seed = run.opt("seed", 0, int)
    ratio = run.opt("ratio", 0.7, float)
    channels = _channels_cast(run.opt("nutrient", ",".join(DEFAULT_CHANNELS), _channels_cast))
    train_config = TrainConfig(
        variant=run.opt("variant", "VL"),
        channels=channels,
        lr_head=run.opt("lr_head", 1e-3, float),
        lr_encoders=run.opt("lr_encoders", 1e-7, float),
        batch_size=run.opt("batch_size", 128, int),
        epochs=run.opt("epochs", 100, int),
        seed=seed,
        patience=run.opt("patience", None, int),
        contrastive_weight=run.opt("contrastive_weight", 0.0, float),
        weight_decay=run.opt("weight_decay", 0.0, float),
        grad_clip=run.opt("grad_clip", None, float),
    )
    split = _load_split(run, items, ratio, seed)
    train_items = select_items(items, split.train_ids)

    quiet = run.opt("quiet", False, _bool_cast)

    def progress(epoch: int, loss: float) -> None:
        if not quiet:
            print(f"epoch {epoch}: mean loss {loss:.4f}")

    ckpt, _model = train_model(train_items, PRESETS[preset], train_config, progress=progress)
    ckpt_dir = _subdir(out, "checkpoint")
    ckpt_path = run.note_output(ckpt_dir / "model.ckpt")
    digest = save_checkpoint(ckpt, ckpt_path)
    loss_csv = run.note_output(ckpt_dir / "loss.csv")
    write_loss_csv(ckpt.loss_history, loss_csv)
    reports = _subdir(out, "reports")
    split_path = run.note_output(reports / "split.json")
    split_path.write_text(
        json.dumps({"ratio": ratio, **split.to_dict()}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    if ckpt.loss_history:
        from .plots import plot_loss_curve

        loss_png = run.note_output(reports / "loss.png")
        plot_loss_curve(ckpt.loss_history, loss_png)
    run.write_manifest(out, "train")
    print(f"train: checkpoint {ckpt_path} (sha256 {digest[:12]}), loss history at {loss_csv}")


def _split_items(run: Run, items, ckpt: Checkpoint, which: str, ratio: float):
    if which == "all":
        return items
    if which not in ("train", "test"):
        raise ConfigError(f"--split must be train, test, or all, got {which!r}")
    tc = ckpt.metadata.get("train_config")
    seed = run.opt("split_seed", tc["seed"] if tc else 0, int)
    split = split_dataset(items, ratio=ratio, seed=seed)
    ids = split.train_ids if which == "train" else split.test_ids
    return select_items(items, ids)


def cmd_eval(run: Run) -> None:
    out = run.out_dir()
    ckpt_path = run.note_input(run.opt("checkpoint", None))
    manifest_path = run.note_input(run.opt("manifest", None))
    which = run.opt("split", "test")
    ratio = run.opt("ratio", 0.7, float)
    ckpt = load_checkpoint(ckpt_path)
    model = ckpt.to_model()
    items = load_manifest(manifest_path)
    subset = _split_items(run, items, ckpt, which, ratio)
    report = evaluate_model(
        model, subset, split=which, checkpoint_digest=checkpoint_digest(ckpt_path)
    )
    reports = _subdir(out, "reports")
    report_path = run.note_output(reports / f"eval-{which}.json")
    report.save(report_path)
    for channel in model.channels:
        preds, _ = model.predict(subset, channel)
        csv_path = run.note_output(reports / f"errors-{which}-{channel}.csv")
        write_errors_csv(model, subset, channel, preds, csv_path)
    from .plots import plot_auc_bars, plot_error_buckets

    auc_png = run.note_output(reports / f"auc-{which}.png")
    plot_auc_bars(report, auc_png)
    buckets_png = run.note_output(reports / f"error-buckets-{which}.png")
    plot_error_buckets(report, buckets_png)
    run.write_manifest(out, "eval")
    macro = {c: round(e.macro_auc, 4) for c, e in report.channels.items()}
    print(f"eval: split {which}, macro AUC {macro}, report at {report_path}")


def _find_item(items, item_id: str):
    for item in items:
        if item.id == item_id:
            return item
    raise DomainError(f"item id {item_id!r} not found in manifest")


def cmd_gradcam(run: Run) -> None:
    out = run.out_dir()
    ckpt_path = run.note_input(run.opt("checkpoint", None))
    manifest_path = run.note_input(run.opt("manifest", None))
    item_id = run.opt("id", None)
    channel = run.opt("nutrient", None)
    if item_id is None or channel is None:
        raise ConfigError("--id and --nutrient are required")
    model = load_checkpoint(ckpt_path).to_model()
    item = _find_item(load_manifest(manifest_path), item_id)
    target = run.opt("target_class", None, int)
    if target is None:
        classes, _ = model.predict([item], channel)
        target = int(classes[0])
    heatmap = gradcam(model, item, channel, target)
    overlays = _subdir(out, "overlays")
    overlay = render_overlay(load_image(item.image_path), heatmap)
    png_path = run.note_output(overlays / f"gradcam-{item_id}-{channel}.png")
    save_image(overlay, png_path)
    json_path = run.note_output(overlays / f"gradcam-{item_id}-{channel}.json")
    save_heatmap_json(heatmap, json_path)
    run.write_manifest(out, "gradcam")
    print(
        f"gradcam: item {item_id}, {channel} class {target}, "
        f"peak patch {heatmap.argmax_cell}, overlay at {png_path}"
    )


def cmd_saliency(run: Run) -> None:
    out = run.out_dir()
    ckpt_path = run.note_input(run.opt("checkpoint", None))
    manifest_path = run.note_input(run.opt("manifest", None))
    item_id = run.opt("id", None)
    channel = run.opt("nutrient", None)
    if item_id is None or channel is None:
        raise ConfigError("--id and --nutrient are required")
    method = run.opt("method", "grad_x_input")
    model = load_checkpoint(ckpt_path).to_model()
    item = _find_item(load_manifest(manifest_path), item_id)
    target = run.opt("target_class", None, int)
    if target is None:
        classes, _ = model.predict([item], channel)
        target = int(classes[0])
    sal = text_saliency(model, item, channel, target, method=method)
    overlays = _subdir(out, "overlays")
    json_path = run.note_output(overlays / f"saliency-{item_id}-{channel}.json")
    html_path = run.note_output(overlays / f"saliency-{item_id}-{channel}.html")
    save_saliency(sal, json_path, html_path)
    run.write_manifest(out, "saliency")
    top = max(sal.pairs(), key=lambda kv: kv[1])[0] if sal.pairs() else "(none)"
    print(f"saliency: item {item_id}, {channel} class {target}, top token {top!r}")


def cmd_validate(run: Run) -> None:
    out = run.out_dir()
    ckpt_path = run.note_input(run.opt("checkpoint", None))
    manifest_path = run.note_input(run.opt("manifest", None))
    chem_path = run.note_input(run.opt("chem", None))
    include_fat = run.opt("include_fat", False, _bool_cast)
    model = load_checkpoint(ckpt_path).to_model()
    items = load_manifest(manifest_path)
    records = load_chem_csv(chem_path)
    wanted = sorted({(r.id, r.nutrient) for r in records})
    by_id = {item.id: item for item in items}
    model_values: dict[tuple[str, str], float] = {}
    for item_id, nutrient in wanted:
        if item_id not in by_id or nutrient not in model.channels:
            continue
        classes, _ = model.predict([by_id[item_id]], nutrient)
        model_values[(item_id, nutrient)] = representative_value(
            model.binning[nutrient], int(classes[0])
        )
    rows, summary = three_source_report(items, model_values, records, include_fat=include_fat)
    reports = _subdir(out, "reports")
    csv_path = run.note_output(reports / "three-source.csv")
    write_comparison_csv(rows, csv_path)
    json_path = run.note_output(reports / "three-source.json")
    write_report_json(rows, summary, json_path)
    from .plots import plot_three_source

    png_path = run.note_output(reports / "three-source.png")
    plot_three_source(rows, png_path)
    run.write_manifest(out, "validate")
    print(
        f"validate: {summary['n_rows']} joined rows, "
        f"under-10% fraction {summary['under_10pct_fraction']:.3f}, report at {json_path}"
    )


def cmd_report(run: Run) -> None:
    out = run.out_dir()
    reports = _subdir(out, "reports")
    collected: dict[str, Any] = {}
    for path in sorted(reports.glob("*.json")):
        if path.name == "summary.json":
            continue
        try:
            collected[path.name] = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise IngestError(f"unreadable report {path}: {exc}") from None
    if not collected:
        raise DomainError(f"no report artifacts found under {reports}")
    summary_path = run.note_output(reports / "summary.json")
    summary_path.write_text(
        json.dumps(
            {"generated": sorted(collected), "reports": collected}, indent=2, sort_keys=True
        )
        + "\n",
        encoding="utf-8",
    )
    run.write_manifest(out, "report")
    print(f"report: aggregated {len(collected)} artifacts into {summary_path}")


# ---------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nutricast",
        description="Nutrient estimation from product images and ingredient statements.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", help="run directory (default runs/run)")
        p.add_argument("--config", help="JSON config file with option defaults")
        p.add_argument("--seed", type=int, help="run seed (default 0)")
        p.add_argument("--threads", type=int, help="cap numeric worker threads")

    p = sub.add_parser("synth", help="generate the synthetic glyph dataset")
    common(p)
    p.add_argument("--n", type=int, help="number of items (default 100)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate a manifest and summarize it")
    common(p)
    p.add_argument("--manifest", help="JSON-lines manifest path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("bin", help="derive a nutrient binning spec")
    common(p)
    p.add_argument("--manifest", help="JSON-lines manifest path")
    p.add_argument("--nutrient", help="nutrient channel to bin")
    p.add_argument("--k-override", dest="k_override", type=int, help="force the class count")
    p.set_defaults(func=cmd_bin)

    p = sub.add_parser("train", help="train a variant and write a checkpoint")
    common(p)
    p.add_argument("--manifest", help="JSON-lines manifest path")
    p.add_argument("--variant", choices=("VF", "LF", "VLF", "VL"), help="model variant (default VL)")
    p.add_argument("--nutrient", help="comma-separated channels (default all five)")
    p.add_argument("--preset", help="model size preset: tiny or full (default tiny)")
    p.add_argument("--ratio", type=float, help="train fraction (default 0.7)")
    p.add_argument("--epochs", type=int, help="training epochs (default 100)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="batch size (default 128)")
    p.add_argument("--lr-head", dest="lr_head", type=float, help="head learning rate (default 1e-3)")
    p.add_argument(
        "--lr-encoders", dest="lr_encoders", type=float, help="encoder learning rate (default 1e-7)"
    )
    p.add_argument("--patience", type=int, help="early-stop patience in epochs")
    p.add_argument(
        "--contrastive-weight",
        dest="contrastive_weight",
        type=float,
        help="weight of the contrastive term (VL only, default 0)",
    )
    p.add_argument("--weight-decay", dest="weight_decay", type=float, help="L2 penalty (default 0)")
    p.add_argument("--grad-clip", dest="grad_clip", type=float, help="global gradient-norm cap")
    p.add_argument("--quiet", action="store_const", const=True, help="suppress epoch progress")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and render figures")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--manifest", help="JSON-lines manifest path")
    p.add_argument("--split", help="train, test, or all (default test)")
    p.add_argument("--ratio", type=float, help="train fraction used at training time (default 0.7)")
    p.add_argument(
        "--split-seed", dest="split_seed", type=int, help="split seed (default: checkpoint's)"
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcam", help="patch heatmap overlay for one item")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--manifest", help="JSON-lines manifest path")
    p.add_argument("--id", help="item id")
    p.add_argument("--nutrient", help="nutrient channel")
    p.add_argument(
        "--class", dest="target_class", type=int, help="target class (default: predicted)"
    )
    p.set_defaults(func=cmd_gradcam)

    p = sub.add_parser("saliency", help="token saliency for one item")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--manifest", help="JSON-lines manifest path")
    p.add_argument("--id", help="item id")
    p.add_argument("--nutrient", help="nutrient channel")
    p.add_argument(
        "--class", dest="target_class", type=int, help="target class (default: predicted)"
    )
    p.add_argument("--method", choices=("grad_x_input", "attention"), help="saliency method")
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("validate", help="three-source chemistry comparison")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--manifest", help="JSON-lines manifest path")
    p.add_argument("--chem", help="chemistry CSV (id,nutrient,chem_mean,chem_sd,method)")
    p.add_argument(
        "--include-fat", dest="include_fat", action="store_const", const=True,
        help="keep fat rows in the comparison",
    )
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="aggregate a run directory's reports")
    common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = Run(args)
        threads = run.opt("threads", None, int)
        if threads is not None:
            if threads < 1:
                raise ConfigError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                args.func(run)
        else:
            args.func(run)
    except NutricastError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
