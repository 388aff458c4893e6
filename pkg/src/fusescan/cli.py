"""Command-line workflow: extract, train, eval, robustness, tsne, prompts, report.

Every command writes its artifacts under a run directory and finishes by
writing ``outputs.json``, a manifest of produced files with sizes and
sha256 digests. Reports embed the resolved configuration they were produced
with. Commands are deterministic: identical inputs and seeds give
byte-identical outputs, so reruns can be diffed.

Exit codes: 0 success, 1 validation error (bad flags, bad manifest,
impossible request), 2 data or runtime error (unreadable image, corrupt
cache or checkpoint).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .backbone import ToyBackbone, load_backbone
from .datasets import (
    load_manifest,
    read_feature_cache,
    save_manifest,
    write_feature_cache,
)
from .errors import DataError, ValidationError
from .fusion_head import (
    MlpConfig,
    TrainConfig,
    checkpoint_load,
    checkpoint_save,
    default_hidden_widths,
    predict_proba_batch,
    train,
)
from .imaging import load_image, parse_perturb
from .imaging import preprocess as preprocess_image
from .metrics import (
    EvalRecord,
    MetricsReport,
    aggregate,
    assert_two_axis_split,
    compute_report,
    group_records,
    render_csv,
    render_markdown,
)
from .promptgen import batch_manifest, generate_batch, load_pools
from .tsne import TsneConfig, run_tsne

DEFAULT_GRID = "clean,jpeg:95,jpeg:75,jpeg:50,blur:1.0,blur:2.0,blur:3.0"

_CONFIG_EPILOG = """\
config file:
  --config FILE reads defaults from a flat key=value text file ('#' starts a
  comment). Keys are the long option names with underscores, e.g.

      epochs=20
      batch_size=128
      lr=0.001

  Precedence: command-line flags, then the config file, then built-in
  defaults.
"""


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this toolkit reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- shared plumbing ---------------------------------------------------------

def _read_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValidationError(f"{path}: line {lineno} is not key=value")
            values[key.strip()] = value.strip()
    return values


def _resolve(args, key, default, cast):
    """Flag value if given, else config-file value, else the default."""
    flag = getattr(args, key)
    if flag is not None:
        return flag
    raw = args.config_values.get(key)
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError as exc:
        raise ValidationError(f"config key '{key}': {exc}") from exc


def _run_dir(args) -> str:
    os.makedirs(args.run_dir, exist_ok=True)
    return args.run_dir


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _finish_run(run_dir, produced) -> None:
    files = []
    for path in sorted(set(produced)):
        files.append({
            "path": os.path.relpath(path, run_dir).replace(os.sep, "/"),
            "bytes": os.path.getsize(path),
            "sha256": _sha256_file(path),
        })
    _write_json(os.path.join(run_dir, "outputs.json"), {"files": files})


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_text(path, text) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def _parse_backbone(text):
    """``toy:DIM[:SEED]`` builds a toy runner; anything else is a descriptor path."""
    if text.startswith("toy:"):
        parts = text.split(":")
        if len(parts) not in (2, 3):
            raise ValidationError(f"toy backbone spec must be toy:DIM[:SEED], got '{text}'")
        try:
            dim = int(parts[1])
            seed = int(parts[2]) if len(parts) == 3 else 0
        except ValueError as exc:
            raise ValidationError(f"bad toy backbone spec '{text}': {exc}") from exc
        return ToyBackbone(dim, seed)
    if not os.path.exists(text):
        raise ValidationError(f"backbone descriptor not found: {text}")
    return load_backbone(text)


def _runners(args) -> list:
    runners = []
    if args.semantic:
        runners.append(_parse_backbone(args.semantic))
    if args.structural:
        runners.append(_parse_backbone(args.structural))
    if not runners:
        raise ValidationError("at least one of --semantic/--structural is required")
    return runners


def _add_backbone_flags(p):
    p.add_argument("--semantic", metavar="SPEC",
                   help="semantic encoder: toy:DIM[:SEED] or a descriptor path")
    p.add_argument("--structural", metavar="SPEC",
                   help="structural encoder: toy:DIM[:SEED] or a descriptor path")


def _add_common_flags(p):
    p.add_argument("--run-dir", default="fusescan-run",
                   help="directory for all outputs (default: %(default)s)")
    p.add_argument("--config", help="flat key=value defaults file (see bottom of help)")


def _report_dict(rep: MetricsReport) -> dict:
    return {"n": rep.n, "accuracy": rep.accuracy,
            "average_precision": rep.average_precision,
            "real_accuracy": rep.real_accuracy, "fake_accuracy": rep.fake_accuracy}


def _agg_payload(agg) -> dict:
    return {
        "groups": {name: _report_dict(rep) for name, rep in agg.per_group.items()},
        "mean_accuracy": agg.mean_accuracy,
        "std_accuracy": agg.std_accuracy,
        "mean_average_precision": agg.mean_average_precision,
        "std_average_precision": agg.std_average_precision,
    }


def _scored_records(cache, entries, params, threshold_unused=None):
    """Join cache rows back to manifest entries and score them."""
    probs = predict_proba_batch(params, cache.features)
    records = []
    for i in range(cache.features.shape[0]):
        idx = int(cache.indices[i])
        if idx >= len(entries):
            raise ValidationError(
                f"cache row {i} references manifest index {idx}, "
                f"manifest has {len(entries)} entries"
            )
        entry = entries[idx]
        manifest_label = 1 if entry.label == "fake" else 0
        if manifest_label != int(cache.labels[i]):
            raise ValidationError(
                f"cache row {i} label {int(cache.labels[i])} disagrees with manifest "
                f"entry {idx} ('{entry.label}'); wrong manifest for this cache?"
            )
        records.append(EvalRecord(score=float(probs[i]), label=manifest_label,
                                  generator_id=entry.generator_id,
                                  dataset_id=entry.dataset_id))
    return records


# --- extract -----------------------------------------------------------------

def cmd_extract(args) -> int:
    run_dir = _run_dir(args)
    entries = load_manifest(args.manifest)
    runners = _runners(args)
    augment_probability = _resolve(args, "augment_probability", 0.0, float)
    augment_seed = _resolve(args, "augment_seed", 0, int)

    cache_path = os.path.join(run_dir, args.out)
    started = time.monotonic()
    report = write_feature_cache(
        cache_path, entries, runners,
        augment_probability=augment_probability,
        augment_seed=augment_seed,
        root=args.root,
        max_workers=args.threads,
    )
    elapsed = time.monotonic() - started
    rate = report.written / elapsed if elapsed > 0 else float("inf")

    run_config = {
        "command": "extract", "manifest": args.manifest, "out": args.out,
        "root": args.root, "backbones": [r.spec.id for r in runners],
        "augment_probability": augment_probability, "augment_seed": augment_seed,
    }
    report_path = os.path.join(run_dir, "extract-report.json")
    _write_json(report_path, {
        "kind": "extract",
        "written": report.written,
        "dim": report.dim,
        "backbone_hash": report.backbone_hash.hex(),
        "skipped": [{"index": s.index, "path": s.path, "reason": s.reason}
                    for s in report.skipped],
        "run_config": run_config,
    })
    _finish_run(run_dir, [cache_path, report_path])
    print(f"extracted {report.written}/{len(entries)} images "
          f"({len(report.skipped)} skipped) into {cache_path} "
          f"[dim {report.dim}, {rate:.1f} img/s]")
    for skip in report.skipped:
        print(f"  skipped {skip.path}: {skip.reason}", file=sys.stderr)
    return 0


# --- train ---------------------------------------------------------------

def _parse_depths(text):
    if "-" in text:
        lo, _, hi = text.partition("-")
        depths = list(range(int(lo), int(hi) + 1))
        if not depths:
            raise ValidationError(f"empty depth range '{text}'")
        return depths
    return [int(text)]


def cmd_train(args) -> int:
    run_dir = _run_dir(args)
    cache = read_feature_cache(args.cache)

    split_check = {"checked": False, "violations": []}
    if args.train_manifest and args.test_manifest:
        train_entries = load_manifest(args.train_manifest)
        test_entries = load_manifest(args.test_manifest)
        violations = assert_two_axis_split(train_entries, test_entries,
                                           strict=not args.allow_split_overlap)
        split_check = {"checked": True, "violations": violations}
        if violations:
            print(f"warning: split overlap allowed by flag: {', '.join(violations)}",
                  file=sys.stderr)

    cfg = TrainConfig(
        epochs=_resolve(args, "epochs", 10, int),
        batch_size=_resolve(args, "batch_size", 256, int),
        lr=_resolve(args, "lr", 1e-4, float),
        weight_decay=_resolve(args, "weight_decay", 0.01, float),
        seed=_resolve(args, "seed", 0, int),
    )

    if args.hidden:
        variants = [(None, tuple(int(w) for w in args.hidden.split(",")))]
    else:
        depths = _parse_depths(args.depth)
        variants = [(d, default_hidden_widths(d)) for d in depths]
    sweep = len(variants) > 1

    stem, ext = os.path.splitext(args.out)
    produced = []
    summary = []
    for depth, widths in variants:
        arch = MlpConfig(input_dim=cache.dim, hidden_widths=widths)
        params, history = train(cache.features, cache.labels, cfg, arch)
        suffix = f"-d{depth}" if sweep else ""
        ckpt_path = os.path.join(run_dir, f"{stem}{suffix}{ext}")
        checkpoint_save(params, ckpt_path)
        history_path = os.path.join(run_dir, f"history{suffix}.json")
        _write_json(history_path, {
            "kind": "train",
            "epochs": [{"epoch": h.epoch, "loss": h.loss, "accuracy": h.accuracy}
                       for h in history],
            "architecture": {"input_dim": arch.input_dim,
                             "hidden_widths": list(arch.hidden_widths),
                             "activation": arch.activation},
            "split_check": split_check,
            "run_config": {
                "command": "train", "cache": args.cache, "out": args.out,
                "epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr,
                "weight_decay": cfg.weight_decay, "seed": cfg.seed,
                "depth": depth, "hidden_widths": list(widths),
                "train_manifest": args.train_manifest,
                "test_manifest": args.test_manifest,
            },
        })
        produced += [ckpt_path, history_path]
        summary.append((ckpt_path, history[-1]))
    _finish_run(run_dir, produced)
    for ckpt_path, last in summary:
        print(f"trained {ckpt_path}: final loss {last.loss:.6f}, "
              f"train accuracy {last.accuracy:.4f}")
    return 0


# --- eval ----------------------------------------------------------------

def cmd_eval(args) -> int:
    run_dir = _run_dir(args)
    entries = load_manifest(args.manifest)
    params, _ = checkpoint_load(args.checkpoint)
    threshold = _resolve(args, "threshold", 0.5, float)

    if args.cache:
        cache = read_feature_cache(args.cache)
    else:
        runners = _runners(args)
        cache_path = os.path.join(run_dir, "eval-features.fdcache")
        write_feature_cache(cache_path, entries, runners, root=args.root)
        cache = read_feature_cache(cache_path)

    records = _scored_records(cache, entries, params)
    groups = group_records(records, by=args.group_by)
    per_group = {name: compute_report(members, threshold)
                 for name, members in groups.items()}
    agg = aggregate(per_group)

    payload = {
        "kind": "eval",
        "group_by": args.group_by,
        "threshold": threshold,
        **_agg_payload(agg),
        "run_config": {
            "command": "eval", "manifest": args.manifest, "cache": args.cache,
            "checkpoint": args.checkpoint, "group_by": args.group_by,
            "threshold": threshold,
        },
    }
    json_path = os.path.join(run_dir, "report.json")
    csv_path = os.path.join(run_dir, "report.csv")
    md_path = os.path.join(run_dir, "report.md")
    _write_json(json_path, payload)
    _write_text(csv_path, render_csv(agg))
    md = render_markdown(agg)
    _write_text(md_path, md)
    produced = [json_path, csv_path, md_path]
    if not args.cache:
        produced.append(os.path.join(run_dir, "eval-features.fdcache"))
    _finish_run(run_dir, produced)
    print(md, end="")
    return 0


# --- robustness ------------------------------------------------------------

def cmd_robustness(args) -> int:
    run_dir = _run_dir(args)
    entries = load_manifest(args.manifest)
    params, _ = checkpoint_load(args.checkpoint)
    runners = _runners(args)
    threshold = _resolve(args, "threshold", 0.5, float)

    grid = [parse_perturb(token) for token in args.grid.split(",")]
    labels = [spec.label for spec in grid]
    if len(set(labels)) != len(labels):
        raise ValidationError(f"duplicate grid cells: {args.grid}")

    kept_entries = []
    skipped = []
    features = {label: [] for label in labels}
    for index, entry in enumerate(entries):
        path = entry.path if args.root is None else os.path.join(args.root, entry.path)
        try:
            raw = load_image(path)
            per_cell = {}
            for spec, label in zip(grid, labels):
                perturbed = spec.apply(raw)
                parts = [r.embed(preprocess_image(perturbed, r.spec.preprocess))
                         for r in runners]
                vec = parts[0]
                for part in parts[1:]:
                    vec = np.concatenate([vec, part])
                per_cell[label] = vec
        except (FileNotFoundError, DataError) as exc:
            skipped.append({"index": index, "path": entry.path, "reason": str(exc)})
            continue
        for label in labels:
            features[label].append(per_cell[label])
        kept_entries.append(entry)

    if not kept_entries:
        raise ValidationError("no readable images in the manifest")

    cells = {}
    for label in labels:
        F = np.stack(features[label])
        probs = predict_proba_batch(params, F)
        records = [
            EvalRecord(score=float(p), label=1 if e.label == "fake" else 0,
                       generator_id=e.generator_id, dataset_id=e.dataset_id)
            for p, e in zip(probs, kept_entries)
        ]
        rep = compute_report(records, threshold)
        cells[label] = _report_dict(rep)

    payload = {
        "kind": "robustness",
        "grid": labels,
        "cells": cells,
        "skipped": skipped,
        "run_config": {
            "command": "robustness", "manifest": args.manifest,
            "checkpoint": args.checkpoint, "grid": args.grid,
            "backbones": [r.spec.id for r in runners], "threshold": threshold,
        },
    }
    json_path = os.path.join(run_dir, "robustness.json")
    _write_json(json_path, payload)
    csv_path = os.path.join(run_dir, "robustness.csv")
    _write_text(csv_path, _robustness_csv(labels, cells))
    md = _robustness_markdown(labels, cells, name=os.path.basename(args.checkpoint))
    md_path = os.path.join(run_dir, "robustness.md")
    _write_text(md_path, md)
    _finish_run(run_dir, [json_path, csv_path, md_path])
    print(md, end="")
    return 0


def _pct_cell(cell) -> str:
    acc = f"{100.0 * cell['accuracy']:.2f}"
    ap = cell.get("average_precision")
    return f"{acc} / {100.0 * ap:.2f}" if ap is not None else f"{acc} / -"


def _robustness_csv(labels, cells) -> str:
    lines = ["perturbation,n,accuracy,average_precision"]
    for label in labels:
        cell = cells[label]
        ap = cell.get("average_precision")
        lines.append(f"{label},{cell['n']},{cell['accuracy']!r},"
                     f"{'' if ap is None else repr(ap)}")
    return "\n".join(lines) + "\n"


def _robustness_markdown(labels, cells, name="head") -> str:
    header = ["Head"] + list(labels)
    row = [name] + [_pct_cell(cells[label]) for label in labels]
    widths = [max(len(header[i]), len(row[i])) for i in range(len(header))]
    out = ["| " + " | ".join(h.ljust(w) for h, w in zip(header, widths)) + " |",
           "|" + "|".join("-" * (w + 2) for w in widths) + "|",
           "| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |"]
    return "\n".join(out) + "\n"


# --- tsne ------------------------------------------------------------------

def cmd_tsne(args) -> int:
    run_dir = _run_dir(args)
    if len(args.cache) != len(args.manifest):
        raise ValidationError("--cache and --manifest must be given the same number of times")
    seed = _resolve(args, "seed", 0, int)

    rows = []
    meta_rows = []
    dim = None
    for cache_path, manifest_path in zip(args.cache, args.manifest):
        cache = read_feature_cache(cache_path)
        entries = load_manifest(manifest_path)
        if dim is None:
            dim = cache.dim
        elif cache.dim != dim:
            raise ValidationError(
                f"{cache_path}: feature dim {cache.dim} differs from first cache ({dim})"
            )
        for i in range(cache.features.shape[0]):
            idx = int(cache.indices[i])
            if idx >= len(entries):
                raise ValidationError(
                    f"{cache_path}: row {i} references manifest index {idx}, "
                    f"manifest has {len(entries)} entries"
                )
            entry = entries[idx]
            rows.append(cache.features[i])
            meta_rows.append(entry)

    if args.limit is not None and args.limit < len(rows):
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(len(rows), size=args.limit, replace=False))
        rows = [rows[i] for i in picks]
        meta_rows = [meta_rows[i] for i in picks]

    cfg = TsneConfig(
        perplexity=_resolve(args, "perplexity", 30.0, float),
        learning_rate=_resolve(args, "learning_rate", 200.0, float),
        iterations=_resolve(args, "iterations", 1000, int),
        seed=seed,
    )
    result = run_tsne(np.stack(rows), cfg)

    csv_path = os.path.join(run_dir, "tsne.csv")
    lines = ["x,y,label,generator_id,dataset_id"]
    for point, entry in zip(result.embedding, meta_rows):
        lines.append(f"{point[0]!r},{point[1]!r},{entry.label},"
                     f"{entry.generator_id},{entry.dataset_id}")
    _write_text(csv_path, "\n".join(lines) + "\n")

    png_path = os.path.join(run_dir, "tsne.png")
    _scatter_png(result.embedding, meta_rows, png_path)

    meta_path = os.path.join(run_dir, "tsne-meta.json")
    _write_json(meta_path, {
        "kind": "tsne",
        "points": len(meta_rows),
        "final_kl": float(result.kl_history[-1]),
        "jittered_pairs": result.jittered_pairs,
        "run_config": {
            "command": "tsne", "caches": list(args.cache),
            "manifests": list(args.manifest), "limit": args.limit,
            "perplexity": cfg.perplexity, "learning_rate": cfg.learning_rate,
            "iterations": cfg.iterations,
            "early_exaggeration": cfg.early_exaggeration,
            "exaggeration_iters": cfg.exaggeration_iters,
            "momentum_early": cfg.momentum_early,
            "momentum_late": cfg.momentum_late,
            "momentum_switch_iter": cfg.momentum_switch_iter,
            "seed": cfg.seed,
        },
    })
    _finish_run(run_dir, [csv_path, png_path, meta_path])
    print(f"embedded {len(meta_rows)} points, final KL {result.kl_history[-1]:.4f}, "
          f"wrote {csv_path} and {png_path}")
    return 0


def _scatter_png(embedding, entries, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    groups = {}
    for i, entry in enumerate(entries):
        key = entry.generator_id
        groups.setdefault(key, []).append(i)

    fig, ax = plt.subplots(figsize=(7, 6))
    cmap = plt.get_cmap("tab20")
    for g, (name, idxs) in enumerate(sorted(groups.items())):
        pts = embedding[idxs]
        ax.scatter(pts[:, 0], pts[:, 1], s=8, color=cmap(g % 20), label=name,
                   alpha=0.7, linewidths=0)
    if len(groups) <= 20:
        ax.legend(loc="best", fontsize="small", markerscale=1.5)
    ax.set_xlabel("t-SNE 1")
    ax.set_ylabel("t-SNE 2")
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={"Software": "fusescan"})
    plt.close(fig)


# --- prompts -----------------------------------------------------------------

def cmd_prompts(args) -> int:
    run_dir = _run_dir(args)
    pools = load_pools(args.pools)
    count = _resolve(args, "count", 1000, int)
    seed = _resolve(args, "seed", 0, int)

    batch = generate_batch(pools, count, seed, target_generator=args.generator)

    prompts_path = os.path.join(run_dir, "prompts.jsonl")
    with open(prompts_path, "w", encoding="utf-8") as f:
        for record in batch.records:
            f.write(json.dumps({
                "id": record.id, "text": record.text, "seed": record.seed,
                "target_generator": record.target_generator,
                "slot_choices": record.slot_choices,
            }) + "\n")

    entries, extra = batch_manifest(batch, dataset_id=args.dataset_id)
    stub_path = os.path.join(run_dir, "manifest-stub.jsonl")
    save_manifest(entries, stub_path, extra)

    meta_path = os.path.join(run_dir, "prompts-meta.json")
    _write_json(meta_path, {
        "kind": "prompts",
        "count": count,
        "pool_sizes": pools.sizes,
        "residual_duplicates": list(batch.duplicates),
        "run_config": {
            "command": "prompts", "count": count, "seed": seed,
            "generator": args.generator, "dataset_id": args.dataset_id,
            "pools": args.pools,
        },
    })
    _finish_run(run_dir, [prompts_path, stub_path, meta_path])
    sizes = " ".join(f"{slot}={n}" for slot, n in pools.sizes.items())
    print(f"wrote {count} prompts for {args.generator or 'unspecified generator'} "
          f"({len(batch.duplicates)} residual duplicates); pool sizes: {sizes}")
    return 0


# --- report ------------------------------------------------------------------

def cmd_report(args) -> int:
    run_dir = _run_dir(args)
    try:
        with open(args.input, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.input}: not valid JSON ({exc})") from exc

    kind = data.get("kind")
    if kind == "eval":
        per_group = {name: MetricsReport(**fields)
                     for name, fields in data["groups"].items()}
        agg = aggregate(per_group)
        text = render_markdown(agg) if args.format == "md" else render_csv(agg)
    elif kind == "robustness":
        labels = data["grid"]
        cells = data["cells"]
        if args.format == "md":
            text = _robustness_markdown(labels, cells)
        else:
            text = _robustness_csv(labels, cells)
    else:
        raise ValidationError(
            f"{args.input}: unknown report kind '{kind}' (expected 'eval' or 'robustness')"
        )

    out_path = os.path.join(run_dir, args.out or f"report.{args.format}")
    _write_text(out_path, text)
    _finish_run(run_dir, [out_path])
    print(text, end="")
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fusescan",
        description="Detect synthetic images with frozen encoder features and a small trained head.",
        epilog=_CONFIG_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="embed manifest images into a feature cache",
                       epilog=_CONFIG_EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--manifest", required=True, help="JSONL dataset manifest")
    _add_backbone_flags(p)
    p.add_argument("--out", default="features.fdcache",
                   help="cache filename inside the run dir (default: %(default)s)")
    p.add_argument("--root", help="directory manifest paths are relative to")
    p.add_argument("--augment-probability", type=float, default=None,
                   help="probability of JPEG/blur augmentation per image (default 0)")
    p.add_argument("--augment-seed", type=int, default=None,
                   help="seed for augmentation draws (default 0)")
    p.add_argument("--threads", type=int,
                   help="worker threads (default: FD_THREADS env var, else 1)")
    _add_common_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a detector head on a feature cache",
                       epilog=_CONFIG_EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--cache", required=True, help="feature cache from 'extract'")
    p.add_argument("--out", default="head.ckpt",
                   help="checkpoint filename inside the run dir (default: %(default)s)")
    p.add_argument("--epochs", type=int, default=None, help="training epochs (default 10)")
    p.add_argument("--batch-size", type=int, default=None, help="minibatch size (default 256)")
    p.add_argument("--lr", type=float, default=None, help="AdamW learning rate (default 1e-4)")
    p.add_argument("--weight-decay", type=float, default=None,
                   help="AdamW weight decay (default 0.01)")
    p.add_argument("--seed", type=int, default=None, help="init/shuffle seed (default 0)")
    p.add_argument("--depth", default="4",
                   help="total linear layers, 1-5; a range like '1-5' trains a sweep "
                        "(default: %(default)s)")
    p.add_argument("--hidden", help="explicit hidden widths, e.g. 1024,256,64 (overrides --depth)")
    p.add_argument("--train-manifest", help="manifest behind the cache, for the split check")
    p.add_argument("--test-manifest", help="intended test manifest, for the split check")
    p.add_argument("--allow-split-overlap", action="store_true",
                   help="downgrade train/test source overlap from an error to a warning")
    _add_common_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a manifest and emit grouped metric tables",
                       epilog=_CONFIG_EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--manifest", required=True, help="JSONL manifest behind the features")
    p.add_argument("--cache", help="existing feature cache; omit to extract on the fly")
    _add_backbone_flags(p)
    p.add_argument("--root", help="directory manifest paths are relative to")
    p.add_argument("--checkpoint", required=True, help="trained head checkpoint")
    p.add_argument("--group-by", choices=("dataset", "generator"), default="dataset")
    p.add_argument("--threshold", type=float, default=None,
                   help="fake decision threshold (default 0.5)")
    _add_common_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", help="re-evaluate under a JPEG/blur degradation grid",
                       epilog=_CONFIG_EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--manifest", required=True)
    _add_backbone_flags(p)
    p.add_argument("--root", help="directory manifest paths are relative to")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", default=DEFAULT_GRID,
                   help="comma-separated cells (default: %(default)s)")
    p.add_argument("--threshold", type=float, default=None,
                   help="fake decision threshold (default 0.5)")
    _add_common_flags(p)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("tsne", help="project cached features to 2-D for inspection",
                       epilog=_CONFIG_EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--cache", action="append", required=True,
                   help="feature cache; repeat to overlay several")
    p.add_argument("--manifest", action="append", required=True,
                   help="manifest matching each --cache, in order")
    p.add_argument("--perplexity", type=float, default=None, help="default 30")
    p.add_argument("--iterations", type=int, default=None, help="default 1000")
    p.add_argument("--learning-rate", type=float, default=None, help="default 200")
    p.add_argument("--seed", type=int, default=None, help="default 0")
    p.add_argument("--limit", type=int, help="seeded subsample to at most this many points")
    _add_common_flags(p)
    p.set_defaults(func=cmd_tsne)

    p = sub.add_parser("prompts", help="render seeded benchmark prompts and a manifest stub",
                       epilog=_CONFIG_EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--count", type=int, default=None, help="prompts to render (default 1000)")
    p.add_argument("--seed", type=int, default=None, help="batch seed (default 0)")
    p.add_argument("--generator", default="",
                   help="generator these prompts are destined for (recorded per prompt)")
    p.add_argument("--dataset-id", default="multigen",
                   help="dataset id for the manifest stub (default: %(default)s)")
    p.add_argument("--pools", help="directory of <slot>.txt pool files (default: built-in pools)")
    _add_common_flags(p)
    p.set_defaults(func=cmd_prompts)

    p = sub.add_parser("report", help="re-render a stored report JSON as markdown or CSV",
                       epilog=_CONFIG_EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--input", required=True, help="report.json or robustness.json")
    p.add_argument("--format", choices=("md", "csv"), default="md")
    p.add_argument("--out", help="output filename inside the run dir")
    _add_common_flags(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.config_values = _read_config_file(args.config) if args.config else {}
        return args.func(args)
    except ValidationError as exc:
        print(f"fusescan: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"fusescan: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"fusescan: error: file not found: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"fusescan: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fusescan: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
