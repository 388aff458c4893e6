"""Manifests, balanced sampling, and the binary feature cache.

A dataset is described by a JSONL manifest: one record per line with
``path``, ``label`` ("real" or "fake"), ``generator_id``, ``dataset_id``,
and ``split``. Extra fields are tolerated and ignored so manifests can carry
annotations (resolution, prompt ids) without breaking older readers.

Extracted features land in a little-endian binary cache so training and
evaluation never re-run the encoders. Layout:

    magic "FDCACHE" | u16 version | 32-byte sha256 of the backbone set
    | u32 feature dim | u64 row count
    | rows: u64 manifest index, u8 label, dim * f32

The row count is rewritten once writing finishes, so a crash mid-write
leaves a detectably short file rather than a silently truncated dataset.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    DecodeError,
    EncodeError,
    HashMismatch,
    InsufficientImages,
    InvariantViolation,
    ParseError,
    TruncatedCache,
    VersionMismatch,
)
from .fusion_head import fuse
from .imaging import load_image, preprocess, train_augment

REAL_GENERATOR_ID = "real"
LABELS = ("real", "fake")
SPLITS = ("train", "test")

CACHE_MAGIC = b"FDCACHE"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<7sH32sIQ")
_ROW_HEAD = struct.Struct("<QB")


@dataclass(frozen=True)
class ManifestEntry:
    """One dataset record. ``generator_id`` is "real" exactly for real images."""

    path: str
    label: str
    generator_id: str
    dataset_id: str
    split: str


_REQUIRED_FIELDS = ("path", "label", "generator_id", "dataset_id", "split")


def _validate_entry(entry: ManifestEntry, line_number: int) -> None:
    if not entry.path:
        raise InvariantViolation(line_number, "path must be non-empty")
    if entry.label not in LABELS:
        raise InvariantViolation(line_number, f"label must be one of {LABELS}, got '{entry.label}'")
    if entry.split not in SPLITS:
        raise InvariantViolation(line_number, f"split must be one of {SPLITS}, got '{entry.split}'")
    if not entry.generator_id:
        raise InvariantViolation(line_number, "generator_id must be non-empty")
    if not entry.dataset_id:
        raise InvariantViolation(line_number, "dataset_id must be non-empty")
    is_real_label = entry.label == "real"
    is_real_generator = entry.generator_id == REAL_GENERATOR_ID
    if is_real_label != is_real_generator:
        raise InvariantViolation(
            line_number,
            f"label '{entry.label}' conflicts with generator_id '{entry.generator_id}' "
            f"(real records, and only real records, use generator_id '{REAL_GENERATOR_ID}')",
        )


def load_manifest(path) -> list:
    """Parse and validate a JSONL manifest; error messages carry line numbers."""
    entries = []
    seen = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_number, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise ParseError(line_number, "record must be a JSON object")
            missing = [k for k in _REQUIRED_FIELDS if k not in record]
            if missing:
                raise ParseError(line_number, f"missing fields {missing}")
            entry = ManifestEntry(
                path=str(record["path"]),
                label=str(record["label"]),
                generator_id=str(record["generator_id"]),
                dataset_id=str(record["dataset_id"]),
                split=str(record["split"]),
            )
            _validate_entry(entry, line_number)
            key = (entry.dataset_id, entry.path)
            if key in seen:
                raise InvariantViolation(
                    line_number,
                    f"duplicate (dataset_id, path) {key}, first seen on line {seen[key]}",
                )
            seen[key] = line_number
            entries.append(entry)
    return entries


def save_manifest(entries, path, extra=None) -> None:
    """Write entries as JSONL. ``extra`` maps entry index to added fields."""
    with open(path, "w", encoding="utf-8") as f:
        for i, e in enumerate(entries):
            record = {"path": e.path, "label": e.label, "generator_id": e.generator_id,
                      "dataset_id": e.dataset_id, "split": e.split}
            if extra and i in extra:
                record.update(extra[i])
            f.write(json.dumps(record) + "\n")


@dataclass(frozen=True)
class SamplingSpec:
    """How many fakes to draw per generator, and whether to match reals to fakes."""

    per_generator: int
    seed: int = 0
    balance_real_fake: bool = True

    def __post_init__(self):
        if self.per_generator < 1:
            raise ValueError("per_generator must be >= 1")


def balanced_sample(entries, spec: SamplingSpec) -> list:
    """Draw an equal count per fake generator, without replacement.

    Real records are sampled to match the fake total when
    ``balance_real_fake`` is set, otherwise all reals are kept. Every
    shortfall is reported at once through :class:`InsufficientImages`.
    Output preserves manifest order.
    """
    entries = list(entries)
    by_generator = {}
    reals = []
    for i, e in enumerate(entries):
        if e.label == "fake":
            by_generator.setdefault(e.generator_id, []).append(i)
        else:
            reals.append(i)

    deficits = [(g, len(idxs), spec.per_generator)
                for g, idxs in sorted(by_generator.items())
                if len(idxs) < spec.per_generator]
    n_fakes = spec.per_generator * len(by_generator)
    if spec.balance_real_fake and len(reals) < n_fakes:
        deficits.append((REAL_GENERATOR_ID, len(reals), n_fakes))
    if deficits:
        raise InsufficientImages(deficits)

    rng = np.random.default_rng(spec.seed)
    chosen = []
    for g in sorted(by_generator):
        pool = by_generator[g]
        picks = rng.choice(len(pool), size=spec.per_generator, replace=False)
        chosen.extend(pool[p] for p in picks)
    if spec.balance_real_fake:
        picks = rng.choice(len(reals), size=n_fakes, replace=False)
        chosen.extend(reals[p] for p in picks)
    else:
        chosen.extend(reals)
    return [entries[i] for i in sorted(chosen)]


# --- feature cache ----------------------------------------------------------

def backbone_set_hash(specs) -> bytes:
    """Digest identifying an ordered backbone set; baked into every cache."""
    text = "\n".join(f"{s.id}:{s.embed_dim}:{int(s.l2_normalize)}" for s in specs)
    return hashlib.sha256(text.encode("utf-8")).digest()


@dataclass(frozen=True)
class SkipRecord:
    index: int
    path: str
    reason: str


@dataclass(frozen=True)
class ExtractionReport:
    written: int
    dim: int
    backbone_hash: bytes
    skipped: tuple


def _thread_cap() -> int:
    raw = os.environ.get("FD_THREADS", "")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _extract_row(entry, index, runners, augment_probability, augment_seed, root):
    path = entry.path if root is None else os.path.join(root, entry.path)
    try:
        raw = load_image(path)
        if augment_probability > 0:
            rng = np.random.default_rng((augment_seed, index))
            raw = train_augment(raw, rng, augment_probability)
        parts = [r.embed(preprocess(raw, r.spec.preprocess)) for r in runners]
    except (FileNotFoundError, DecodeError, EncodeError) as exc:
        return index, None, f"{type(exc).__name__}: {exc}"
    vec = parts[0]
    for part in parts[1:]:
        vec = fuse(vec, part)
    return index, vec, None


def write_feature_cache(path, entries, runners, *, augment_probability=0.0,
                        augment_seed=0, root=None, max_workers=None) -> ExtractionReport:
    """Extract fused features for every manifest entry into a cache file.

    Undecodable or missing images are skipped and reported, not fatal. Work
    may be spread over threads (capped by the FD_THREADS environment
    variable unless ``max_workers`` is given), but rows are always written
    in manifest order, so the output bytes do not depend on the thread
    count. Augmentation draws are keyed by ``(augment_seed, row index)`` for
    the same reason.
    """
    entries = list(entries)
    runners = list(runners)
    if not runners:
        raise ValueError("at least one backbone runner is required")
    dim = sum(r.spec.embed_dim for r in runners)
    digest = backbone_set_hash([r.spec for r in runners])
    workers = max_workers if max_workers is not None else _thread_cap()

    def job(args):
        index, entry = args
        return _extract_row(entry, index, runners, augment_probability, augment_seed, root)

    skipped = []
    written = 0
    with open(path, "wb") as f:
        f.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, digest, dim, 0))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = pool.map(job, enumerate(entries), chunksize=8)
                for index, vec, err in results:
                    if err is not None:
                        skipped.append(SkipRecord(index, entries[index].path, err))
                        continue
                    label = 1 if entries[index].label == "fake" else 0
                    f.write(_ROW_HEAD.pack(index, label))
                    f.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())
                    written += 1
        else:
            for index, entry in enumerate(entries):
                index, vec, err = job((index, entry))
                if err is not None:
                    skipped.append(SkipRecord(index, entry.path, err))
                    continue
                label = 1 if entry.label == "fake" else 0
                f.write(_ROW_HEAD.pack(index, label))
                f.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())
                written += 1
        f.seek(0)
        f.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, digest, dim, written))
    return ExtractionReport(written=written, dim=dim, backbone_hash=digest,
                            skipped=tuple(skipped))


@dataclass(frozen=True)
class FeatureCache:
    """In-memory view of a cache file: features, labels, and manifest indices."""

    features: np.ndarray
    labels: np.ndarray
    indices: np.ndarray
    dim: int
    backbone_hash: bytes


def read_feature_cache(path, expected_hash: bytes = None) -> FeatureCache:
    """Load a cache file, verifying structure and (optionally) the backbone hash."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _CACHE_HEADER.size:
        raise TruncatedCache(f"{path}: file shorter than the cache header")
    magic, version, digest, dim, count = _CACHE_HEADER.unpack_from(blob, 0)
    if magic != CACHE_MAGIC:
        raise VersionMismatch(f"{path}: not a feature cache (bad magic)")
    if version != CACHE_VERSION:
        raise VersionMismatch(f"{path}: cache version {version}, this build reads {CACHE_VERSION}")
    if expected_hash is not None and digest != expected_hash:
        raise HashMismatch(
            f"{path}: cache was written against a different backbone set"
        )
    row_size = _ROW_HEAD.size + 4 * dim
    payload = blob[_CACHE_HEADER.size:]
    if len(payload) < count * row_size:
        raise TruncatedCache(
            f"{path}: header declares {count} rows, payload holds "
            f"{len(payload) // row_size}"
        )
    if len(payload) > count * row_size:
        raise TruncatedCache(f"{path}: {len(payload) - count * row_size} trailing bytes")
    row_dtype = np.dtype([("index", "<u8"), ("label", "u1"), ("vec", "<f4", (dim,))])
    assert row_dtype.itemsize == row_size
    rows = np.frombuffer(payload, dtype=row_dtype, count=count)
    return FeatureCache(
        features=rows["vec"].copy(),
        labels=rows["label"].astype(np.int64),
        indices=rows["index"].astype(np.int64),
        dim=dim,
        backbone_hash=digest,
    )


# --- benchmark manifest templates -------------------------------------------
#
# Path stubs follow "<dataset>/<generator or real source>/<index>.png" and
# exist so users can lay real files out the same way and use the template
# as-is. Counts below mirror the published benchmark compositions these
# templates are meant to reproduce.

MULTIGEN_GENERATORS = (
    ("gpt-4o", 550),
    ("midjourney-v7", 1000),
    ("imagen-4", 1000),
    ("imagen-4-ultra", 1000),
    ("flux-1", 1000),
    ("kandinsky-3", 1000),
    ("pixart-delta", 1000),
    ("juggernaut-v11", 1000),
    ("dreamshaper", 1000),
    ("cogview4-6b", 1000),
    ("hidream-i1", 1000),
    ("sd3.5-medium", 1000),
)

TRAIN_GENERATORS = ("sd1.4", "sd2.1")


def _rows(dataset_id, split, generator_id, count, subdir, label):
    return [
        ManifestEntry(
            path=f"{dataset_id}/{subdir}/{i:05d}.png",
            label=label,
            generator_id=generator_id,
            dataset_id=dataset_id,
            split=split,
        )
        for i in range(count)
    ]


def multigen_template() -> list:
    """Test manifest for the 12-generator benchmark: 11550 fakes, 1000 reals."""
    entries = []
    for gen, count in MULTIGEN_GENERATORS:
        entries.extend(_rows("multigen", "test", gen, count, gen, "fake"))
    entries.extend(_rows("multigen", "test", REAL_GENERATOR_ID, 1000, "unsplash", "real"))
    return entries


def genimage_template() -> list:
    """GenImage-style test manifest: eight generators x 500 fakes, 4000 reals."""
    gens = ("biggan", "vqdm", "sd1.4", "sd1.5", "wukong", "adm", "glide", "midjourney-v5")
    entries = []
    for gen in gens:
        entries.extend(_rows("genimage", "test", gen, 500, gen, "fake"))
    entries.extend(_rows("genimage", "test", REAL_GENERATOR_ID, 4000, "imagenet", "real"))
    return entries


def imaginet_template() -> list:
    """ImagiNet-style test manifest: 5000 fakes across content categories, 5000 reals."""
    fakes = (
        ("photos", "stylegan-xl", 388),
        ("photos", "progan", 424),
        ("photos", "sd2.1", 361),
        ("photos", "sdxl-1.0", 380),
        ("paintings", "stylegan3", 623),
        ("paintings", "sd2.1", 131),
        ("paintings", "sdxl-1.0", 129),
        ("paintings", "animagine-xl", 246),
        ("faces", "stylegan-xl", 509),
        ("faces", "sd2.1", 295),
        ("faces", "sdxl-1.0", 288),
        ("other", "midjourney", 626),
        ("other", "dalle3", 600),
    )
    entries = []
    for category, gen, count in fakes:
        entries.extend(_rows("imaginet", "test", gen, count, f"{category}/{gen}", "fake"))
    entries.extend(_rows("imaginet", "test", REAL_GENERATOR_ID, 5000, "real", "real"))
    return entries


def chameleon_template() -> list:
    """Chameleon-style test manifest: 1478 fakes (unreported generators), 1117 reals."""
    entries = _rows("chameleon", "test", "unknown", 1478, "fake", "fake")
    entries.extend(_rows("chameleon", "test", REAL_GENERATOR_ID, 1117, "real", "real"))
    return entries


def train_template(fake_per_generator: int = 15000, real_count: int = 30000) -> list:
    """Training manifest over the two early-diffusion generators plus reals."""
    entries = []
    for gen in TRAIN_GENERATORS:
        entries.extend(_rows("train-mix", "train", gen, fake_per_generator, gen, "fake"))
    entries.extend(_rows("train-mix", "train", REAL_GENERATOR_ID, real_count, "real", "real"))
    return entries
