"""Seeded prompt curation for building image-generation benchmarks.

Prompts are rendered from one fixed sentence template with six slots, each
filled by a uniform draw from an editable phrase pool. Slot draws for record
i come from a generator seeded with ``(seed, i)``, so any record can be
re-rendered in isolation and a batch can be produced in any order or in
parallel without changing a single prompt.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .datasets import ManifestEntry
from .errors import EmptyPool

TEMPLATE = (
    "A richly detailed, high-resolution and photorealistic image depicting: "
    "{subject} during the {time}. The scene includes {setting}, {visual}, and "
    "lifelike rendering. The image style resembles {style}. Use {light}."
)

SLOTS = ("subject", "time", "setting", "visual", "style", "light")

#: Generated benchmark images are requested at this square resolution.
IMAGE_SIZE = 1024

_POOL_DIR = os.path.join(os.path.dirname(__file__), "pools")

#: How many re-draws a duplicate slot combination gets before it is accepted.
MAX_DEDUP_ATTEMPTS = 100


@dataclass(frozen=True)
class PromptPools:
    """Candidate phrases per template slot; every pool must be non-empty."""

    subject: tuple
    time: tuple
    setting: tuple
    visual: tuple
    style: tuple
    light: tuple

    def __post_init__(self):
        for slot in SLOTS:
            pool = getattr(self, slot)
            if len(pool) == 0:
                raise EmptyPool(slot)
            if any(not phrase for phrase in pool):
                raise EmptyPool(slot)

    @property
    def sizes(self) -> dict:
        return {slot: len(getattr(self, slot)) for slot in SLOTS}


def parse_pool_file(path) -> tuple:
    """One phrase per line; blank lines and ``#`` comments are skipped."""
    phrases = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                phrases.append(line)
    return tuple(phrases)


def load_pools(directory=None) -> PromptPools:
    """Load ``<slot>.txt`` files from a directory (defaults to the packaged pools)."""
    directory = _POOL_DIR if directory is None else os.fspath(directory)
    pools = {}
    for slot in SLOTS:
        path = os.path.join(directory, f"{slot}.txt")
        if not os.path.exists(path):
            raise EmptyPool(slot)
        pools[slot] = parse_pool_file(path)
    return PromptPools(**pools)


@dataclass(frozen=True)
class PromptRecord:
    """One rendered prompt with everything needed to reproduce it."""

    id: int
    text: str
    seed: int
    slot_choices: dict
    target_generator: str


def _draw_choices(pools: PromptPools, rng: np.random.Generator) -> dict:
    choices = {}
    for slot in SLOTS:
        pool = getattr(pools, slot)
        choices[slot] = pool[int(rng.integers(len(pool)))]
    return choices


def render_prompt(pools: PromptPools, rng: np.random.Generator,
                  record_id: int = 0, seed: int = 0,
                  target_generator: str = "") -> PromptRecord:
    """Draw one phrase per slot from ``rng`` and fill the template."""
    choices = _draw_choices(pools, rng)
    return PromptRecord(id=record_id, text=TEMPLATE.format(**choices), seed=seed,
                        slot_choices=choices, target_generator=target_generator)


@dataclass(frozen=True)
class PromptBatch:
    records: tuple
    #: Record ids whose slot combination still collided after all re-draws.
    duplicates: tuple


def generate_batch(pools: PromptPools, count: int, seed: int,
                   target_generator: str = "") -> PromptBatch:
    """Render ``count`` prompts, re-drawing exact duplicates a bounded number of times.

    Record i draws from ``default_rng((seed, i))``. If its slot combination
    was already produced, up to :data:`MAX_DEDUP_ATTEMPTS` further draws are
    taken from the same stream; a combination that still collides is kept
    and its id reported in ``duplicates``.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    records = []
    duplicates = []
    seen = set()
    for i in range(count):
        rng = np.random.default_rng((seed, i))
        choices = _draw_choices(pools, rng)
        key = tuple(choices[slot] for slot in SLOTS)
        attempts = 0
        while key in seen and attempts < MAX_DEDUP_ATTEMPTS:
            choices = _draw_choices(pools, rng)
            key = tuple(choices[slot] for slot in SLOTS)
            attempts += 1
        if key in seen:
            duplicates.append(i)
        seen.add(key)
        records.append(PromptRecord(id=i, text=TEMPLATE.format(**choices), seed=seed,
                                    slot_choices=choices,
                                    target_generator=target_generator))
    return PromptBatch(records=tuple(records), duplicates=tuple(duplicates))


def batch_manifest(batch: PromptBatch, dataset_id: str = "multigen"):
    """Manifest stub rows for the images a generator is asked to produce.

    Returns ``(entries, extra)`` suitable for
    :func:`fusescan.datasets.save_manifest`; the extra fields carry the
    prompt id and the requested resolution.
    """
    entries = []
    extra = {}
    for i, record in enumerate(batch.records):
        gen = record.target_generator or "unspecified"
        entries.append(ManifestEntry(
            path=f"{dataset_id}/{gen}/{record.id:05d}.png",
            label="fake",
            generator_id=gen,
            dataset_id=dataset_id,
            split="test",
        ))
        extra[i] = {"prompt_id": record.id, "width": IMAGE_SIZE, "height": IMAGE_SIZE}
    return entries, extra
