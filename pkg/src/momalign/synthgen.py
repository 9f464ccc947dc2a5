"""Synthetic feature-clip generator with controlled temporal misalignment.

Classes are ordered lists of subactions with mutually orthonormal latent
vectors and fixed spatial masks. Instances warp subaction durations by a
per-instance factor and optionally swap adjacent subactions, which produces
the duration-variation and order-inversion failure modes that adaptive
alignment is meant to absorb.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seqio
from .descriptor import FeatureClip


@dataclass(frozen=True)
class SubactionSpec:
    """One temporally contiguous segment: unit-norm latent, nominal duration
    in frames, and a fixed spatial activation mask."""

    sub_id: int
    latent: np.ndarray
    duration: int
    mask: np.ndarray

    def __post_init__(self):
        latent = np.asarray(self.latent, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=np.float64)
        if abs(np.linalg.norm(latent) - 1.0) > 1e-9:
            raise ValueError("SubactionSpec: latent must be unit norm")
        if self.duration < 1:
            raise ValueError("SubactionSpec: duration must be >= 1")
        object.__setattr__(self, "latent", latent)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class ClassDef:
    """One class plus the shared pool of all library latents, used as
    flickering clutter directions during rendering."""

    label: str
    subactions: tuple[SubactionSpec, ...]
    clutter_pool: np.ndarray


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 8
    subactions: int = 2
    frames: int = 8
    c_in: int = 64
    height: int = 6
    width: int = 6
    duration_jitter: float = 2.0
    reorder_prob: float = 0.5
    noise_sigma: float = 0.1
    distractor_amp: float = 1.5
    seed: int = 0
    instances_per_class: int = 12

    def __post_init__(self):
        if not 0.0 <= self.reorder_prob <= 1.0:
            raise ValueError("SynthConfig: reorder_prob must be in [0, 1]")
        if self.duration_jitter < 1.0:
            raise ValueError("SynthConfig: duration_jitter must be >= 1")
        if min(self.classes, self.subactions, self.frames, self.c_in, self.height, self.width) < 1:
            raise ValueError("SynthConfig: dimensions must be positive")
        if self.noise_sigma < 0.0:
            raise ValueError("SynthConfig: noise_sigma must be >= 0")
        if self.distractor_amp < 0.0:
            raise ValueError("SynthConfig: distractor_amp must be >= 0")


def _blob_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Seeded random blob: a Gaussian bump at a random center.

    Most of the spatial mean is removed so class identity lives mainly in
    second-order spatial statistics; a small positive floor keeps a faint
    first-order trace.
    """
    cy = rng.uniform(0, h - 1)
    cx = rng.uniform(0, w - 1)
    sigma = 0.2 * max(h, w)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return bump - bump.mean() + 0.05


def generate_class_library(cfg: SynthConfig) -> list[ClassDef]:
    """Class definitions with pairwise-orthonormal subaction latents.

    Latents are the Q factor of a seeded Gaussian matrix (Gram-Schmidt), so
    every latent is orthogonal to every other one, within and across classes.
    """
    total = cfg.classes * cfg.subactions
    if total > cfg.c_in:
        raise ValueError(
            f"generate_class_library: {total} latents do not fit in c_in={cfg.c_in}"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0xC1A55])))
    gauss = rng.standard_normal((cfg.c_in, total))
    q, r = np.linalg.qr(gauss)
    # Fix the sign convention so the library is a deterministic function of
    # the seed regardless of LAPACK's internal choices.
    q = q[:, :total] * np.sign(np.diag(r))[np.newaxis, :]

    base = cfg.frames // cfg.subactions
    extra = cfg.frames - base * cfg.subactions
    classes = []
    for c in range(cfg.classes):
        subs = []
        for k in range(cfg.subactions):
            latent = q[:, c * cfg.subactions + k]
            latent = latent / np.linalg.norm(latent)
            duration = base + (1 if k < extra else 0)
            subs.append(
                SubactionSpec(
                    sub_id=k,
                    latent=latent,
                    duration=max(1, duration),
                    mask=_blob_mask(rng, cfg.height, cfg.width),
                )
            )
        classes.append(
            ClassDef(
                label=f"class{c:03d}",
                subactions=tuple(subs),
                clutter_pool=q[:, :total],
            )
        )
    return classes


def render_instance(
    class_def: ClassDef, cfg: SynthConfig, seed: int
) -> tuple[FeatureClip, np.ndarray]:
    """One instance clip plus its ground-truth frame -> subaction labels.

    Durations are warped by per-instance log-uniform factors in
    [1/jitter, jitter]; with probability ``reorder_prob`` one random adjacent
    subaction pair swaps order. If the warped schedule cannot fill T frames
    the final subaction is repeated.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, seed])))
    subs = list(class_def.subactions)

    if len(subs) > 1 and rng.uniform() < cfg.reorder_prob:
        k = int(rng.integers(0, len(subs) - 1))
        subs[k], subs[k + 1] = subs[k + 1], subs[k]

    log_j = np.log(cfg.duration_jitter)
    warped = np.array(
        [s.duration * np.exp(rng.uniform(-log_j, log_j)) for s in subs]
    )
    lengths = np.maximum(1, np.round(warped * cfg.frames / warped.sum()).astype(int))
    # Trim overshoot from the longest segments, then pad the final subaction.
    while lengths.sum() > cfg.frames:
        lengths[int(np.argmax(lengths))] -= 1
    schedule: list[SubactionSpec] = []
    for s, length in zip(subs, lengths):
        schedule.extend([s] * int(length))
    while len(schedule) < cfg.frames:
        schedule.append(subs[-1])
    schedule = schedule[: cfg.frames]

    data = np.empty((cfg.frames, cfg.c_in, cfg.height, cfg.width))
    labels = np.empty(cfg.frames, dtype=np.int64)
    for t, s in enumerate(schedule):
        frame = s.latent[:, None, None] * s.mask[None, :, :]
        if cfg.distractor_amp > 0:
            # Flickering clutter: every frame briefly shows a random latent
            # from the shared pool (usually another class's subaction).
            # Per-frame statistics absorb the wrong-class evidence in full;
            # temporal windows average it down.
            pool = class_def.clutter_pool
            d = pool[:, int(rng.integers(pool.shape[1]))]
            frame = frame + cfg.distractor_amp * (
                d[:, None, None] * _blob_mask(rng, cfg.height, cfg.width)[None, :, :]
            )
        if cfg.noise_sigma > 0:
            frame = frame + cfg.noise_sigma * rng.standard_normal(frame.shape)
        data[t] = frame
        labels[t] = s.sub_id
    return FeatureClip(data), labels


def generate_dataset(cfg: SynthConfig, out_dir: str | Path) -> seqio.Manifest:
    """Render and store all instances; returns the written manifest.

    Clips are serialized as f32 tensors named "clip"; the dataset is fully
    reproducible from the seed (byte-identical files).
    """
    out = Path(out_dir)
    clips_dir = out / "clips"
    clips_dir.mkdir(parents=True, exist_ok=True)
    library = generate_class_library(cfg)
    entries = []
    for c, class_def in enumerate(library):
        for i in range(cfg.instances_per_class):
            clip, labels = render_instance(class_def, cfg, seed=c * 100_003 + i)
            clip_id = f"c{c:03d}_i{i:03d}"
            rel = f"clips/{clip_id}.fsq"
            seqio.write_container(
                {
                    "clip": clip.data.astype(np.float32),
                    "labels": labels.astype(np.float64),
                },
                out / rel,
            )
            entries.append(seqio.ManifestEntry(clip_id, class_def.label, rel))
    manifest = seqio.Manifest(tuple(entries), split="synthetic", root=str(out))
    seqio.write_manifest(manifest, out / "manifest.tsv")
    return manifest


def load_clip(manifest: seqio.Manifest, entry: seqio.ManifestEntry) -> FeatureClip:
    tensors = seqio.read_container(manifest.resolve(entry))
    return FeatureClip(np.asarray(tensors["clip"], dtype=np.float64))
