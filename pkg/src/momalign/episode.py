"""N-way K-shot episodic evaluation: sampling, prototypes, classification by
alignment score, and accuracy aggregation with confidence intervals."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import alignment, descriptor, synthgen
from .descriptor import DescriptorSequence, FeatureClip, ScaleConfig
from .seqio import Manifest, ManifestEntry

#: Metric selectors: representation pathway x scoring rule.
METRICS = ("a2", "pp", "cr", "gap-a2", "cov-mn-a2", "ms-a2")

_METRIC_REPR = {
    "a2": "m2",
    "pp": "m2",
    "cr": "m2",
    "gap-a2": "gap",
    "cov-mn-a2": "covmn",
    "ms-a2": "ms1",
}


@dataclass(frozen=True)
class Episode:
    """One N-way K-shot task. Query labels are class indices into
    ``class_labels`` (kept for scoring, hidden from the classifier)."""

    ways: int
    shots: int
    queries: int
    class_labels: tuple[str, ...]
    support: tuple[tuple[ManifestEntry, int], ...]
    query: tuple[tuple[ManifestEntry, int], ...]
    seed: int


@dataclass(frozen=True)
class MetricResult:
    metric: str
    mean_accuracy: float
    ci95: float
    episode_accuracies: np.ndarray


@dataclass(frozen=True)
class Report:
    ways: int
    shots: int
    queries: int
    episodes: int
    seed: int
    results: tuple[MetricResult, ...]


def sample_episode(
    manifest: Manifest, n: int, k: int, z: int, seed: int
) -> Episode:
    """Reproducibly sample one episode; support and query sets are disjoint.

    ``z`` queries are spread over the ``n`` sampled classes (the first
    ``z % n`` classes receive one extra query).
    """
    grouped = manifest.by_label()
    labels = sorted(grouped)
    per_class_q = [z // n + (1 if i < z % n else 0) for i in range(n)]
    need = k + max(per_class_q)
    eligible = [lab for lab in labels if len(grouped[lab]) >= need]
    if len(eligible) < n:
        raise ValueError(
            f"sample_episode: need {n} classes with >= {need} clips, "
            f"manifest has {len(eligible)} of {len(labels)}"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    chosen = [eligible[i] for i in rng.choice(len(eligible), size=n, replace=False)]
    support = []
    query = []
    for ci, lab in enumerate(chosen):
        clips = grouped[lab]
        picks = rng.choice(len(clips), size=k + per_class_q[ci], replace=False)
        for p in picks[:k]:
            support.append((clips[p], ci))
        for p in picks[k:]:
            query.append((clips[p], ci))
    return Episode(
        ways=n,
        shots=k,
        queries=z,
        class_labels=tuple(chosen),
        support=tuple(support),
        query=tuple(query),
        seed=seed,
    )


def build_prototypes(
    support_by_class: list[list[DescriptorSequence]], k: int
) -> list[DescriptorSequence]:
    """Per-class prototype: entrywise mean of K support descriptor sequences."""
    prototypes = []
    for ci, seqs in enumerate(support_by_class):
        if len(seqs) != k:
            raise ValueError(f"build_prototypes: class {ci} has {len(seqs)} != {k} sequences")
        first = seqs[0]
        for s in seqs[1:]:
            if not first.same_structure(s):
                raise ValueError(f"build_prototypes: structure mismatch within class {ci}")
        mean = np.mean([s.vectors for s in seqs], axis=0)
        prototypes.append(DescriptorSequence(mean, first.scale_ids, first.times))
    return prototypes


def score_pair(q: DescriptorSequence, s: DescriptorSequence, metric: str) -> float:
    if metric in ("a2", "gap-a2", "cov-mn-a2", "ms-a2"):
        return alignment.emd_score(q, s)
    if metric == "pp":
        return alignment.fixed_alignment_pp(q, s)
    if metric == "cr":
        return alignment.fixed_alignment_cross(q, s)
    raise ValueError(f"score_pair: unknown metric '{metric}'")


def classify_query(
    query: DescriptorSequence,
    prototypes: list[DescriptorSequence],
    metric: str = "a2",
) -> tuple[int, np.ndarray]:
    """Alignment-score logits against every prototype; argmax prediction,
    exact ties broken by lowest class index."""
    if not prototypes:
        raise ValueError("classify_query: empty prototype set")
    logits = np.array([score_pair(query, p, metric) for p in prototypes])
    return int(np.argmax(logits)), logits


class DescriptorExtractor:
    """Maps clips to descriptor sequences per representation, with caching.

    Representations: "m2" multi-scale second-order, "gap" first-order
    average pooling, "covmn" single-scale plain second moments, "ms1"
    multi-scale first-order.
    """

    def __init__(self, scales: list[ScaleConfig]):
        self.scales = scales
        self._cache: dict[tuple[str, str], DescriptorSequence] = {}

    def extract(self, clip: FeatureClip, representation: str) -> DescriptorSequence:
        if representation == "m2":
            return descriptor.multi_scale_descriptors(clip, self.scales)
        if representation == "gap":
            return descriptor.gap_descriptor(clip)
        if representation == "covmn":
            return descriptor.cov_mn_descriptors(clip)
        if representation == "ms1":
            return descriptor.multi_scale_first_order(clip, self.scales)
        raise ValueError(f"unknown representation '{representation}'")

    def cached(
        self, clip_id: str, representation: str, loader
    ) -> DescriptorSequence:
        key = (clip_id, representation)
        if key not in self._cache:
            self._cache[key] = self.extract(loader(), representation)
        return self._cache[key]


def _episode_accuracy(
    episode: Episode,
    manifest: Manifest,
    extractor: DescriptorExtractor,
    metrics: list[str],
) -> dict[str, float]:
    def loader(entry):
        return lambda: synthgen.load_clip(manifest, entry)

    accs = {}
    for metric in metrics:
        rep = _METRIC_REPR[metric]
        by_class: list[list[DescriptorSequence]] = [[] for _ in range(episode.ways)]
        for entry, ci in episode.support:
            by_class[ci].append(extractor.cached(entry.clip_id, rep, loader(entry)))
        prototypes = build_prototypes(by_class, episode.shots)
        correct = 0
        for entry, ci in episode.query:
            qdesc = extractor.cached(entry.clip_id, rep, loader(entry))
            pred, _ = classify_query(qdesc, prototypes, metric)
            correct += int(pred == ci)
        accs[metric] = correct / len(episode.query)
    return accs


def evaluate(
    manifest: Manifest,
    n: int,
    k: int,
    z: int,
    episodes: int,
    seed: int,
    metrics: list[str] | None = None,
    scales: list[ScaleConfig] | None = None,
    workers: int = 1,
) -> Report:
    """Mean accuracy and 95% normal-approximation confidence interval over
    ``episodes`` independently sampled episodes.

    Deterministic for fixed (manifest, config, seed) regardless of
    ``workers``: per-episode seeds derive from (seed, episode index) and
    results are reduced in episode order.
    """
    metrics = list(metrics or ["a2"])
    for m in metrics:
        if m not in METRICS:
            raise ValueError(f"evaluate: unknown metric '{m}' (choose from {METRICS})")
    if scales is None:
        scales = descriptor.default_scales(seed=seed)
    extractor = DescriptorExtractor(scales)

    episode_seeds = [
        int(np.random.SeedSequence([seed, e]).generate_state(1)[0])
        for e in range(episodes)
    ]
    sampled = [sample_episode(manifest, n, k, z, s) for s in episode_seeds]

    # Pre-warm the descriptor cache serially so threads only read it.
    needed_reps = {_METRIC_REPR[m] for m in metrics}
    clip_ids: dict[str, ManifestEntry] = {}
    for ep in sampled:
        for entry, _ in ep.support + ep.query:
            clip_ids.setdefault(entry.clip_id, entry)
    for clip_id, entry in sorted(clip_ids.items()):
        for rep in sorted(needed_reps):
            extractor.cached(clip_id, rep, lambda e=entry: synthgen.load_clip(manifest, e))

    def run(ep: Episode) -> dict[str, float]:
        return _episode_accuracy(ep, manifest, extractor, metrics)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_episode = list(pool.map(run, sampled))
    else:
        per_episode = [run(ep) for ep in sampled]

    results = []
    for m in metrics:
        accs = np.array([pe[m] for pe in per_episode])
        mean = float(accs.mean())
        if episodes > 1:
            stderr = float(accs.std(ddof=1)) / math.sqrt(episodes)
        else:
            stderr = 0.0
        results.append(MetricResult(m, mean, 1.96 * stderr, accs))
    return Report(n, k, z, episodes, seed, tuple(results))
