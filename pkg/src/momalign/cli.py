"""Batch command-line front end: synth / align / eval / ablate.

Reports are plain text plus line-delimited ``RECORD`` lines for machine
consumption; all randomness flows from the configured seed, and timing goes
to stderr so report bytes are reproducible.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import alignment, descriptor, episode, seqio, synthgen
from .descriptor import (
    DESK_C_IN,
    DESK_C_OUT,
    DESK_C_PRIME,
    PAPER_C_IN,
    PAPER_C_OUT,
    PAPER_C_PRIME,
    FeatureClip,
)


@dataclass(frozen=True)
class RunConfig:
    # scales
    taus: tuple[int, ...] = (1, 3, 5)
    grids: tuple[int, ...] = (1, 3, 5)
    # channels
    c_in: int = DESK_C_IN
    c_prime: int = DESK_C_PRIME
    c_out: int = DESK_C_OUT
    # episodes
    ways: int = 5
    shots: int = 1
    queries: int = 5
    episodes: int = 200
    metrics: tuple[str, ...] = ("a2",)
    workers: int = 1
    # synthetic data
    classes: int = 8
    subactions: int = 2
    frames: int = 8
    height: int = 6
    width: int = 6
    jitter: float = 2.0
    reorder: float = 0.5
    noise: float = 0.1
    distractor: float = 1.5
    instances_per_class: int = 12
    # misc
    seed: int = 0
    top_pairs: int = 3

    def scale_configs(self):
        return descriptor.default_scales(
            self.c_in, self.c_prime, self.c_out, self.taus, self.grids, seed=self.seed
        )

    def synth_config(self) -> synthgen.SynthConfig:
        return synthgen.SynthConfig(
            classes=self.classes,
            subactions=self.subactions,
            frames=self.frames,
            c_in=self.c_in,
            height=self.height,
            width=self.width,
            duration_jitter=self.jitter,
            reorder_prob=self.reorder,
            noise_sigma=self.noise,
            distractor_amp=self.distractor,
            seed=self.seed,
            instances_per_class=self.instances_per_class,
        )


_INT_TUPLE_KEYS = {"taus", "grids", "metrics"}


def load_config(path: str | Path) -> dict:
    """Flat key=value config file; # comments and blank lines are skipped."""
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def _coerce(cfg: RunConfig, overrides: dict) -> RunConfig:
    kwargs = {}
    valid = {f.name: f.type for f in fields(RunConfig)}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in valid:
            raise ValueError(f"unknown config key '{key}'")
        current = getattr(cfg, key)
        if key == "metrics":
            kwargs[key] = tuple(
                str(value).split(",") if isinstance(value, str) else value
            )
        elif key in _INT_TUPLE_KEYS:
            kwargs[key] = tuple(
                int(v) for v in (value.split(",") if isinstance(value, str) else value)
            )
        elif isinstance(current, bool):
            kwargs[key] = str(value).lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            kwargs[key] = int(value)
        elif isinstance(current, float):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return replace(cfg, **kwargs)


def build_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = _coerce(cfg, load_config(args.config))
    cli_overrides = {
        key: getattr(args, key, None)
        for key in ("seed", "episodes", "workers", "ways", "shots", "queries")
    }
    if getattr(args, "metric", None):
        cli_overrides["metrics"] = args.metric
    cfg = _coerce(cfg, cli_overrides)
    if getattr(args, "paper_dims", False):
        cfg = replace(
            cfg, c_in=PAPER_C_IN, c_prime=PAPER_C_PRIME, c_out=PAPER_C_OUT, frames=8
        )
    return cfg


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    out = Path(args.out)
    try:
        manifest = synthgen.generate_dataset(cfg.synth_config(), out)
    except OSError as exc:
        print(f"error: cannot write dataset to {out}: {exc}", file=sys.stderr)
        return 1
    print(f"# synth classes={cfg.classes} instances={cfg.instances_per_class} seed={cfg.seed}")
    print(f"manifest\t{out / 'manifest.tsv'}")
    print(f"clips\t{len(manifest.entries)}")
    return 0


def _load_clip_file(path: str) -> FeatureClip:
    tensors = seqio.read_container(path)
    if "clip" not in tensors:
        raise seqio.SeqIOError(f"{path}: container has no 'clip' tensor")
    return FeatureClip(np.asarray(tensors["clip"], dtype=np.float64))


def cmd_align(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    try:
        clip_a = _load_clip_file(args.clip_a)
        clip_b = _load_clip_file(args.clip_b)
    except (seqio.SeqIOError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    scales = cfg.scale_configs()
    try:
        q = descriptor.multi_scale_descriptors(clip_a, scales)
        s = descriptor.multi_scale_descriptors(clip_b, scales)
    except ValueError as exc:
        print(f"error: {args.clip_a} / {args.clip_b}: {exc}", file=sys.stderr)
        return 1
    sim = alignment.similarity_matrix(q, s)
    masses = alignment.marginal_masses(q, s)
    plan = alignment.solve_emd(sim, masses)
    score = alignment.alignment_score(sim, plan)

    print(f"# align {args.clip_a} vs {args.clip_b} seed={cfg.seed}")
    print(f"descriptors\tL={len(q)}\tdim={q.dim}")
    print(f"score\t{score:.9f}")
    print(f"objective\t{plan.objective:.9f}")
    print("mu\t" + " ".join(f"{x:.6f}" for x in masses.mu))
    print("gamma\t" + " ".join(f"{x:.6f}" for x in masses.gamma))
    weighted = sim * plan.values
    order = np.argsort(weighted, axis=None)[::-1][: cfg.top_pairs]
    for rank, flat in enumerate(order, 1):
        l_q, l_s = divmod(int(flat), len(s))
        print(
            f"pair{rank}\tq(scale={q.scale_ids[l_q]},t={q.times[l_q]})"
            f"\ts(scale={s.scale_ids[l_s]},t={s.times[l_s]})"
            f"\tmass={plan.values[l_q, l_s]:.6f}\tsim={sim[l_q, l_s]:.6f}"
        )
    return 0


def _print_report(report: episode.Report) -> None:
    print(
        f"# eval ways={report.ways} shots={report.shots} queries={report.queries} "
        f"episodes={report.episodes} seed={report.seed}"
    )
    print("metric\taccuracy\tci95")
    for r in report.results:
        print(f"{r.metric}\t{r.mean_accuracy:.6f}\t{r.ci95:.6f}")
    for r in report.results:
        print(
            f"RECORD metric={r.metric} accuracy={r.mean_accuracy:.6f} "
            f"ci95={r.ci95:.6f} episodes={report.episodes} ways={report.ways} "
            f"shots={report.shots} queries={report.queries} seed={report.seed}"
        )


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    try:
        manifest = seqio.read_manifest(args.manifest)
    except (seqio.SeqIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    started = time.perf_counter()
    try:
        report = episode.evaluate(
            manifest,
            cfg.ways,
            cfg.shots,
            cfg.queries,
            cfg.episodes,
            cfg.seed,
            metrics=list(cfg.metrics),
            scales=cfg.scale_configs(),
            workers=cfg.workers,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _print_report(report)
    print(f"wall-clock {time.perf_counter() - started:.2f}s", file=sys.stderr)
    return 0


#: Ablation rows mirroring the component grid: first-order baseline, plain
#: second-order, multi-scale first-order, and the full pathway.
ABLATION_ROWS = (
    ("baseline", "gap-a2"),
    ("cov-mn", "cov-mn-a2"),
    ("multi-scale", "ms-a2"),
    ("full", "a2"),
)


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    try:
        manifest = seqio.read_manifest(args.manifest)
    except (seqio.SeqIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    started = time.perf_counter()
    metrics = [metric for _, metric in ABLATION_ROWS]
    try:
        # One evaluation with all metrics shares episode seeds across rows.
        report = episode.evaluate(
            manifest,
            cfg.ways,
            cfg.shots,
            cfg.queries,
            cfg.episodes,
            cfg.seed,
            metrics=metrics,
            scales=cfg.scale_configs(),
            workers=cfg.workers,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    by_metric = {r.metric: r for r in report.results}
    print(
        f"# ablate ways={report.ways} shots={report.shots} episodes={report.episodes} "
        f"seed={report.seed} shared-episodes=yes"
    )
    print("row\tmetric\taccuracy\tci95")
    for row, metric in ABLATION_ROWS:
        r = by_metric[metric]
        print(f"{row}\t{metric}\t{r.mean_accuracy:.6f}\t{r.ci95:.6f}")
    for row, metric in ABLATION_ROWS:
        r = by_metric[metric]
        print(
            f"RECORD row={row} metric={metric} accuracy={r.mean_accuracy:.6f} "
            f"ci95={r.ci95:.6f} episodes={report.episodes} seed={report.seed}"
        )
    print(f"wall-clock {time.perf_counter() - started:.2f}s", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="momalign",
        description="Multi-scale moment descriptors with adaptive EMD alignment",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="master PRNG seed")
        p.add_argument(
            "--paper-dims",
            action="store_true",
            help="use full-size channels (2048/256/128) and T=8",
        )

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p_synth)
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(func=cmd_synth)

    p_align = sub.add_parser("align", help="align two stored clips")
    common(p_align)
    p_align.add_argument("clip_a")
    p_align.add_argument("clip_b")
    p_align.set_defaults(func=cmd_align)

    p_eval = sub.add_parser("eval", help="episodic evaluation over a manifest")
    common(p_eval)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--episodes", type=int)
    p_eval.add_argument("--metric", help="comma-separated metric selector")
    p_eval.add_argument("--workers", type=int)
    p_eval.add_argument("--ways", type=int)
    p_eval.add_argument("--shots", type=int)
    p_eval.add_argument("--queries", type=int)
    p_eval.set_defaults(func=cmd_eval)

    p_abl = sub.add_parser("ablate", help="component-grid comparison table")
    common(p_abl)
    p_abl.add_argument("--manifest", required=True)
    p_abl.add_argument("--episodes", type=int)
    p_abl.add_argument("--workers", type=int)
    p_abl.add_argument("--ways", type=int)
    p_abl.add_argument("--shots", type=int)
    p_abl.add_argument("--queries", type=int)
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
