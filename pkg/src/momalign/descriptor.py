"""Multi-scale second-order moment descriptors over spatio-temporal clips.

Each scale applies a valid temporal convolution, derives per-location spatial
offsets from the temporal difference signal, samples a deformable spatial
neighborhood, aggregates a per-frame second-order moment, square-root
normalizes it, and vectorizes it. Descriptors from all scales are flattened
into a single scale-major, time-minor sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seqio
from .linalg import newton_schulz_sqrt, second_moment, vectorize_spd

# Desk-scale defaults keep the property suites fast; the full-size
# configuration (2048 / 256 / 128) is selectable via --paper-dims.
DESK_C_IN = 64
DESK_C_PRIME = 32
DESK_C_OUT = 16
PAPER_C_IN = 2048
PAPER_C_PRIME = 256
PAPER_C_OUT = 128

DEFAULT_TAUS = (1, 3, 5)
DEFAULT_GRIDS = (1, 3, 5)


@dataclass(frozen=True)
class FeatureClip:
    """A T x C x H x W real-valued spatio-temporal feature block."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 4:
            raise ValueError(f"FeatureClip: expected 4-D data, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[2] * a.shape[3] < 1:
            raise ValueError("FeatureClip: empty temporal or spatial extent")
        if not np.all(np.isfinite(a)):
            raise ValueError("FeatureClip: non-finite entries")
        object.__setattr__(self, "data", a)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class ScaleConfig:
    """Weights and geometry for one spatio-temporal scale.

    ``theta_t``: (tau, c_in, c_prime) temporal convolution kernel.
    ``theta_s``: (grid^2 * c_prime, c_out) deformable spatial kernel; the
        flattened patch index is ``point * c_prime + channel`` with kernel
        points enumerated row-major over the grid.
    ``offset_w1``/``offset_b1``/``offset_w2``/``offset_b2``: per-location
        two-stage affine offset predictor with a ReLU in between; the final
        stage is zero-initialized so offsets start at zero.
    """

    tau: int
    grid: int
    theta_t: np.ndarray
    theta_s: np.ndarray
    offset_w1: np.ndarray
    offset_b1: np.ndarray
    offset_w2: np.ndarray
    offset_b2: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("ScaleConfig: tau must be >= 1")
        if self.grid < 1 or self.grid % 2 == 0:
            raise ValueError("ScaleConfig: grid side must be odd and >= 1")
        for name in ("theta_t", "theta_s", "offset_w1", "offset_b1", "offset_w2", "offset_b2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"ScaleConfig: non-finite entries in {name}")
            object.__setattr__(self, name, arr)
        if self.theta_t.ndim != 3 or self.theta_t.shape[0] != self.tau:
            raise ValueError("ScaleConfig: theta_t must have shape (tau, c_in, c_prime)")
        n_points = self.grid * self.grid
        if self.theta_s.shape != (n_points * self.c_prime, self.c_out):
            raise ValueError("ScaleConfig: theta_s shape inconsistent with grid/c_prime")
        if self.offset_w2.shape[1] != 2 * n_points:
            raise ValueError("ScaleConfig: offset head must emit 2 values per kernel point")

    @property
    def c_in(self) -> int:
        return self.theta_t.shape[1]

    @property
    def c_prime(self) -> int:
        return self.theta_t.shape[2]

    @property
    def c_out(self) -> int:
        return self.theta_s.shape[1]

    @staticmethod
    def from_seed(
        tau: int,
        grid: int,
        c_in: int = DESK_C_IN,
        c_prime: int = DESK_C_PRIME,
        c_out: int = DESK_C_OUT,
        seed: int = 0,
    ) -> "ScaleConfig":
        """Deterministic fan-in scaled uniform weights from a seed.

        The temporal kernel factorizes as a uniform smoothing window times a
        random channel projection, so the untrained stage genuinely
        aggregates over its tau-frame window (a zero-mean random temporal
        kernel would cancel the window and leave no temporal pooling). The
        offset head's final layer (and both biases) start at zero, so the
        deformable stage warm-starts as a standard convolution.
        """
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tau, grid])))
        n_points = grid * grid
        hidden = max(1, c_prime // 2)

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        channel_map = uniform((c_in, c_prime), c_in)
        return ScaleConfig(
            tau=tau,
            grid=grid,
            theta_t=np.repeat(channel_map[np.newaxis, :, :], tau, axis=0) / tau,
            theta_s=uniform((n_points * c_prime, c_out), n_points * c_prime),
            offset_w1=uniform((c_prime, hidden), c_prime),
            offset_b1=np.zeros(hidden),
            offset_w2=np.zeros((hidden, 2 * n_points)),
            offset_b2=np.zeros(2 * n_points),
            seed=seed,
        )

    @staticmethod
    def identity(channels: int) -> "ScaleConfig":
        """tau=1, 1x1 grid, identity theta stages and zero offsets.

        Reduces the full pipeline to plain per-frame second moments of the
        raw features (the single-scale covariance baseline).
        """
        eye = np.eye(channels)
        return ScaleConfig(
            tau=1,
            grid=1,
            theta_t=eye[np.newaxis, :, :],
            theta_s=eye,
            offset_w1=np.zeros((channels, 1)),
            offset_b1=np.zeros(1),
            offset_w2=np.zeros((1, 2)),
            offset_b2=np.zeros(2),
        )


@dataclass(frozen=True)
class DescriptorSequence:
    """Ordered unit-role descriptors with per-scale provenance.

    ``vectors`` is L x D; ``scale_ids`` and ``times`` give each entry's
    originating scale index and output timestamp.
    """

    vectors: np.ndarray
    scale_ids: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        s = np.asarray(self.scale_ids, dtype=np.int64)
        t = np.asarray(self.times, dtype=np.int64)
        if v.ndim != 2 or s.shape != (v.shape[0],) or t.shape != (v.shape[0],):
            raise ValueError("DescriptorSequence: inconsistent shapes")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "scale_ids", s)
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def same_structure(self, other: "DescriptorSequence") -> bool:
        return (
            self.vectors.shape == other.vectors.shape
            and np.array_equal(self.scale_ids, other.scale_ids)
            and np.array_equal(self.times, other.times)
        )


def temporal_conv(clip: FeatureClip, cfg: ScaleConfig) -> FeatureClip:
    """Valid temporal convolution: T output frames become T - tau + 1."""
    x = clip.data
    if cfg.tau > clip.frames:
        raise ValueError(
            f"temporal_conv: tau={cfg.tau} exceeds clip length T={clip.frames}"
        )
    if cfg.c_in != clip.channels:
        raise ValueError(
            f"temporal_conv: channel mismatch (clip {clip.channels}, kernel {cfg.c_in})"
        )
    t_out = clip.frames - cfg.tau + 1
    out = np.empty((t_out, cfg.c_prime, clip.height, clip.width))
    for t in range(t_out):
        # sum_k theta_t[k] applied to frame t+k, mapping c_in -> c_prime
        out[t] = np.einsum("kcd,kchw->dhw", cfg.theta_t, x[t : t + cfg.tau])
    return FeatureClip(out)


def temporal_difference(clip: FeatureClip) -> FeatureClip:
    """Frame-to-frame difference; the first frame is defined as zero."""
    x = clip.data
    out = np.zeros_like(x)
    if x.shape[0] > 1:
        out[1:] = x[1:] - x[:-1]
    return FeatureClip(out)


def offset_mlp(diff: FeatureClip, cfg: ScaleConfig) -> np.ndarray:
    """Per-location offsets from the temporal difference signal.

    Returns a (T, 2 * grid^2, H, W) field: for every frame, location and
    kernel point, an (dx, dy) pair stored at channels (2p, 2p + 1).
    """
    x = diff.data
    if x.shape[1] != cfg.c_prime:
        raise ValueError("offset_mlp: channel mismatch with scale config")
    hidden = np.einsum("ce,tchw->tehw", cfg.offset_w1, x)
    hidden += cfg.offset_b1[np.newaxis, :, np.newaxis, np.newaxis]
    np.maximum(hidden, 0.0, out=hidden)
    off = np.einsum("eo,tehw->tohw", cfg.offset_w2, hidden)
    off += cfg.offset_b2[np.newaxis, :, np.newaxis, np.newaxis]
    return off


def bilinear_sample(plane: np.ndarray, x: float, y: float) -> float:
    """Bilinear interpolation at (x, y) = (column, row) with zero padding.

    Neighbor pixels outside the grid contribute 0.
    """
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    fx = x - x0
    fy = y - y0
    total = 0.0
    for dy_, dx_, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy, xx = y0 + dy_, x0 + dx_
        if 0 <= yy < h and 0 <= xx < w:
            total += wgt * plane[yy, xx]
    return total


def _bilinear_grid(planes: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Vectorized zero-padded bilinear sampling.

    ``planes`` is (C, H, W); ``rows``/``cols`` are (H, W) fractional
    coordinates. Returns (C, H, W).
    """
    c, h, w = planes.shape
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    out = np.zeros((c, h, w))
    flat = planes.reshape(c, -1)
    for dr, dc, wgt in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr = r0 + dr
        cc = c0 + dc
        valid = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        idx = np.where(valid, rr * w + cc, 0)
        vals = flat[:, idx.ravel()].reshape(c, h, w)
        out += (wgt * valid) * vals
    return out


def deformable_conv(
    clip: FeatureClip, offsets: np.ndarray, cfg: ScaleConfig
) -> list[np.ndarray]:
    """Deformable spatial convolution with zero padding, same-size output.

    For each frame returns a C_out x M matrix (M = H * W). With all-zero
    offsets the result equals a standard grid convolution with the same
    kernel.
    """
    x = clip.data
    t, c, h, w = x.shape
    n_points = cfg.grid * cfg.grid
    if c != cfg.c_prime:
        raise ValueError("deformable_conv: channel mismatch with scale config")
    if offsets.shape != (t, 2 * n_points, h, w):
        raise ValueError(
            f"deformable_conv: offset field shape {offsets.shape} inconsistent "
            f"with clip {(t, 2 * n_points, h, w)}"
        )
    r = cfg.grid // 2
    base_rows, base_cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    kernel_pts = [(ki, kj) for ki in range(-r, r + 1) for kj in range(-r, r + 1)]

    out: list[np.ndarray] = []
    for ti in range(t):
        patch = np.empty((n_points * c, h, w))
        for p, (ki, kj) in enumerate(kernel_pts):
            dx = offsets[ti, 2 * p]
            dy = offsets[ti, 2 * p + 1]
            rows = base_rows + ki + dy
            cols = base_cols + kj + dx
            patch[p * c : (p + 1) * c] = _bilinear_grid(x[ti], rows, cols)
        frame = np.einsum("po,phw->ohw", cfg.theta_s, patch)
        out.append(frame.reshape(cfg.c_out, h * w))
    return out


def scale_moment(clip: FeatureClip, cfg: ScaleConfig) -> list[np.ndarray]:
    """Per-frame second moments for one scale: T - tau + 1 PSD matrices."""
    xt = temporal_conv(clip, cfg)
    offsets = offset_mlp(temporal_difference(xt), cfg)
    frames = deformable_conv(xt, offsets, cfg)
    return [second_moment(f) for f in frames]


def multi_scale_descriptors(
    clip: FeatureClip,
    scales: list[ScaleConfig],
    sqrt_iterations: int = 5,
) -> DescriptorSequence:
    """Normalized, vectorized moments across all scales.

    Entries are ordered scale-major, time-minor; L = sum_b (T - tau_b + 1).
    """
    if not scales:
        raise ValueError("multi_scale_descriptors: no scales given")
    c_out = scales[0].c_out
    if any(s.c_out != c_out for s in scales):
        raise ValueError("multi_scale_descriptors: all scales must share c_out")
    vectors = []
    scale_ids = []
    times = []
    for b, cfg in enumerate(scales):
        for t, moment in enumerate(scale_moment(clip, cfg)):
            vectors.append(vectorize_spd(newton_schulz_sqrt(moment, sqrt_iterations)))
            scale_ids.append(b)
            times.append(t)
    return DescriptorSequence(np.array(vectors), np.array(scale_ids), np.array(times))


def cov_mn_descriptors(clip: FeatureClip, sqrt_iterations: int = 5) -> DescriptorSequence:
    """Single-scale baseline: plain per-frame second moments, normalized and
    vectorized. Bit-identical to the identity-weight multi-scale pathway."""
    t, c, h, w = clip.data.shape
    vectors = [
        vectorize_spd(
            newton_schulz_sqrt(second_moment(clip.data[i].reshape(c, h * w)), sqrt_iterations)
        )
        for i in range(t)
    ]
    return DescriptorSequence(np.array(vectors), np.zeros(t, dtype=np.int64), np.arange(t))


def gap_descriptor(clip: FeatureClip) -> DescriptorSequence:
    """First-order baseline: per-frame spatial global average pooling."""
    means = clip.data.mean(axis=(2, 3))
    t = means.shape[0]
    return DescriptorSequence(means, np.zeros(t, dtype=np.int64), np.arange(t))


def multi_scale_first_order(
    clip: FeatureClip, scales: list[ScaleConfig]
) -> DescriptorSequence:
    """Multi-scale ablation arm without the second-order moment: the
    deformable pipeline runs as usual but each frame is spatially averaged."""
    if not scales:
        raise ValueError("multi_scale_first_order: no scales given")
    vectors = []
    scale_ids = []
    times = []
    for b, cfg in enumerate(scales):
        xt = temporal_conv(clip, cfg)
        offsets = offset_mlp(temporal_difference(xt), cfg)
        for t, frame in enumerate(deformable_conv(xt, offsets, cfg)):
            vectors.append(frame.mean(axis=1))
            scale_ids.append(b)
            times.append(t)
    return DescriptorSequence(np.array(vectors), np.array(scale_ids), np.array(times))


def default_scales(
    c_in: int = DESK_C_IN,
    c_prime: int = DESK_C_PRIME,
    c_out: int = DESK_C_OUT,
    taus: tuple[int, ...] = DEFAULT_TAUS,
    grids: tuple[int, ...] = DEFAULT_GRIDS,
    seed: int = 0,
) -> list[ScaleConfig]:
    """The optimal multi-scale configuration: taus (1,3,5) paired with grid
    sides (1,3,5), seeded weights."""
    if len(taus) != len(grids):
        raise ValueError("default_scales: taus and grids must pair up")
    return [
        ScaleConfig.from_seed(tau, grid, c_in, c_prime, c_out, seed=seed)
        for tau, grid in zip(taus, grids)
    ]


def save_scale_weights(scales: list[ScaleConfig], path) -> None:
    """Persist scale weights in the FSQ1 container, keyed by scale index and
    stage name."""
    tensors: dict[str, np.ndarray] = {}
    for b, cfg in enumerate(scales):
        tensors[f"scale{b}/meta"] = np.array([cfg.tau, cfg.grid], dtype=np.float64)
        tensors[f"scale{b}/theta_t"] = cfg.theta_t
        tensors[f"scale{b}/theta_s"] = cfg.theta_s
        tensors[f"scale{b}/offset_w1"] = cfg.offset_w1
        tensors[f"scale{b}/offset_b1"] = cfg.offset_b1
        tensors[f"scale{b}/offset_w2"] = cfg.offset_w2
        tensors[f"scale{b}/offset_b2"] = cfg.offset_b2
    seqio.write_container(tensors, path)


def load_scale_weights(path) -> list[ScaleConfig]:
    tensors = seqio.read_container(path)
    scales = []
    for b in range(len([k for k in tensors if k.endswith("/meta")])):
        meta = tensors[f"scale{b}/meta"]
        scales.append(
            ScaleConfig(
                tau=int(meta[0]),
                grid=int(meta[1]),
                theta_t=tensors[f"scale{b}/theta_t"],
                theta_s=tensors[f"scale{b}/theta_s"],
                offset_w1=tensors[f"scale{b}/offset_w1"],
                offset_b1=tensors[f"scale{b}/offset_b1"],
                offset_w2=tensors[f"scale{b}/offset_w2"],
                offset_b2=tensors[f"scale{b}/offset_b2"],
            )
        )
    return scales
