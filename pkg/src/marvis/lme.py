"""Local motion entropy over a sliding receptive field.

Each pixel's score is a weighted sum of the Shannon entropies (bits) of
the magnitude and angle histograms of the flow vectors inside its k-by-k
window. Two implementations share one entropy-from-counts step so they
agree bit for bit: `lme_brute` re-accumulates every window's histogram
directly, `lme_fast` maintains the histograms incrementally with
separable sliding sums.
"""

from __future__ import annotations

import dataclasses
import functools

import numpy as np

from .errors import ConfigError, ShapeError
from .flow import flow_magnitude_angle

MAG_EPS = 1e-12


@dataclasses.dataclass
class LmeConfig:
    """Receptive-field and histogram parameters for the entropy kernel."""

    receptive_field: int = 7
    bins: int = 16
    alpha: float = 0.5
    beta: float = 0.5
    normalize_output: bool = True

    def validate(self) -> None:
        k = self.receptive_field
        if k < 3 or k % 2 == 0:
            raise ConfigError(f"receptive_field must be odd and >= 3, got {k}")
        if self.bins < 2:
            raise ConfigError(f"bins must be >= 2, got {self.bins}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.alpha + self.beta <= 0:
            raise ConfigError("alpha + beta must be positive")

    @property
    def max_raw_entropy(self) -> float:
        return (self.alpha + self.beta) * float(np.log2(self.bins))


def normalize_flow_channels(flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map a flow field to its normalized magnitude and angle channels.

    Magnitude is scaled by the global maximum (epsilon-guarded) into
    [0, 1]; angle is divided by 2*pi into [0, 1).
    """
    mag, ang = flow_magnitude_angle(flow)
    mag = mag.astype(np.float64)
    m_norm = mag / max(float(mag.max(initial=0.0)), MAG_EPS)
    m_norm = np.clip(m_norm, 0.0, 1.0)
    a_norm = ang.astype(np.float64) / (2.0 * np.pi)
    return m_norm.astype(np.float32), a_norm.astype(np.float32)


def _bin_indices(values: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width bins over [0, 1]; value 1.0 lands in the top bin."""
    idx = np.floor(values.astype(np.float64) * bins).astype(np.int32)
    return np.clip(idx, 0, bins - 1)


@functools.lru_cache(maxsize=32)
def _plogp_table(window_count: int) -> np.ndarray:
    """table[c] = -(c/n) * log2(c/n) for c in 0..n, with table[0] = 0."""
    counts = np.arange(window_count + 1, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = counts / window_count
        terms = -p * np.log2(p)
    terms[0] = 0.0
    return terms


def _channel_entropy(count_planes, table: np.ndarray) -> np.ndarray:
    """Accumulate -p*log2(p) terms over per-bin count planes, in bin order.

    Both kernel variants feed their counts through this one accumulator,
    so equal integer counts yield bit-identical float output.
    """
    h = None
    for counts in count_planes:
        term = table[counts]
        h = term if h is None else h + term
    return h


def _combine_channel_entropies(h_m: np.ndarray, h_a: np.ndarray,
                               cfg: LmeConfig) -> np.ndarray:
    h = cfg.alpha * h_m + cfg.beta * h_a
    if cfg.normalize_output:
        h = h / cfg.max_raw_entropy
    return h.astype(np.float32)


def _check_channel_maps(m_norm: np.ndarray, a_norm: np.ndarray) -> None:
    if m_norm.ndim != 2 or a_norm.ndim != 2:
        raise ShapeError("channel maps must be 2-d")
    if m_norm.shape != a_norm.shape:
        raise ShapeError(
            f"channel maps differ in shape: {m_norm.shape} vs {a_norm.shape}"
        )


def _count_planes_direct(bins_map: np.ndarray, k: int, bins: int):
    """Yield the (H, W) count plane of each bin in turn; every window is
    counted from its own k*k entries with no reuse between windows."""
    h, w = bins_map.shape
    p = k // 2
    padded = np.pad(bins_map, p, mode="edge")
    if bins <= 256:
        padded = padded.astype(np.uint8)
    windows = np.ascontiguousarray(
        np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    ).reshape(h, w, k * k)
    for b in range(bins):
        yield (windows == padded.dtype.type(b)).sum(axis=2, dtype=np.int32)


def _sliding_axis_sum(cumsum: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Length-k running sum from a prefix-sum array: each window position
    adds the entering element and drops the exiting one, expressed as
    out[i] = c[i+k-1] - c[i-1] (exact integer arithmetic)."""
    nd = cumsum.ndim
    n_out = cumsum.shape[axis] - k + 1
    lead = [slice(None)] * nd
    lead[axis] = slice(k - 1, k - 1 + n_out)
    out = cumsum[tuple(lead)].copy()
    lag = [slice(None)] * nd
    lag[axis] = slice(0, n_out - 1)
    tail = [slice(None)] * nd
    tail[axis] = slice(1, None)
    out[tuple(tail)] -= cumsum[tuple(lag)]
    return out


def _count_planes_sliding(bins_map: np.ndarray, k: int, bins: int):
    """Same count planes as the direct variant, via incremental updates."""
    p = k // 2
    padded = np.pad(bins_map, p, mode="edge")
    for b in range(bins):
        indicator = padded == b
        col = _sliding_axis_sum(
            np.cumsum(indicator, axis=0, dtype=np.int32), k, axis=0)
        yield _sliding_axis_sum(
            np.cumsum(col, axis=1, dtype=np.int32), k, axis=1)


def lme_brute(m_norm: np.ndarray, a_norm: np.ndarray,
              cfg: LmeConfig | None = None) -> np.ndarray:
    """Reference kernel: every window's histograms built independently."""
    cfg = cfg or LmeConfig()
    cfg.validate()
    _check_channel_maps(m_norm, a_norm)
    k, bins = cfg.receptive_field, cfg.bins
    table = _plogp_table(k * k)
    h_m = _channel_entropy(
        _count_planes_direct(_bin_indices(m_norm, bins), k, bins), table)
    h_a = _channel_entropy(
        _count_planes_direct(_bin_indices(a_norm, bins), k, bins), table)
    return _combine_channel_entropies(h_m, h_a, cfg)


def lme_fast(m_norm: np.ndarray, a_norm: np.ndarray,
             cfg: LmeConfig | None = None) -> np.ndarray:
    """Optimized kernel; bit-identical to `lme_brute` on every input."""
    cfg = cfg or LmeConfig()
    cfg.validate()
    _check_channel_maps(m_norm, a_norm)
    k, bins = cfg.receptive_field, cfg.bins
    table = _plogp_table(k * k)
    h_m = _channel_entropy(
        _count_planes_sliding(_bin_indices(m_norm, bins), k, bins), table)
    h_a = _channel_entropy(
        _count_planes_sliding(_bin_indices(a_norm, bins), k, bins), table)
    return _combine_channel_entropies(h_m, h_a, cfg)


def lme_from_flow(flow: np.ndarray, cfg: LmeConfig | None = None) -> np.ndarray:
    """Normalize a flow field's channels and run the fast kernel."""
    m_norm, a_norm = normalize_flow_channels(flow)
    return lme_fast(m_norm, a_norm, cfg)


def lme_from_frames(prev: np.ndarray, curr: np.ndarray,
                    cfg: LmeConfig | None = None,
                    flow_source: str = "internal",
                    flow_cfg=None) -> np.ndarray:
    """Full front end: frames -> flow -> normalized channels -> entropy map.

    `flow_source` is either "internal" (run the block-matching estimator)
    or a path to a .flo file whose dimensions must match the frames.
    """
    prev = np.asarray(prev)
    curr = np.asarray(curr)
    if prev.shape != curr.shape:
        raise ShapeError(
            f"frame dimensions differ: {prev.shape} vs {curr.shape}"
        )
    if flow_source == "internal":
        from .flow import estimate_flow
        field = estimate_flow(prev, curr, flow_cfg)
    else:
        from .imgio import read_flo
        field = read_flo(flow_source)
        if field.shape[:2] != prev.shape:
            raise ShapeError(
                f"flow dimensions {field.shape[:2]} do not match frames "
                f"{prev.shape}"
            )
    return lme_from_flow(field, cfg)
