"""Dense optical flow via coarse-to-fine block matching.

Stands in for a learned flow model: deterministic, dependency-free, and
good enough to carry motion *statistics* into the entropy layer. Matching
cost is integer SAD (images quantized to 8-bit levels) so ties are exact
and results are independent of summation order.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ConfigError, ShapeError

REFINE_RADIUS = 2  # residual search half-width at non-coarsest levels


@dataclasses.dataclass
class FlowConfig:
    block: int = 7
    radius: int = 8
    levels: int = 3

    def validate(self) -> None:
        if self.block < 3 or self.block % 2 == 0:
            raise ConfigError(f"block must be odd and >= 3, got {self.block}")
        if self.radius < 1:
            raise ConfigError(f"radius must be >= 1, got {self.radius}")
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")


def _to_levels(img: np.ndarray, levels: int) -> list[np.ndarray]:
    """Integer image pyramid, finest first. Downsample is a 2x2 mean on an
    edge-padded array so odd dimensions round up."""
    pyr = [np.round(np.asarray(img, dtype=np.float64) * 255.0).astype(np.int64)]
    for _ in range(levels - 1):
        top = pyr[-1]
        h, w = top.shape
        padded = np.pad(top, ((0, h % 2), (0, w % 2)), mode="edge")
        pooled = (
            padded[0::2, 0::2] + padded[0::2, 1::2]
            + padded[1::2, 0::2] + padded[1::2, 1::2]
        )
        pyr.append(pooled // 4)
    return pyr


def _box_sum(arr: np.ndarray, k: int) -> np.ndarray:
    """Sum over all k-by-k windows; output is smaller by k-1 per axis."""
    c = np.cumsum(np.cumsum(arr, axis=0, dtype=np.int64), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return c[k:, k:] - c[k:, :-k] - c[:-k, k:] + c[:-k, :-k]


def _candidate_order(radius: int) -> list[tuple[int, int]]:
    # ties in SAD resolve to the earliest candidate: smallest displacement
    # magnitude, then lexicographic (u, then v)
    grid = [(du, dv)
            for dv in range(-radius, radius + 1)
            for du in range(-radius, radius + 1)]
    grid.sort(key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))
    return grid


def _search_level(prev: np.ndarray, curr: np.ndarray, base: np.ndarray,
                  block: int, radius: int, subpixel: bool) -> np.ndarray:
    """One pyramid level: residual SAD search of +-radius around `base`
    (integer flow), optional parabolic sub-pixel refinement."""
    h, w = prev.shape
    p = block // 2
    yy, xx = np.mgrid[0:h, 0:w]
    sy = np.clip(yy + base[..., 1], 0, h - 1)
    sx = np.clip(xx + base[..., 0], 0, w - 1)
    warped = curr[sy, sx]

    prev_pad = np.pad(prev, p, mode="edge")
    curr_pad = np.pad(warped, p + radius, mode="edge")

    order = _candidate_order(radius)
    side = 2 * radius + 1
    n_cand = side * side
    sad = np.empty((n_cand, h, w), dtype=np.int32)  # SAD <= 255 * block**2
    for du, dv in order:
        view = curr_pad[radius + dv: radius + dv + h + 2 * p,
                        radius + du: radius + du + w + 2 * p]
        idx = (dv + radius) * side + (du + radius)
        sad[idx] = _box_sum(np.abs(prev_pad - view), block)

    best_idx = np.full((h, w), -1, dtype=np.int64)
    best_sad = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    for du, dv in order:
        idx = (dv + radius) * side + (du + radius)
        better = sad[idx] < best_sad
        best_sad = np.where(better, sad[idx], best_sad)
        best_idx = np.where(better, idx, best_idx)

    best_du = best_idx % side - radius
    best_dv = best_idx // side - radius
    flow = np.empty((h, w, 2), dtype=np.float64)
    flow[..., 0] = base[..., 0] + best_du
    flow[..., 1] = base[..., 1] + best_dv

    if subpixel:
        rows = np.arange(h)[:, None]
        cols = np.arange(w)[None, :]

        def axis_offset(step: int, coord: np.ndarray) -> np.ndarray:
            inside = (np.abs(coord) < radius) & (best_sad > 0)
            lo = np.where(inside, best_idx - step, best_idx)
            hi = np.where(inside, best_idx + step, best_idx)
            s_m = sad[lo, rows, cols].astype(np.float64)
            s_p = sad[hi, rows, cols].astype(np.float64)
            s_0 = best_sad.astype(np.float64)
            denom = s_m - 2.0 * s_0 + s_p
            convex = inside & (denom > 0) & (s_0 <= s_m) & (s_0 <= s_p)
            off = np.zeros((h, w))
            np.divide(s_m - s_p, 2.0 * denom, out=off, where=convex)
            return np.where(convex, off, 0.0)

        flow[..., 0] += axis_offset(1, best_du)
        flow[..., 1] += axis_offset(side, best_dv)

    return flow


def estimate_flow(prev: np.ndarray, curr: np.ndarray,
                  cfg: FlowConfig | None = None) -> np.ndarray:
    """Estimate per-pixel displacement from `prev` to `curr`.

    Returns a float32 (H, W, 2) field with |u|, |v| bounded by
    radius * 2**(levels-1). Border pixels (within `radius` of an edge)
    copy the nearest interior estimate.
    """
    cfg = cfg or FlowConfig()
    cfg.validate()
    prev = np.asarray(prev)
    curr = np.asarray(curr)
    if prev.ndim != 2 or curr.ndim != 2:
        raise ShapeError("expected 2-d grayscale images")
    if prev.shape != curr.shape:
        raise ShapeError(
            f"frame dimensions differ: {prev.shape} vs {curr.shape}"
        )

    prev_pyr = _to_levels(prev, cfg.levels)
    curr_pyr = _to_levels(curr, cfg.levels)
    min_side = cfg.block + 2 * cfg.radius
    if min(prev_pyr[-1].shape) < min_side:
        raise ShapeError(
            f"image too small: coarsest level {prev_pyr[-1].shape} is below "
            f"the {min_side} px minimum for block={cfg.block}, "
            f"radius={cfg.radius}, levels={cfg.levels}"
        )

    flow = None
    for level in range(cfg.levels - 1, -1, -1):
        p_img, c_img = prev_pyr[level], curr_pyr[level]
        h, w = p_img.shape
        if flow is None:
            base = np.zeros((h, w, 2), dtype=np.int64)
            radius = cfg.radius
        else:
            up = np.repeat(np.repeat(flow, 2, axis=0), 2, axis=1)[:h, :w]
            base = np.round(up * 2.0).astype(np.int64)
            radius = min(cfg.radius, REFINE_RADIUS)
        flow = _search_level(p_img, c_img, base, cfg.block, radius,
                             subpixel=(level == 0))

    h, w = prev.shape
    band = min(cfg.radius, (h - 1) // 2, (w - 1) // 2)
    if band > 0:
        interior = flow[band:h - band, band:w - band]
        flow = np.pad(interior, ((band, band), (band, band), (0, 0)),
                      mode="edge")

    bound = float(cfg.radius * 2 ** (cfg.levels - 1))
    return np.clip(flow, -bound, bound).astype(np.float32)


def flow_magnitude_angle(flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel magnitude and angle maps.

    Angles are atan2(v, u) mapped to [0, 2*pi); the zero vector gets
    angle 0 by convention.
    """
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeError(f"expected (H, W, 2) flow, got shape {flow.shape}")
    u = flow[..., 0].astype(np.float64)
    v = flow[..., 1].astype(np.float64)
    mag = np.hypot(u, v)
    ang = np.arctan2(v, u)
    ang = np.mod(ang, 2.0 * np.pi)
    # mod can round up to exactly 2*pi for tiny negatives; 2*pi aliases 0
    ang[ang >= 2.0 * np.pi] = 0.0
    ang[mag == 0.0] = 0.0
    return mag.astype(np.float32), ang.astype(np.float32)
