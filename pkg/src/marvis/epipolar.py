"""Sparse epipolar-consistency machinery: corner detection, descriptor
matching with a ratio test, fundamental-matrix recovery (from known
calibration or RANSAC over the normalized 8-point algorithm), and the
sparse normalized error map used as weak supervision.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy import ndimage

from .errors import (ConfigError, DegeneracyError, InsufficientDataError,
                     ShapeError)

DESCRIPTOR_PATCH = 9
EPS = 1e-12


@dataclasses.dataclass
class Keypoint:
    x: float
    y: float
    score: float
    descriptor: np.ndarray


# ---------------------------------------------------------------------------
# Detection and matching
# ---------------------------------------------------------------------------

def detect_keypoints(img: np.ndarray, max_kp: int = 512,
                     response_threshold: float = 0.01) -> list[Keypoint]:
    """Harris corners with 3x3 non-max suppression.

    `response_threshold` is relative to the maximum corner response.
    Descriptors are 9x9 intensity patches, mean-subtracted and
    L2-normalized; structureless (constant-patch) corners are dropped.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"expected 2-d image, got shape {img.shape}")
    h, w = img.shape
    if h < 16 or w < 16:
        raise ShapeError(f"image {h}x{w} too small for detection (min 16x16)")

    gy, gx = np.gradient(img)
    ixx = ndimage.gaussian_filter(gx * gx, 1.0)
    iyy = ndimage.gaussian_filter(gy * gy, 1.0)
    ixy = ndimage.gaussian_filter(gx * gy, 1.0)
    det = ixx * iyy - ixy * ixy
    trace = ixx + iyy
    response = det - 0.04 * trace * trace

    peak = float(response.max(initial=0.0))
    if peak <= 0.0:
        return []
    local_max = response == ndimage.maximum_filter(response, size=3)
    candidates = local_max & (response > response_threshold * peak)
    # suppress the outermost rows/cols: gradients there are one-sided
    candidates[0, :] = candidates[-1, :] = False
    candidates[:, 0] = candidates[:, -1] = False

    ys, xs = np.nonzero(candidates)
    scores = response[ys, xs]
    order = np.lexsort((xs, ys, -scores))[:max_kp]

    pad = DESCRIPTOR_PATCH // 2
    padded = np.pad(img, pad, mode="edge")
    keypoints = []
    for idx in order:
        yi, xi = int(ys[idx]), int(xs[idx])
        sub_x = _parabolic_peak(response[yi, xi - 1], response[yi, xi],
                                response[yi, xi + 1])
        sub_y = _parabolic_peak(response[yi - 1, xi], response[yi, xi],
                                response[yi + 1, xi])
        patch = padded[yi:yi + DESCRIPTOR_PATCH, xi:xi + DESCRIPTOR_PATCH]
        desc = patch.ravel() - patch.mean()
        norm = np.linalg.norm(desc)
        if norm < EPS:
            continue
        keypoints.append(Keypoint(x=xi + sub_x, y=yi + sub_y,
                                  score=float(scores[idx]),
                                  descriptor=(desc / norm).astype(np.float32)))
    return keypoints


def _parabolic_peak(s_m: float, s_0: float, s_p: float) -> float:
    denom = s_m - 2.0 * s_0 + s_p
    if denom >= 0.0:  # not a strict maximum
        return 0.0
    off = 0.5 * (s_m - s_p) / denom
    return float(np.clip(off, -0.5, 0.5))


def match_keypoints(left: list[Keypoint], right: list[Keypoint],
                    ratio: float = 0.7) -> list[tuple[int, int]]:
    """Ratio-test matching (left -> right) with mutual-best filtering."""
    if not left or not right:
        return []
    dl = np.stack([kp.descriptor for kp in left]).astype(np.float64)
    dr = np.stack([kp.descriptor for kp in right]).astype(np.float64)
    if dl.shape[1] != dr.shape[1]:
        raise ShapeError("descriptor lengths differ between keypoint sets")
    # squared Euclidean distances, clamped against rounding
    d2 = np.maximum(
        (dl * dl).sum(1)[:, None] - 2.0 * dl @ dr.T + (dr * dr).sum(1)[None, :],
        0.0,
    )
    best_r = np.argmin(d2, axis=1)
    best_l = np.argmin(d2, axis=0)

    matches = []
    for i, j in enumerate(best_r):
        if best_l[j] != i:
            continue
        d1 = np.sqrt(d2[i, j])
        others = np.delete(d2[i], j)
        d2nd = np.sqrt(others.min()) if others.size else np.inf
        if d1 < ratio * d2nd:
            matches.append((i, int(j)))
    return matches


# ---------------------------------------------------------------------------
# Fundamental matrices
# ---------------------------------------------------------------------------

def _canonical(f: np.ndarray) -> np.ndarray:
    """Rank-2, Frobenius-norm-1 representative with a fixed sign."""
    u, s, vt = np.linalg.svd(f)
    s = s.copy()
    s[2] = 0.0
    f2 = (u * s) @ vt
    norm = np.linalg.norm(f2)
    if norm < EPS:
        raise DegeneracyError("fundamental matrix collapsed to zero")
    f2 = f2 / norm
    anchor = f2.flat[np.argmax(np.abs(f2))]
    return f2 if anchor >= 0 else -f2


def fundamental_from_calibration(k_left: np.ndarray, k_right: np.ndarray,
                                 rotation: np.ndarray,
                                 translation: np.ndarray) -> np.ndarray:
    """F = K_r^-T [t]x R K_l^-1, rank-2 enforced and Frobenius-normalized."""
    k_left = np.asarray(k_left, dtype=np.float64)
    k_right = np.asarray(k_right, dtype=np.float64)
    rotation = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64).reshape(3)
    for name, k in (("K_left", k_left), ("K_right", k_right)):
        if k.shape != (3, 3):
            raise ShapeError(f"{name} must be 3x3, got {k.shape}")
        if abs(np.linalg.det(k)) < EPS:
            raise DegeneracyError(f"{name} is singular")
    if rotation.shape != (3, 3):
        raise ShapeError(f"rotation must be 3x3, got {rotation.shape}")
    if np.linalg.norm(t) < EPS:
        raise DegeneracyError("zero stereo baseline")
    t_cross = np.array([
        [0.0, -t[2], t[1]],
        [t[2], 0.0, -t[0]],
        [-t[1], t[0], 0.0],
    ])
    f = np.linalg.inv(k_right).T @ t_cross @ rotation @ np.linalg.inv(k_left)
    return _canonical(f)


def _hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate the centroid to the origin and scale the mean distance
    to sqrt(2); returns the transformed points and the 3x3 transform."""
    centroid = pts.mean(axis=0)
    shifted = pts - centroid
    mean_dist = np.sqrt((shifted ** 2).sum(axis=1)).mean()
    scale = np.sqrt(2.0) / max(mean_dist, EPS)
    transform = np.array([
        [scale, 0.0, -scale * centroid[0]],
        [0.0, scale, -scale * centroid[1]],
        [0.0, 0.0, 1.0],
    ])
    return shifted * scale, transform


def _eight_point(pts_l: np.ndarray, pts_r: np.ndarray) -> np.ndarray:
    nl, tl = _hartley_normalize(pts_l)
    nr, tr = _hartley_normalize(pts_r)
    x1, y1 = nl[:, 0], nl[:, 1]
    x2, y2 = nr[:, 0], nr[:, 1]
    a = np.column_stack([
        x2 * x1, x2 * y1, x2,
        y2 * x1, y2 * y1, y2,
        x1, y1, np.ones_like(x1),
    ])
    _, _, vt = np.linalg.svd(a)
    f_norm = vt[-1].reshape(3, 3)
    return _canonical(tr.T @ f_norm @ tl)


def _collinear(pts: np.ndarray) -> bool:
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[1] < 1e-9 * max(sv[0], 1.0)


def _sampson_distance(f: np.ndarray, pts_l: np.ndarray,
                      pts_r: np.ndarray) -> np.ndarray:
    ones = np.ones((len(pts_l), 1))
    hl = np.hstack([pts_l, ones])
    hr = np.hstack([pts_r, ones])
    fl = hl @ f.T      # epipolar lines in the right image
    fr = hr @ f        # epipolar lines in the left image
    top = np.einsum("ij,ij->i", hr, hl @ f.T)
    denom = fl[:, 0] ** 2 + fl[:, 1] ** 2 + fr[:, 0] ** 2 + fr[:, 1] ** 2
    return top ** 2 / np.maximum(denom, EPS)


def estimate_fundamental(pts_left: np.ndarray, pts_right: np.ndarray,
                         ransac_iters: int = 2000,
                         inlier_threshold_px: float = 1.0,
                         seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """RANSAC over the normalized 8-point algorithm, Sampson-scored,
    refit on the winning inliers. Deterministic for a fixed seed."""
    pts_left = np.asarray(pts_left, dtype=np.float64).reshape(-1, 2)
    pts_right = np.asarray(pts_right, dtype=np.float64).reshape(-1, 2)
    if pts_left.shape != pts_right.shape:
        raise ShapeError("point lists must have matching lengths")
    n = len(pts_left)
    if n < 8:
        raise InsufficientDataError(
            f"need at least 8 matches to estimate F, got {n}"
        )
    if _collinear(pts_left) or _collinear(pts_right):
        raise DegeneracyError("matches are collinear; F is undetermined")

    thresh_sq = inlier_threshold_px ** 2
    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = -1
    for _ in range(ransac_iters):
        sample = rng.choice(n, size=8, replace=False)
        if _collinear(pts_left[sample]) or _collinear(pts_right[sample]):
            continue
        try:
            f = _eight_point(pts_left[sample], pts_right[sample])
        except (DegeneracyError, np.linalg.LinAlgError):
            continue
        mask = _sampson_distance(f, pts_left, pts_right) < thresh_sq
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < 8:
        raise DegeneracyError("RANSAC found no valid 8-point model")

    f = _eight_point(pts_left[best_mask], pts_right[best_mask])
    final_mask = _sampson_distance(f, pts_left, pts_right) < thresh_sq
    if final_mask.sum() >= 8:
        f = _eight_point(pts_left[final_mask], pts_right[final_mask])
    else:
        final_mask = best_mask
    return f, final_mask


# ---------------------------------------------------------------------------
# Epipolar error and the sparse error map
# ---------------------------------------------------------------------------

def _point_line_distances(f: np.ndarray, pts_l: np.ndarray,
                          pts_r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric epipolar distances plus a degeneracy mask (epipole hits)."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (3, 3):
        raise ShapeError(f"F must be 3x3, got {f.shape}")
    norm = np.linalg.norm(f)
    if norm < EPS:
        raise DegeneracyError("zero fundamental matrix")
    f = f / norm

    ones = np.ones((len(pts_l), 1))
    hl = np.hstack([pts_l, ones])
    hr = np.hstack([pts_r, ones])
    line_r = hl @ f.T    # line in right image for each left point
    line_l = hr @ f      # line in left image for each right point
    n_r = np.hypot(line_r[:, 0], line_r[:, 1])
    n_l = np.hypot(line_l[:, 0], line_l[:, 1])
    degenerate = (n_r < EPS) | (n_l < EPS)
    n_r = np.maximum(n_r, EPS)
    n_l = np.maximum(n_l, EPS)
    d_r = np.abs(np.einsum("ij,ij->i", hr, line_r)) / n_r
    d_l = np.abs(np.einsum("ij,ij->i", hl, line_l)) / n_l
    err = 0.5 * (d_r + d_l)
    err[degenerate] = 0.0
    return err, degenerate


def epipolar_error(f: np.ndarray, x_left, x_right,
                   with_flag: bool = False):
    """Symmetric point-line epipolar distance in pixels.

    A point at an epipole (zero line normal) yields 0; pass
    `with_flag=True` to receive the degeneracy indicator as well.
    """
    pts_l = np.asarray(x_left, dtype=np.float64).reshape(1, 2)
    pts_r = np.asarray(x_right, dtype=np.float64).reshape(1, 2)
    err, degenerate = _point_line_distances(f, pts_l, pts_r)
    if with_flag:
        return float(err[0]), bool(degenerate[0])
    return float(err[0])


def build_error_map(pts_left: np.ndarray, pts_right: np.ndarray,
                    f: np.ndarray, width: int, height: int) -> np.ndarray:
    """Sparse normalized epipolar error map on the left/current frame.

    Errors are normalized by the pair's maximum and written at each left
    point's nearest pixel; non-keypoint pixels stay zero and colliding
    keypoints keep the larger value.
    """
    if width <= 0 or height <= 0:
        raise ConfigError(f"invalid map dimensions {width}x{height}")
    emap = np.zeros((height, width), dtype=np.float32)
    pts_left = np.asarray(pts_left, dtype=np.float64).reshape(-1, 2)
    pts_right = np.asarray(pts_right, dtype=np.float64).reshape(-1, 2)
    if pts_left.shape != pts_right.shape:
        raise ShapeError("point lists must have matching lengths")
    if len(pts_left) == 0:
        return emap
    err, _ = _point_line_distances(f, pts_left, pts_right)
    normalized = err / max(float(err.max()), EPS)
    xs = np.clip(np.floor(pts_left[:, 0] + 0.5).astype(int), 0, width - 1)
    ys = np.clip(np.floor(pts_left[:, 1] + 0.5).astype(int), 0, height - 1)
    np.maximum.at(emap, (ys, xs), normalized.astype(np.float32))
    return emap


def matched_points(left: list[Keypoint], right: list[Keypoint],
                   matches: list[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
    """Matched keypoint coordinates as two (n, 2) arrays."""
    pts_l = np.array([[left[i].x, left[i].y] for i, _ in matches],
                     dtype=np.float64).reshape(-1, 2)
    pts_r = np.array([[right[j].x, right[j].y] for _, j in matches],
                     dtype=np.float64).reshape(-1, 2)
    return pts_l, pts_r
