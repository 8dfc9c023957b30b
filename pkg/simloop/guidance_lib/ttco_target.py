"""
Texture-consistency targets and the masked texture loss.

For every frame t >= 2 the first frame is warped to the frame-t pixel
positions of the same particles. Foreground pixels without a frame-1
correspondence (surfaces that were hidden in frame 1) fall back to the
rendered particle color; background pixels never count. The loss of a
candidate video is the channel-mean squared error over counted pixels,
summed over frames.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import cv2
import numpy as np

from .exceptions import EmptyLossSupportError, ValidationError
from .render_guidance import CorrespondenceSet, RenderedFrame, densify_sparse

SOURCE_INVALID = 0
SOURCE_FRAME1 = 1
SOURCE_RENDER = 2
WARP_SAMPLINGS = ("bilinear", "nearest")


@dataclass(frozen=True, eq=False)
class WarpTarget:
    """The texture-consistent target of one frame.

    Attributes:
        frame: 1-based frame index, at least 2.
        rgb: (H, W, 3) uint8 target colors; black where invalid.
        source: (H, W) uint8 source map (0 invalid, 1 frame 1, 2 render).
        mask: (H, W) bool rendered foreground.
    """
    frame: int
    rgb: np.ndarray
    source: np.ndarray
    mask: np.ndarray

    @property
    def counted(self) -> np.ndarray:
        return self.source != SOURCE_INVALID

    @property
    def n_frame1(self) -> int:
        return int(np.sum(self.source == SOURCE_FRAME1))

    @property
    def n_render(self) -> int:
        return int(np.sum(self.source == SOURCE_RENDER))


@dataclass(frozen=True)
class FrameLoss:
    t: int
    l_tex: float
    raw_sum: float
    n_frame1: int
    n_render: int

    def to_dict(self) -> Dict:
        return {"t": self.t, "l_tex": self.l_tex, "n_frame1": self.n_frame1,
                "n_render": self.n_render, "raw_sum": self.raw_sum}


@dataclass
class LossReport:
    """Per-frame texture losses and their total.

    `l_ttco` is the sum of `l_tex` over the reported frames; `raw_sum` is the
    unnormalized sum of squared channel errors.
    """
    per_frame: List[FrameLoss]
    l_ttco: float
    raw_sum: float
    extras: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        out = {
            "per_frame": [f.to_dict() for f in self.per_frame],
            "l_ttco": self.l_ttco,
            "raw_sum": self.raw_sum,
        }
        out.update(self.extras)
        return out


def as_unit_rgb(frame: np.ndarray) -> np.ndarray:
    """uint8 frames map to [0, 1] float64; float frames are taken as already in [0, 1]."""
    frame = np.asarray(frame)
    if frame.dtype == np.uint8:
        return frame.astype(np.float64) / 255.0
    return frame.astype(np.float64)


def densify_correspondences(
    corr: CorrespondenceSet,
    mask: np.ndarray,
    k: int = 4,
    radius: float = 8.0,
    method: str = "idw_affine",
) -> np.ndarray:
    """Dense frame-t -> frame-1 pixel map over the rendered foreground.

    Only entries visible in frame 1 contribute. Foreground pixels with no such
    entry within `radius` pixels, and all background pixels, are NaN.

    Returns:
        (H, W, 2) float64 array of frame-1 pixel coordinates (x, y).
    """
    h, w = mask.shape
    dense = np.full((h, w, 2), np.nan)
    rows, cols = np.nonzero(mask)
    use = corr.visible_in_reference
    if len(rows) == 0 or not np.any(use):
        return dense
    query = np.stack([cols, rows], axis=1).astype(np.float64)
    values, ok = densify_sparse(corr.q_t[use], corr.p_ref[use], query, k=k, radius=radius, method=method)
    dense[rows[ok], cols[ok]] = values[ok]
    return dense


def build_warp_target(
    frame1: np.ndarray,
    dense_map: np.ndarray,
    render_t: RenderedFrame,
    sampling: str = "bilinear",
) -> WarpTarget:
    """Builds the frame-t target from frame 1, the dense map and the render.

    Raises:
        ValidationError: On mismatched resolutions or an unknown sampling mode.
    """
    if sampling not in WARP_SAMPLINGS:
        raise ValidationError(f"unknown warp sampling '{sampling}'")
    h, w = render_t.mask.shape
    if frame1.shape[:2] != (h, w) or dense_map.shape[:2] != (h, w):
        raise ValidationError(
            f"resolution mismatch: frame1 {frame1.shape[:2]}, dense map {dense_map.shape[:2]}, render {(h, w)}"
        )
    fg = render_t.mask > 0
    x, y = dense_map[..., 0], dense_map[..., 1]
    warped_ok = fg & np.isfinite(x) & np.isfinite(y) & (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)

    map_x = np.where(warped_ok, x, -1.0).astype(np.float32)
    map_y = np.where(warped_ok, y, -1.0).astype(np.float32)
    interpolation = cv2.INTER_LINEAR if sampling == "bilinear" else cv2.INTER_NEAREST
    sampled = cv2.remap(frame1.astype(np.float32), map_x, map_y, interpolation,
                        borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    sampled = np.clip(np.rint(sampled), 0, 255).astype(np.uint8)

    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    source = np.zeros((h, w), dtype=np.uint8)
    rgb[warped_ok] = sampled[warped_ok]
    source[warped_ok] = SOURCE_FRAME1
    fallback = fg & ~warped_ok
    rgb[fallback] = render_t.rgb[fallback]
    source[fallback] = SOURCE_RENDER
    return WarpTarget(frame=render_t.frame, rgb=rgb, source=source, mask=fg)


def _check_video(candidate_video: Sequence[np.ndarray], targets: Mapping[int, WarpTarget]):
    if not targets:
        raise ValidationError("no warp targets given")
    last = max(targets)
    if len(candidate_video) < last:
        raise ValidationError(f"candidate video has {len(candidate_video)} frames, targets need {last}")
    for t, target in targets.items():
        if t < 2:
            raise ValidationError(f"warp targets start at frame 2 (got {t})")
        if np.asarray(candidate_video[t - 1]).shape[:2] != target.rgb.shape[:2]:
            raise ValidationError(
                f"frame {t}: candidate {np.asarray(candidate_video[t - 1]).shape[:2]} vs target {target.rgb.shape[:2]}"
            )


def frame_loss(candidate: np.ndarray, target: WarpTarget) -> FrameLoss:
    """Channel-mean squared error of one frame over its counted pixels."""
    counted = target.counted
    n = int(np.sum(counted))
    diff = as_unit_rgb(candidate)[counted] - as_unit_rgb(target.rgb)[counted]
    raw = math.fsum((diff * diff).ravel())
    l_tex = raw / (3 * n) if n else 0.0
    return FrameLoss(t=target.frame, l_tex=l_tex, raw_sum=raw, n_frame1=target.n_frame1, n_render=target.n_render)


def eval_loss(candidate_video: Sequence[np.ndarray], targets: Mapping[int, WarpTarget]) -> LossReport:
    """Scores a candidate video against warp targets.

    Args:
        candidate_video: Frames 1..T, uint8 or float in [0, 1].
        targets: Warp targets keyed by 1-based frame index (t >= 2).

    Returns:
        The loss report; frames are reported in ascending order.

    Raises:
        ValidationError: If frames are missing or resolutions disagree.
        EmptyLossSupportError: If no frame has a counted pixel.
    """
    _check_video(candidate_video, targets)
    per_frame = [frame_loss(candidate_video[t - 1], targets[t]) for t in sorted(targets)]
    if all(f.n_frame1 + f.n_render == 0 for f in per_frame):
        raise EmptyLossSupportError("empty loss support: no frame has a counted pixel")
    return LossReport(
        per_frame=per_frame,
        l_ttco=math.fsum(f.l_tex for f in per_frame),
        raw_sum=math.fsum(f.raw_sum for f in per_frame),
    )


def loss_gradient(candidate_video: Sequence[np.ndarray], targets: Mapping[int, WarpTarget]) -> List[np.ndarray]:
    """Gradient of the total loss with respect to candidate pixels in [0, 1].

    For a counted pixel of frame t the gradient is 2 (c - target) / N_t with N_t
    the number of counted channel values; it is zero everywhere else, including
    all of frame 1.
    """
    _check_video(candidate_video, targets)
    grads = [np.zeros(np.asarray(frame).shape, dtype=np.float64) for frame in candidate_video]
    for t, target in targets.items():
        counted = target.counted
        n_values = 3 * int(np.sum(counted))
        if n_values == 0:
            continue
        c = as_unit_rgb(candidate_video[t - 1])
        grads[t - 1][counted] = 2.0 * (c[counted] - as_unit_rgb(target.rgb)[counted]) / n_values
    return grads


def descend_on_pixels(
    candidate_video: Sequence[np.ndarray],
    targets: Mapping[int, WarpTarget],
    steps: int,
    lr: float,
) -> Tuple[List[np.ndarray], List[float]]:
    """Plain gradient descent on candidate pixels.

    Only counted pixels change; every other value is returned bit-identical
    to its [0, 1] float input.

    Returns:
        `(video, curve)`: the updated float64 frames and the loss before the
        first step followed by the loss after each step.
    """
    if steps < 1:
        raise ValidationError(f"steps must be >= 1 (got {steps})")
    if not lr > 0:
        raise ValidationError(f"lr must be > 0 (got {lr})")
    video = [as_unit_rgb(frame) for frame in candidate_video]
    curve = [eval_loss(video, targets).l_ttco]
    for _ in range(steps):
        grads = loss_gradient(video, targets)
        for t, target in targets.items():
            counted = target.counted
            video[t - 1][counted] -= lr * grads[t - 1][counted]
        curve.append(eval_loss(video, targets).l_ttco)
    return video, curve
