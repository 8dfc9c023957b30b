"""
Motion-controllability metrics for a generated video.

Both metrics compare a candidate video against the simulator's guidance: mask
overlap with the rendered masks, and color drift along particle
correspondences between frame 1 and frame t.
"""
import math
from typing import Mapping, Optional, Sequence

import numpy as np

from .exceptions import ValidationError
from .render_guidance import CorrespondenceSet
from .ttco_target import as_unit_rgb


def mask_iou(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    """IoU of two boolean masks, or None when both are empty."""
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    union = int(np.sum(a | b))
    if union == 0:
        return None
    return int(np.sum(a & b)) / union


def mask_miou(
    candidate_masks: Sequence[np.ndarray],
    rendered_masks: Sequence[np.ndarray],
    per_object: bool = False,
) -> float:
    """Mean IoU between candidate and rendered masks over frames.

    With `per_object` the candidate labels must use the rendered object IDs and
    every (frame, object) pair contributes; otherwise both masks are reduced to
    foreground/background. Pairs where both masks are empty are skipped.

    Raises:
        ValidationError: On a frame-count or resolution mismatch, or when no
            frame has any foreground.
    """
    if len(candidate_masks) != len(rendered_masks):
        raise ValidationError(f"mask count mismatch: {len(candidate_masks)} vs {len(rendered_masks)}")
    scores = []
    for cand, rend in zip(candidate_masks, rendered_masks):
        cand, rend = np.asarray(cand), np.asarray(rend)
        if cand.shape != rend.shape:
            raise ValidationError(f"mask resolution mismatch: {cand.shape} vs {rend.shape}")
        if per_object:
            ids = np.union1d(np.unique(cand), np.unique(rend))
            pairs = [mask_iou(cand == i, rend == i) for i in ids if i != 0]
        else:
            pairs = [mask_iou(cand > 0, rend > 0)]
        scores.extend(s for s in pairs if s is not None)
    if not scores:
        raise ValidationError("no foreground in any mask")
    return math.fsum(scores) / len(scores)


def corr_pixel_mse(candidate_video: Sequence[np.ndarray], correspondences: Mapping[int, CorrespondenceSet]) -> float:
    """Channel-mean squared color difference along frame-1 correspondences.

    Each entry visible in frame 1 compares the candidate's frame-1 color at p1
    with its frame-t color at q_t, both at the nearest pixel. Returns NaN when
    no entry qualifies.
    """
    sq = []
    first = as_unit_rgb(candidate_video[0])
    h, w = first.shape[:2]
    for t, corr in sorted(correspondences.items()):
        if corr.reference_frame != 1:
            raise ValidationError(f"frame {t}: correspondences must refer to frame 1")
        frame = as_unit_rgb(candidate_video[t - 1])
        use = corr.visible_in_reference
        p = np.floor(corr.p_ref[use] + 0.5).astype(np.int64)
        q = np.floor(corr.q_t[use] + 0.5).astype(np.int64)
        inside = ((p[:, 0] >= 0) & (p[:, 0] < w) & (p[:, 1] >= 0) & (p[:, 1] < h)
                  & (q[:, 0] >= 0) & (q[:, 0] < w) & (q[:, 1] >= 0) & (q[:, 1] < h))
        p, q = p[inside], q[inside]
        diff = first[p[:, 1], p[:, 0]] - frame[q[:, 1], q[:, 0]]
        sq.append((diff * diff).ravel())
    values = np.concatenate(sq) if sq else np.zeros(0)
    if len(values) == 0:
        return float("nan")
    return math.fsum(values) / len(values)
