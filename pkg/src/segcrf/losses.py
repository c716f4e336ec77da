"""The four training losses over a scored lattice, in edge-weight form.

Every loss returns its value plus a signed per-edge weight tensor.  The
weights are the loss gradient with respect to the edge scores (a
subgradient for the max-based losses), so the chain rule through the
linear feature function is just ``features.grad_theta`` and
``features.grad_k`` applied to the same tensor.

Max-based losses use the decomposable overlap cost: an edge pays one unit
(times ``CostConfig.weight``) for every frame it covers whose gold label
differs from the edge's label, so a path's cost is the frame-label Hamming
distance to the gold segmentation.

Full-lattice and alignment-lattice sweep counts are recorded per loss:
hinge (1, 0), log loss (2, 0), latent hinge (1, 1), marginal log loss
(2, 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import lattice as lat
from .corpus import Segment, expand_to_frames

LOSS_KINDS = ("hinge", "log_loss", "latent_hinge", "marginal_log_loss")

# which losses need a gold segmentation, beyond the label sequence
NEEDS_SEGMENTATION = {"hinge": True, "log_loss": True, "latent_hinge": False, "marginal_log_loss": False}

EXPECTED_PASSES = {
    "hinge": (1, 0),
    "log_loss": (2, 0),
    "latent_hinge": (1, 1),
    "marginal_log_loss": (2, 2),
}


@dataclass(frozen=True)
class CostConfig:
    kind: str = "overlap"  # overlap | zero
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in ("overlap", "zero"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("cost weight must be nonnegative")


@dataclass
class LossResult:
    value: float
    edge_weights: np.ndarray  # (T, D_max, |L|), zero on invalid entries
    full_passes: int
    align_passes: int
    best_path: list[Segment] | None = None
    aux: dict = field(default_factory=dict)

    @property
    def pass_count(self) -> tuple[int, int]:
        return (self.full_passes, self.align_passes)


def path_score(scores: np.ndarray, path: Sequence[Segment]) -> float:
    return float(sum(scores[seg.start, seg.duration - 1, seg.label] for seg in path))


def path_indicator(path: Sequence[Segment], shape) -> np.ndarray:
    ind = np.zeros(shape)
    for seg in path:
        ind[seg.start, seg.duration - 1, seg.label] += 1.0
    return ind


def overlap_cost_edge(seg: Segment, gold_frame_labels: np.ndarray, weight: float = 1.0) -> float:
    """Frames inside the segment whose gold label differs, times weight."""
    window = gold_frame_labels[seg.start : seg.end]
    return weight * float((window != seg.label).sum())


def cost_tensor(cost: CostConfig, gold_frame_labels: np.ndarray, max_duration: int, num_labels: int) -> np.ndarray:
    """Per-edge cost tensor vs the gold frame labels; zero for kind 'zero'."""
    T = len(gold_frame_labels)
    out = np.zeros((T, max_duration, num_labels))
    if cost.kind == "zero" or cost.weight == 0.0:
        return out
    onehot = np.zeros((T, num_labels))
    onehot[np.arange(T), gold_frame_labels] = 1.0
    csum = np.vstack([np.zeros((1, num_labels)), np.cumsum(onehot, axis=0)])
    for s in range(T):
        dmax = min(max_duration, T - s)
        ds = np.arange(1, dmax + 1)
        matches = csum[s + ds] - csum[s]  # (dmax, L): same-label frame counts
        out[s, :dmax, :] = cost.weight * (ds[:, None] - matches)
    return out


def _check_gold(lattice: lat.SegmentLattice, gold: Sequence[Segment]) -> None:
    for seg in gold:
        if seg.duration > lattice.max_duration:
            raise ValueError(
                f"gold segment {seg} exceeds max duration {lattice.max_duration}; "
                "the gold path must lie inside the lattice"
            )


def hinge(lattice: lat.SegmentLattice, gold: Sequence[Segment], cost: CostConfig = CostConfig()) -> LossResult:
    """max over paths of [cost + score] minus the gold path's score."""
    _check_gold(lattice, gold)
    gold_frames = expand_to_frames(list(gold), lattice.num_frames)
    costs = cost_tensor(cost, gold_frames, lattice.max_duration, lattice.num_labels)
    best = lat.cost_augmented_viterbi(lattice, costs)
    value = best.value - path_score(lattice.scores, gold)
    weights = path_indicator(best.best_path, lattice.scores.shape) - path_indicator(gold, lattice.scores.shape)
    return LossResult(value, weights, full_passes=1, align_passes=0, best_path=best.best_path)


def log_loss(lattice: lat.SegmentLattice, gold: Sequence[Segment]) -> LossResult:
    """Negative log-probability of the gold path."""
    _check_gold(lattice, gold)
    fb = lat.log_forward_backward(lattice)
    value = fb.value - path_score(lattice.scores, gold)
    weights = fb.edge_posteriors - path_indicator(gold, lattice.scores.shape)
    return LossResult(value, weights, full_passes=2, align_passes=0)


def latent_hinge(
    lattice: lat.SegmentLattice,
    label_seq: Sequence[int],
    cost: CostConfig = CostConfig(),
) -> LossResult:
    """Hinge against the model's own best segmentation of the labels."""
    alattice = lat.AlignmentLattice(tuple(label_seq), lattice.num_frames, lattice.max_duration)
    aligned = lat.align_viterbi(lattice, alattice)
    inner = hinge(lattice, aligned.best_path, cost)
    return LossResult(
        inner.value,
        inner.edge_weights,
        full_passes=1,
        align_passes=1,
        best_path=inner.best_path,
        aux={"latent_path": aligned.best_path},
    )


def marginal_log_loss(lattice: lat.SegmentLattice, label_seq: Sequence[int]) -> LossResult:
    """Negative log-probability of the label sequence, segmentation summed out."""
    alattice = lat.AlignmentLattice(tuple(label_seq), lattice.num_frames, lattice.max_duration)
    fb_full = lat.log_forward_backward(lattice)
    fb_align = lat.align_log_forward_backward(lattice, alattice)
    value = fb_full.value - fb_align.value
    weights = fb_full.edge_posteriors - fb_align.edge_posteriors
    return LossResult(value, weights, full_passes=2, align_passes=2)


def compute_loss(
    kind: str,
    lattice: lat.SegmentLattice,
    label_seq: Sequence[int],
    gold: Sequence[Segment] | None,
    cost: CostConfig = CostConfig(),
) -> LossResult:
    """Dispatch by loss kind; hinge and log loss require a segmentation."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    if NEEDS_SEGMENTATION[kind] and gold is None:
        raise ValueError(f"{kind} requires a gold segmentation")
    if kind == "hinge":
        return hinge(lattice, gold, cost)
    if kind == "log_loss":
        return log_loss(lattice, gold)
    if kind == "latent_hinge":
        return latent_hinge(lattice, label_seq, cost)
    return marginal_log_loss(lattice, label_seq)
