"""Segment search spaces and their dynamic programs.

Two search spaces share one edge-score tensor:

* the full path space over all segments (s, t, y) with 1 <= t - s <= D_max,
  swept by :func:`viterbi` / :func:`log_forward_backward`;
* the label-constrained segmentation space of a fixed label sequence,
  swept by :func:`align_viterbi` / :func:`align_log_forward_backward`.

Scores live in a dense (T, D_max, |L|) tensor: ``scores[s, d-1, y]`` is the
score of segment (s, s+d, y).  Entries with s + d > T are invalid and never
read by the sweeps.  Each sweep over a table counts as one pass
(``DPResult.pass_count``); Viterbi stores backpointers during its single
sweep, so backtrace is free.

Ties in max-semiring sweeps break toward the earlier boundary, then the
smaller label index, which makes the selected path the lexicographically
first one over its (end, label) pairs.  Tests depend on this order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Segment


class InfeasibleAlignmentError(ValueError):
    """No segmentation of the label sequence fits the frame count."""


@dataclass
class SegmentLattice:
    num_frames: int
    num_labels: int
    max_duration: int
    scores: np.ndarray  # (T, D_max, |L|)

    def __post_init__(self):
        T, D, L = self.num_frames, self.max_duration, self.num_labels
        if self.scores.shape != (T, D, L):
            raise ValueError(f"score tensor shape {self.scores.shape} != {(T, D, L)}")

    @property
    def edge_count(self) -> int:
        return edge_count(self.num_frames, self.max_duration, self.num_labels)


@dataclass(frozen=True)
class AlignmentLattice:
    """Search space of segmentations realizing a fixed label sequence."""

    label_seq: tuple[int, ...]
    num_frames: int
    max_duration: int

    @property
    def feasible(self) -> bool:
        n = len(self.label_seq)
        return n >= 1 and n <= self.num_frames <= n * self.max_duration


@dataclass
class DPResult:
    value: float
    alphas: np.ndarray | None = None
    betas: np.ndarray | None = None
    best_path: list[Segment] | None = None
    edge_posteriors: np.ndarray | None = None
    pass_count: int = 0


def edge_count(num_frames: int, max_duration: int, num_labels: int) -> int:
    return num_labels * sum(min(max_duration, num_frames - s) for s in range(num_frames))


def new_score_tensor(num_frames: int, max_duration: int, num_labels: int, fill: float = 0.0) -> np.ndarray:
    """Dense score tensor with invalid (s + d > T) entries at -inf."""
    scores = np.full((num_frames, max_duration, num_labels), fill, dtype=np.float64)
    for s in range(num_frames):
        scores[s, num_frames - s :, :] = -np.inf
    return scores


def _logsumexp(values: np.ndarray) -> float:
    m = values.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(values - m).sum()))


def forward_values(lattice: SegmentLattice, semiring: str = "log") -> np.ndarray:
    """One forward sweep; ``alphas[t]`` aggregates all partial paths 0 -> t."""
    reduce = _logsumexp if semiring == "log" else np.max
    T, D = lattice.num_frames, lattice.max_duration
    alphas = np.full(T + 1, -np.inf)
    alphas[0] = 0.0
    for t in range(1, T + 1):
        ds = np.arange(1, min(D, t) + 1)
        cand = lattice.scores[t - ds, ds - 1, :] + alphas[t - ds, None]
        alphas[t] = reduce(cand)
    return alphas


def backward_values(lattice: SegmentLattice, semiring: str = "log") -> np.ndarray:
    reduce = _logsumexp if semiring == "log" else np.max
    T, D = lattice.num_frames, lattice.max_duration
    betas = np.full(T + 1, -np.inf)
    betas[T] = 0.0
    for t in range(T - 1, -1, -1):
        dmax = min(D, T - t)
        cand = lattice.scores[t, :dmax, :] + betas[t + 1 : t + 1 + dmax, None]
        betas[t] = reduce(cand)
    return betas


def viterbi(lattice: SegmentLattice) -> DPResult:
    """Best path over the full space; single sweep with backpointers."""
    T, D, L = lattice.num_frames, lattice.max_duration, lattice.num_labels
    if T == 0:
        raise ValueError("empty lattice (T = 0)")
    betas = np.full(T + 1, -np.inf)
    betas[T] = 0.0
    back = np.zeros((T, 2), dtype=np.int64)
    for t in range(T - 1, -1, -1):
        dmax = min(D, T - t)
        cand = lattice.scores[t, :dmax, :] + betas[t + 1 : t + 1 + dmax, None]
        flat = int(np.argmax(cand))  # first max in C order: smallest d, then y
        d_idx, y = divmod(flat, L)
        betas[t] = cand[d_idx, y]
        back[t] = (d_idx + 1, y)
    path, t = [], 0
    while t < T:
        d, y = back[t]
        path.append(Segment(t, t + int(d), int(y)))
        t += int(d)
    return DPResult(value=float(betas[0]), betas=betas, best_path=path, pass_count=1)


def cost_augmented_viterbi(lattice: SegmentLattice, cost: np.ndarray) -> DPResult:
    """Viterbi over score + cost; ``cost`` is a per-edge tensor like scores.

    The returned value is max over paths of (score + cost); subtracting the
    gold score is the caller's business.
    """
    if cost.shape != lattice.scores.shape:
        raise ValueError("cost tensor shape mismatch")
    augmented = SegmentLattice(
        lattice.num_frames, lattice.num_labels, lattice.max_duration, lattice.scores + cost
    )
    return viterbi(augmented)


def log_forward_backward(lattice: SegmentLattice) -> DPResult:
    """Log-partition value and exact edge posteriors; two sweeps."""
    T, D = lattice.num_frames, lattice.max_duration
    if T == 0:
        raise ValueError("empty lattice (T = 0)")
    alphas = forward_values(lattice, "log")
    betas = backward_values(lattice, "log")
    log_z = float(alphas[T])
    post = np.zeros_like(lattice.scores)
    for s in range(T):
        dmax = min(D, T - s)
        post[s, :dmax, :] = np.exp(
            alphas[s] + lattice.scores[s, :dmax, :] + betas[s + 1 : s + 1 + dmax, None] - log_z
        )
    return DPResult(value=log_z, alphas=alphas, betas=betas, edge_posteriors=post, pass_count=2)


# ---------------------------------------------------------------------------
# Alignment (label-constrained) dynamic programs
# ---------------------------------------------------------------------------

def _check_alignment(lattice: SegmentLattice, alattice: AlignmentLattice) -> None:
    if alattice.num_frames != lattice.num_frames or alattice.max_duration != lattice.max_duration:
        raise ValueError("alignment lattice does not match segment lattice dimensions")
    if not alattice.feasible:
        n, T, D = len(alattice.label_seq), alattice.num_frames, alattice.max_duration
        raise InfeasibleAlignmentError(
            f"no segmentation of {n} labels covers {T} frames with max duration {D}"
        )


def _align_backward(lattice: SegmentLattice, alattice: AlignmentLattice, semiring: str):
    """Suffix table over nodes (j consumed labels, frame t); one sweep."""
    reduce = _logsumexp if semiring == "log" else np.max
    T, D = lattice.num_frames, lattice.max_duration
    y = alattice.label_seq
    n = len(y)
    betas = np.full((n + 1, T + 1), -np.inf)
    betas[n, T] = 0.0
    back = np.zeros((n, T), dtype=np.int64)
    for j in range(n - 1, -1, -1):
        for t in range(T - 1, -1, -1):
            dmax = min(D, T - t)
            cand = lattice.scores[t, :dmax, y[j]] + betas[j + 1, t + 1 : t + 1 + dmax]
            if semiring == "max":
                d_idx = int(np.argmax(cand))
                betas[j, t] = cand[d_idx]
                back[j, t] = d_idx + 1
            else:
                betas[j, t] = reduce(cand)
    return betas, back


def _align_forward(lattice: SegmentLattice, alattice: AlignmentLattice) -> np.ndarray:
    T, D = lattice.num_frames, lattice.max_duration
    y = alattice.label_seq
    n = len(y)
    alphas = np.full((n + 1, T + 1), -np.inf)
    alphas[0, 0] = 0.0
    for j in range(1, n + 1):
        for t in range(1, T + 1):
            ds = np.arange(1, min(D, t) + 1)
            cand = lattice.scores[t - ds, ds - 1, y[j - 1]] + alphas[j - 1, t - ds]
            alphas[j, t] = _logsumexp(cand)
    return alphas


def align_viterbi(lattice: SegmentLattice, alattice: AlignmentLattice) -> DPResult:
    """Best segmentation of the fixed label sequence; single sweep."""
    _check_alignment(lattice, alattice)
    betas, back = _align_backward(lattice, alattice, "max")
    path, t = [], 0
    for j, y in enumerate(alattice.label_seq):
        d = int(back[j, t])
        path.append(Segment(t, t + d, int(y)))
        t += d
    assert t == lattice.num_frames
    return DPResult(value=float(betas[0, 0]), betas=betas, best_path=path, pass_count=1)


def align_log_forward_backward(lattice: SegmentLattice, alattice: AlignmentLattice) -> DPResult:
    """Log-sum over all segmentations of the label sequence plus posteriors.

    Posteriors are aggregated onto full-lattice edges: a repeated label can
    realize the same segment at different sequence positions, and those
    occupancies add.
    """
    _check_alignment(lattice, alattice)
    T, D = lattice.num_frames, lattice.max_duration
    alphas = _align_forward(lattice, alattice)
    betas, _ = _align_backward(lattice, alattice, "log")
    value = float(alphas[len(alattice.label_seq), T])
    post = np.zeros_like(lattice.scores)
    for j, y in enumerate(alattice.label_seq):
        for t in range(T):
            if not np.isfinite(alphas[j, t]):
                continue
            dmax = min(D, T - t)
            post[t, :dmax, y] += np.exp(
                alphas[j, t] + lattice.scores[t, :dmax, y] + betas[j + 1, t + 1 : t + 1 + dmax] - value
            )
    return DPResult(value=value, alphas=alphas, betas=betas, edge_posteriors=post, pass_count=2)


def dump_lattice(lattice: SegmentLattice, path, label_names=None) -> None:
    """Debug dump: header ``T D_max L`` then one ``s t label score`` per edge."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{lattice.num_frames} {lattice.max_duration} {lattice.num_labels}\n")
        for s in range(lattice.num_frames):
            for d in range(1, min(lattice.max_duration, lattice.num_frames - s) + 1):
                for y in range(lattice.num_labels):
                    name = label_names[y] if label_names else str(y)
                    fh.write(f"{s} {s + d} {name} {lattice.scores[s, d - 1, y]:.17g}\n")
