"""Segment feature functions, linear scoring, and exact co-gradients.

A segment (s, t, y) is scored by a linear model over concatenated feature
blocks, all built from the per-frame log-probability matrix k (T x |L|):

* ``avg``: mean of k over frames [s, t)
* ``at-r``: the frame sample at the r-th percentile of the segment,
  index floor(s + r*(t-s)) clamped to t-1
* ``left-r`` / ``right-r``: frames just outside the boundaries,
  k[s-r] and k[t-1+r], clamped into [0, T-1]
* ``len``: one-hot in segment duration (1..D_max)
* ``bias``: one indicator per label

Each frame-valued block is the tensor product with the one-hot label
vector, so the weight vector has one |L|-sized sub-block per (family,
label).  Everything here is linear in both theta and k, so co-gradients
are exact weighted feature sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Segment


@dataclass(frozen=True)
class FeatureTemplate:
    num_labels: int
    max_duration: int
    percentiles: tuple[float, ...] = (0.25, 0.5, 0.75)
    boundary_offsets: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        if any(not 0.0 <= r <= 1.0 for r in self.percentiles):
            raise ValueError("percentiles must lie in [0, 1]")
        if any(b <= 0 for b in self.boundary_offsets):
            raise ValueError("boundary offsets must be positive integers")

    @property
    def dim(self) -> int:
        L, D = self.num_labels, self.max_duration
        per_label = L * (1 + len(self.percentiles) + 2 * len(self.boundary_offsets)) + D + 1
        return L * per_label

    def new_weights(self) -> np.ndarray:
        return np.zeros(self.dim)

    def to_dict(self) -> dict:
        return {
            "num_labels": self.num_labels,
            "max_duration": self.max_duration,
            "percentiles": list(self.percentiles),
            "boundary_offsets": list(self.boundary_offsets),
        }

    @staticmethod
    def from_dict(d: dict) -> "FeatureTemplate":
        return FeatureTemplate(
            num_labels=int(d["num_labels"]),
            max_duration=int(d["max_duration"]),
            percentiles=tuple(float(r) for r in d["percentiles"]),
            boundary_offsets=tuple(int(b) for b in d["boundary_offsets"]),
        )


class _Blocks:
    """Views into a flat weight (or gradient) vector, one per feature family.

    Layout is family-major, label-major inside each family; every
    (family, parameter, label) range is contiguous and stable.
    """

    def __init__(self, template: FeatureTemplate, theta: np.ndarray):
        if theta.shape != (template.dim,):
            raise ValueError(f"weight vector has dim {theta.shape}, template wants {template.dim}")
        L, D = template.num_labels, template.max_duration
        off = 0

        def take(rows, cols):
            nonlocal off
            view = theta[off : off + rows * cols].reshape(rows, cols)
            off += rows * cols
            return view

        self.avg = take(L, L)
        self.at = [take(L, L) for _ in template.percentiles]
        self.left = [take(L, L) for _ in template.boundary_offsets]
        self.right = [take(L, L) for _ in template.boundary_offsets]
        self.length = take(L, D)
        self.bias = theta[off : off + L]
        off += L
        assert off == template.dim


def blocks(template: FeatureTemplate, theta: np.ndarray) -> _Blocks:
    return _Blocks(template, theta)


def _check_segment(template: FeatureTemplate, num_frames: int, seg: Segment) -> None:
    if not (0 <= seg.start < seg.end <= num_frames):
        raise ValueError(f"segment {seg} out of range for {num_frames} frames")
    if seg.duration > template.max_duration:
        raise ValueError(f"segment {seg} longer than max duration {template.max_duration}")
    if not (0 <= seg.label < template.num_labels):
        raise ValueError(f"segment label {seg.label} out of range")


def _percentile_index(s: int | np.ndarray, d: int | np.ndarray, r: float):
    return np.minimum(np.floor(s + r * d).astype(np.int64), s + d - 1)


def phi(template: FeatureTemplate, k: np.ndarray, seg: Segment) -> np.ndarray:
    """The feature vector of a single segment."""
    T = k.shape[0]
    _check_segment(template, T, seg)
    vec = template.new_weights()
    b = blocks(template, vec)
    s, d, y = seg.start, seg.duration, seg.label
    b.avg[y] = k[s : s + d].mean(axis=0)
    for r, block in zip(template.percentiles, b.at):
        block[y] = k[int(_percentile_index(s, d, r))]
    for off, bl, br in zip(template.boundary_offsets, b.left, b.right):
        bl[y] = k[max(s - off, 0)]
        br[y] = k[min(s + d - 1 + off, T - 1)]
    b.length[y, d - 1] = 1.0
    b.bias[y] = 1.0
    return vec


def score_edge(template: FeatureTemplate, theta: np.ndarray, k: np.ndarray, seg: Segment) -> float:
    return float(np.dot(theta, phi(template, k, seg)))


def _pair_arrays(num_frames: int, max_duration: int) -> tuple[np.ndarray, np.ndarray]:
    """Start and duration arrays covering every valid (s, d) pair."""
    ss, ds = [], []
    for s in range(num_frames):
        dmax = min(max_duration, num_frames - s)
        ss.extend([s] * dmax)
        ds.extend(range(1, dmax + 1))
    return np.asarray(ss, dtype=np.int64), np.asarray(ds, dtype=np.int64)


def score_all(template: FeatureTemplate, theta: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Score every lattice edge; returns a (T, D_max, |L|) tensor.

    Invalid entries (s + d > T) are -inf.  A path's score is the sum of its
    edges' tensor entries.
    """
    T = k.shape[0]
    D, L = template.max_duration, template.num_labels
    b = blocks(template, theta)
    ss, ds = _pair_arrays(T, D)

    csum = np.vstack([np.zeros((1, k.shape[1])), np.cumsum(k, axis=0)])
    means = (csum[ss + ds] - csum[ss]) / ds[:, None]
    pair_scores = means @ b.avg.T
    for r, block in zip(template.percentiles, b.at):
        pair_scores += k[_percentile_index(ss, ds, r)] @ block.T
    for off, bl, br in zip(template.boundary_offsets, b.left, b.right):
        pair_scores += k[np.maximum(ss - off, 0)] @ bl.T
        pair_scores += k[np.minimum(ss + ds - 1 + off, T - 1)] @ br.T
    pair_scores += b.length[:, ds - 1].T
    pair_scores += b.bias[None, :]

    scores = np.full((T, D, L), -np.inf)
    scores[ss, ds - 1, :] = pair_scores
    return scores


def grad_theta(template: FeatureTemplate, k: np.ndarray, edge_weights: np.ndarray) -> np.ndarray:
    """Sum of weight(e) * phi(e) over all edges: the theta co-gradient.

    ``edge_weights`` is a (T, D_max, |L|) tensor (posterior differences or
    path indicators) that must be zero on invalid entries.
    """
    T = k.shape[0]
    D = template.max_duration
    ss, ds = _pair_arrays(T, D)
    W = edge_weights[ss, ds - 1, :]  # (pairs, |L|)

    grad = template.new_weights()
    g = blocks(template, grad)
    csum = np.vstack([np.zeros((1, k.shape[1])), np.cumsum(k, axis=0)])
    means = (csum[ss + ds] - csum[ss]) / ds[:, None]
    g.avg += W.T @ means
    for r, block in zip(template.percentiles, g.at):
        block += W.T @ k[_percentile_index(ss, ds, r)]
    for off, bl, br in zip(template.boundary_offsets, g.left, g.right):
        bl += W.T @ k[np.maximum(ss - off, 0)]
        br += W.T @ k[np.minimum(ss + ds - 1 + off, T - 1)]
    g.length += edge_weights.sum(axis=0).T
    g.bias += edge_weights.sum(axis=(0, 1))
    return grad


def grad_k(template: FeatureTemplate, theta: np.ndarray, edge_weights: np.ndarray) -> np.ndarray:
    """Co-gradient with respect to k of the weighted edge-score sum."""
    D, L = template.max_duration, template.num_labels
    T = edge_weights.shape[0]
    ss, ds = _pair_arrays(T, D)
    W = edge_weights[ss, ds - 1, :]
    b = blocks(template, theta)
    dk = np.zeros((T, b.avg.shape[1]))

    # averaging distributes 1/d of the pulled-back weight to each covered frame
    rows = (W @ b.avg) / ds[:, None]
    for d in range(1, D + 1):
        sel = ds == d
        if not sel.any():
            continue
        idx = (ss[sel][:, None] + np.arange(d)[None, :]).ravel()
        np.add.at(dk, idx, np.repeat(rows[sel], d, axis=0))
    for r, block in zip(template.percentiles, b.at):
        np.add.at(dk, _percentile_index(ss, ds, r), W @ block)
    for off, bl, br in zip(template.boundary_offsets, b.left, b.right):
        np.add.at(dk, np.maximum(ss - off, 0), W @ bl)
        np.add.at(dk, np.minimum(ss + ds - 1 + off, T - 1), W @ br)
    return dk
