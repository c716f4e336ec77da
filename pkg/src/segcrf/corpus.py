"""Data model, on-disk formats, and a synthetic corpus generator.

File formats (all UTF-8 text):

* manifest: one utterance per line,
  ``id <tab> features_path <tab> labels_path <tab> [segmentation_path]``,
  paths relative to the manifest's directory.
* features: first line ``T F``, then T lines of F space-separated floats.
* labels: one line of space-separated label strings.
* segmentation: one line per segment ``s t label``, frame indices half-open.
* collapse map: lines ``raw_label train_label eval_label``.

Segments use the half-open convention [s, t); duration is t - s.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class CorpusError(ValueError):
    """Raised for malformed corpus files or inconsistent samples."""


class Segment(NamedTuple):
    start: int
    end: int
    label: int

    @property
    def duration(self) -> int:
        return self.end - self.start


Path = list  # a path is a list of connected Segments covering [0, T)


@dataclass(frozen=True)
class LabelSet:
    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.labels:
            raise CorpusError("label set is empty")
        if len(set(self.labels)) != len(self.labels):
            raise CorpusError("duplicate labels in label set")

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise CorpusError(f"unknown label {label!r}") from None

    def indices(self, labels: Sequence[str]) -> list[int]:
        table = {lab: i for i, lab in enumerate(self.labels)}
        try:
            return [table[lab] for lab in labels]
        except KeyError as exc:
            raise CorpusError(f"unknown label {exc.args[0]!r}") from None

    def names(self, indices: Sequence[int]) -> list[str]:
        return [self.labels[i] for i in indices]


@dataclass
class Sample:
    """One utterance: frames plus optional labels and segmentation.

    ``frames`` is a (T, F) float array.  ``labels`` is the label-index
    sequence y, ``segments`` the segmentation z (when available), and
    ``frame_labels`` the per-frame label indices derived from z.
    """

    id: str
    frames: np.ndarray
    labels: list[int] | None = None
    segments: list[Segment] | None = None
    frame_labels: np.ndarray | None = None

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class CollapseMap:
    train_map: dict[str, str]
    eval_map: dict[str, str]

    def apply(self, seq: Sequence[str], stage: str) -> list[str]:
        return collapse(seq, self, stage)


def collapse(seq: Sequence[str], cmap: CollapseMap, stage: str) -> list[str]:
    """Map every label through the train or eval collapse map.

    Adjacent duplicates are kept; merging is an evaluation-time choice.
    """
    if stage == "train":
        table = cmap.train_map
    elif stage == "eval":
        table = cmap.eval_map
    else:
        raise ValueError(f"stage must be 'train' or 'eval', got {stage!r}")
    out = []
    for lab in seq:
        if lab not in table:
            raise CorpusError(f"label {lab!r} not in {stage} collapse map")
        out.append(table[lab])
    return out


def identity_collapse(labels: Sequence[str]) -> CollapseMap:
    table = {lab: lab for lab in labels}
    return CollapseMap(train_map=dict(table), eval_map=dict(table))


def read_collapse_map(path: str | os.PathLike) -> CollapseMap:
    train, ev = {}, {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise CorpusError(f"{path}:{ln}: expected 'raw train eval', got {line!r}")
            raw, tr, evl = parts
            train[raw] = tr
            ev[tr] = evl
    return CollapseMap(train_map=train, eval_map=ev)


def write_collapse_map(path: str | os.PathLike, cmap: CollapseMap) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for raw in sorted(cmap.train_map):
            tr = cmap.train_map[raw]
            fh.write(f"{raw} {tr} {cmap.eval_map[tr]}\n")


def expand_to_frames(segments: Sequence[Segment], num_frames: int) -> np.ndarray:
    """Per-frame label indices from a segmentation covering [0, num_frames)."""
    check_path(segments, num_frames)
    out = np.empty(num_frames, dtype=np.int64)
    for seg in segments:
        out[seg.start : seg.end] = seg.label
    return out


def segments_from_frames(frame_labels: np.ndarray) -> list[Segment]:
    """Re-segment a frame label sequence by maximal same-label runs."""
    segs: list[Segment] = []
    start = 0
    for i in range(1, len(frame_labels) + 1):
        if i == len(frame_labels) or frame_labels[i] != frame_labels[start]:
            segs.append(Segment(start, i, int(frame_labels[start])))
            start = i
    return segs


def check_path(segments: Sequence[Segment], num_frames: int) -> None:
    """Validate connectivity and coverage of [0, num_frames)."""
    if not segments:
        raise CorpusError("empty segmentation")
    if segments[0].start != 0:
        raise CorpusError(f"segmentation starts at frame {segments[0].start}, expected 0")
    prev_end = 0
    for seg in segments:
        if seg.start != prev_end:
            if seg.start > prev_end:
                raise CorpusError(f"gap at frame {prev_end}")
            raise CorpusError(f"overlap at frame {seg.start}")
        if seg.end <= seg.start:
            raise CorpusError(f"empty segment at frame {seg.start}")
        prev_end = seg.end
    if prev_end != num_frames:
        raise CorpusError(f"segmentation ends at frame {prev_end}, expected {num_frames}")


# ---------------------------------------------------------------------------
# Readers / writers
# ---------------------------------------------------------------------------

FLOAT_FMT = "%.17g"  # round-trips IEEE double exactly


def read_features(path: str | os.PathLike) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise CorpusError(f"{path}: bad header, expected 'T F'")
        T, F = int(header[0]), int(header[1])
        rows = []
        for ln in range(T):
            parts = fh.readline().split()
            if len(parts) != F:
                raise CorpusError(f"{path}: line {ln + 2}: expected {F} values, got {len(parts)}")
            rows.append([float(v) for v in parts])
    x = np.asarray(rows, dtype=np.float64).reshape(T, F)
    if not np.isfinite(x).all():
        raise CorpusError(f"{path}: non-finite feature value")
    return x


def write_features(path: str | os.PathLike, frames: np.ndarray) -> None:
    T, F = frames.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{T} {F}\n")
        for row in frames:
            fh.write(" ".join(FLOAT_FMT % v for v in row) + "\n")


def read_label_line(path: str | os.PathLike) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        labels = fh.readline().split()
    if not labels:
        raise CorpusError(f"{path}: empty label file")
    return labels


def write_label_line(path: str | os.PathLike, labels: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(labels) + "\n")


def read_segmentation(path: str | os.PathLike) -> list[tuple[int, int, str]]:
    segs = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise CorpusError(f"{path}:{ln}: expected 's t label'")
            segs.append((int(parts[0]), int(parts[1]), parts[2]))
    if not segs:
        raise CorpusError(f"{path}: empty segmentation file")
    return segs


def write_segmentation(path: str | os.PathLike, segments: Sequence[Segment], label_set: LabelSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seg in segments:
            fh.write(f"{seg.start} {seg.end} {label_set.labels[seg.label]}\n")


def read_corpus(
    manifest_path: str | os.PathLike,
    label_set: LabelSet | None = None,
) -> tuple[list[Sample], LabelSet]:
    """Load every utterance listed in a manifest.

    When ``label_set`` is None one is built from the sorted union of labels
    seen in the corpus, so indices are dense and stable for a fixed corpus.
    """
    manifest_path = os.fspath(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    raw = []
    with open(manifest_path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise CorpusError(f"{manifest_path}:{ln}: expected 3 or 4 tab-separated fields")
            utt_id, feat_rel, lab_rel = parts[0], parts[1], parts[2]
            seg_rel = parts[3] if len(parts) == 4 and parts[3] else None
            frames = read_features(os.path.join(base, feat_rel))
            labels = read_label_line(os.path.join(base, lab_rel))
            segs = read_segmentation(os.path.join(base, seg_rel)) if seg_rel else None
            raw.append((utt_id, frames, labels, segs))

    if label_set is None:
        seen: set[str] = set()
        for _, _, labels, segs in raw:
            seen.update(labels)
            if segs:
                seen.update(lab for _, _, lab in segs)
        label_set = LabelSet(tuple(sorted(seen)))

    samples = []
    for utt_id, frames, labels, segs in raw:
        T = frames.shape[0]
        y = label_set.indices(labels)
        sample = Sample(id=utt_id, frames=frames, labels=y)
        if segs is not None:
            segments = [Segment(s, t, label_set.index(lab)) for s, t, lab in segs]
            if [seg.label for seg in segments] != y:
                raise CorpusError(f"{utt_id}: segmentation labels disagree with label file")
            sample.segments = segments
            sample.frame_labels = expand_to_frames(segments, T)
        samples.append(sample)
    return samples, label_set


def write_corpus(
    out_dir: str | os.PathLike,
    samples: Sequence[Sample],
    label_set: LabelSet,
    manifest_name: str = "manifest.tsv",
) -> str:
    """Write samples plus a manifest under ``out_dir``; returns manifest path."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for sample in samples:
        feat = f"{sample.id}.feats"
        lab = f"{sample.id}.labels"
        write_features(os.path.join(out_dir, feat), sample.frames)
        write_label_line(os.path.join(out_dir, lab), label_set.names(sample.labels or []))
        fields = [sample.id, feat, lab]
        if sample.segments is not None:
            seg = f"{sample.id}.segs"
            write_segmentation(os.path.join(out_dir, seg), sample.segments, label_set)
            fields.append(seg)
        lines.append("\t".join(fields))
    manifest = os.path.join(out_dir, manifest_name)
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# Synthetic corpus generator
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Knobs for the synthetic corpus (a desk-scale labeled-frames stand-in).

    Label sequences follow a first-order Markov chain with no self
    transitions, so boundaries are identifiable and segment structure
    carries information beyond per-frame classification.  Durations are
    shifted Poisson (minimum 1, mean ``mean_seg_len``) capped at
    ``max_duration``.  Frames are the label's mean vector plus isotropic
    Gaussian noise of scale ``noise_sigma``.
    """

    seed: int = 0
    n_utts: int = 10
    label_set_size: int = 4
    feat_dim: int = 4
    mean_seg_len: float = 4.0
    noise_sigma: float = 0.0
    max_duration: int = 30
    min_segments: int = 4
    max_segments: int = 10
    splits: dict[str, int] = field(default_factory=dict)


def _label_names(n: int) -> tuple[str, ...]:
    width = len(str(n - 1))
    return tuple(f"l{str(i).zfill(width)}" for i in range(n))


def _label_means(rng: np.random.Generator, n_labels: int, feat_dim: int) -> np.ndarray:
    # random base plus a label-indexed offset of magnitude >= 2 in one
    # coordinate, so means are distinct and classes separable at sigma=0
    means = rng.uniform(-1.0, 1.0, size=(n_labels, feat_dim))
    for lab in range(n_labels):
        means[lab, lab % feat_dim] += 2.0 * (1 + lab // feat_dim)
    return means


def generate_synthetic(cfg: SynthConfig, out_dir: str | os.PathLike) -> dict[str, str]:
    """Generate a corpus on disk; returns manifest path per split.

    Pure function of ``cfg``: identical configs give byte-identical trees.
    All splits share one draw of label means and transition matrix.
    """
    if cfg.n_utts <= 0 or cfg.label_set_size <= 0 or cfg.feat_dim <= 0:
        raise ValueError("counts must be positive")
    if cfg.noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    splits = dict(cfg.splits) or {"all": cfg.n_utts}
    if sum(splits.values()) != cfg.n_utts:
        raise ValueError("split sizes must sum to n_utts")

    rng = np.random.default_rng(cfg.seed)
    names = _label_names(cfg.label_set_size)
    label_set = LabelSet(names)
    means = _label_means(rng, cfg.label_set_size, cfg.feat_dim)
    init = rng.uniform(0.2, 1.0, size=cfg.label_set_size)
    init /= init.sum()
    trans = rng.uniform(0.2, 1.0, size=(cfg.label_set_size, cfg.label_set_size))
    if cfg.label_set_size > 1:
        np.fill_diagonal(trans, 0.0)
    trans /= trans.sum(axis=1, keepdims=True)

    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    manifests: dict[str, str] = {}
    utt_index = 0
    for split, count in splits.items():
        samples = []
        for _ in range(count):
            n_segs = int(rng.integers(cfg.min_segments, cfg.max_segments + 1))
            labels = [int(rng.choice(cfg.label_set_size, p=init))]
            for _ in range(n_segs - 1):
                labels.append(int(rng.choice(cfg.label_set_size, p=trans[labels[-1]])))
            durations = 1 + rng.poisson(max(cfg.mean_seg_len - 1.0, 0.0), size=n_segs)
            durations = np.minimum(durations, cfg.max_duration)
            segments, pos = [], 0
            for lab, dur in zip(labels, durations):
                segments.append(Segment(pos, pos + int(dur), lab))
                pos += int(dur)
            frames = means[np.repeat(labels, durations)]
            if cfg.noise_sigma > 0:
                frames = frames + cfg.noise_sigma * rng.standard_normal(frames.shape)
            else:
                frames = frames.copy()
            samples.append(
                Sample(
                    id=f"utt{utt_index:05d}",
                    frames=frames,
                    labels=labels,
                    segments=segments,
                    frame_labels=expand_to_frames(segments, pos),
                )
            )
            utt_index += 1
        manifest_name = "manifest.tsv" if split == "all" else f"manifest-{split}.tsv"
        manifests[split] = write_corpus(out_dir, samples, label_set, manifest_name)
    write_collapse_map(os.path.join(out_dir, "collapse.map"), identity_collapse(names))
    return manifests
