"""Bidirectional recurrent frame encoder with exact hand-derived backprop.

The encoder stacks bidirectional LSTM layers; the concatenated final-layer
states are projected to the label dimension and log-softmax normalized,
giving per-frame label log-probabilities k (T x |L|).  ``backward``
computes the exact gradient of <dk, k> with respect to every parameter for
an arbitrary co-gradient dk, which is all any loss downstream needs.

Parameters live in a flat name -> array dict (gate order i, f, o, g along
the first axis) so optimizers and checkpoints treat the encoder and the
segmental weights uniformly.

Dropout follows the non-inverted convention: training multiplies by raw
0/1 masks, so a model trained at rate r must have the masked vectors
scaled by (1 - r) when later run without dropout (mode ``eval_scaled``).
Masks are shared across time steps within an utterance unless
``per_step`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    num_labels: int
    hidden_size: int = 32
    num_layers: int = 1

    def layer_input_dim(self, layer: int) -> int:
        return self.input_dim if layer == 0 else 2 * self.hidden_size

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_labels": self.num_labels,
            "hidden_size": self.hidden_size,
            "num_layers": self.num_layers,
        }

    @staticmethod
    def from_dict(d: dict) -> "EncoderConfig":
        return EncoderConfig(**{key: int(v) for key, v in d.items()})


@dataclass(frozen=True)
class DropoutSpec:
    """mode is one of train (sample masks), eval_scaled (multiply by 1-rate,
    for models trained with dropout but run without), eval_plain."""

    rate: float = 0.0
    mode: str = "eval_plain"
    per_step: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        if self.mode not in ("train", "eval_scaled", "eval_plain"):
            raise ValueError(f"unknown dropout mode {self.mode!r}")


@dataclass
class EncoderOutput:
    k: np.ndarray  # (T, |L|) log-probabilities
    layer_outputs: list  # per layer, (T, 2H) concatenated states
    cache: dict  # activations needed by backward


def _gate_names(layer: int, direction: str) -> tuple[str, str, str]:
    base = f"l{layer}.{direction}"
    return f"{base}.wx", f"{base}.wh", f"{base}.b"


def param_names(config: EncoderConfig) -> list[str]:
    names = []
    for layer in range(config.num_layers):
        for direction in ("fwd", "bwd"):
            names.extend(_gate_names(layer, direction))
    names.append("proj")
    return names


def init_params(seed: int, config: EncoderConfig) -> dict[str, np.ndarray]:
    """Uniform [-0.1, 0.1] weights; forget-gate biases 1, other biases 0."""
    rng = np.random.default_rng(seed)
    H = config.hidden_size
    params: dict[str, np.ndarray] = {}
    for layer in range(config.num_layers):
        in_dim = config.layer_input_dim(layer)
        for direction in ("fwd", "bwd"):
            wx, wh, b = _gate_names(layer, direction)
            params[wx] = rng.uniform(-0.1, 0.1, size=(4 * H, in_dim))
            params[wh] = rng.uniform(-0.1, 0.1, size=(4 * H, H))
            bias = np.zeros(4 * H)
            bias[H : 2 * H] = 1.0
            params[b] = bias
    params["proj"] = rng.uniform(-0.1, 0.1, size=(config.num_labels, 2 * H))
    return params


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


def make_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """A 0/1 keep mask; each unit kept with probability 1 - rate."""
    return (rng.random(shape) >= rate).astype(np.float64)


def _dropout_mask(dropout: DropoutSpec, rng, num_frames: int, dim: int):
    if dropout.mode == "eval_plain" or dropout.rate == 0.0:
        return None
    if dropout.mode == "eval_scaled":
        return np.full(dim, 1.0 - dropout.rate)
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    shape = (num_frames, dim) if dropout.per_step else (dim,)
    return make_mask(rng, shape, dropout.rate)


def _run_cell(wx, wh, b, inputs):
    """One direction of one layer, inputs already in processing order."""
    T = inputs.shape[0]
    H = wh.shape[1]
    pre = inputs @ wx.T + b  # (T, 4H)
    i = np.empty((T, H)); f = np.empty((T, H)); o = np.empty((T, H))
    g = np.empty((T, H)); c = np.empty((T, H)); tanh_c = np.empty((T, H))
    h = np.empty((T, H))
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    for t in range(T):
        a = pre[t] + wh @ h_prev
        i[t] = 1.0 / (1.0 + np.exp(-a[:H]))
        f[t] = 1.0 / (1.0 + np.exp(-a[H : 2 * H]))
        o[t] = 1.0 / (1.0 + np.exp(-a[2 * H : 3 * H]))
        g[t] = np.tanh(a[3 * H :])
        c[t] = f[t] * c_prev + i[t] * g[t]
        tanh_c[t] = np.tanh(c[t])
        h[t] = o[t] * tanh_c[t]
        h_prev, c_prev = h[t], c[t]
    return {"inputs": inputs, "i": i, "f": f, "o": o, "g": g, "c": c, "tanh_c": tanh_c, "h": h}


def _cell_backward(wx, wh, cache, dh_ext):
    """BPTT through one direction; returns (dwx, dwh, db, d_inputs)."""
    i, f, o, g, c, tanh_c, h = (cache[x] for x in ("i", "f", "o", "g", "c", "tanh_c", "h"))
    T, H = h.shape
    da_all = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        dh = dh_ext[t] + dh_next
        do = dh * tanh_c[t]
        dc = dh * o[t] * (1.0 - tanh_c[t] ** 2) + dc_next
        c_prev = c[t - 1] if t > 0 else 0.0
        df = dc * c_prev
        di = dc * g[t]
        dg = dc * i[t]
        da = da_all[t]
        da[:H] = di * i[t] * (1.0 - i[t])
        da[H : 2 * H] = df * f[t] * (1.0 - f[t])
        da[2 * H : 3 * H] = do * o[t] * (1.0 - o[t])
        da[3 * H :] = dg * (1.0 - g[t] ** 2)
        dh_next = wh.T @ da
        dc_next = dc * f[t]
    dwx = da_all.T @ cache["inputs"]
    dwh = da_all[1:].T @ h[:-1]  # h_prev is zero at the first step
    db = da_all.sum(axis=0)
    d_inputs = da_all @ wx
    return dwx, dwh, db, d_inputs


def forward(
    params: dict[str, np.ndarray],
    config: EncoderConfig,
    x: np.ndarray,
    dropout: DropoutSpec = DropoutSpec(),
    rng: np.random.Generator | None = None,
) -> EncoderOutput:
    """Run the stack on one utterance; caches everything backward needs."""
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ValueError(f"input shape {x.shape} does not match input_dim {config.input_dim}")
    T = x.shape[0]
    layer_caches = []
    layer_outputs = []
    current = x
    for layer in range(config.num_layers):
        in_mask = _dropout_mask(dropout, rng, T, current.shape[1])
        masked = current if in_mask is None else current * in_mask
        fwd = _run_cell(*(params[n] for n in _gate_names(layer, "fwd")), masked)
        bwd = _run_cell(*(params[n] for n in _gate_names(layer, "bwd")), masked[::-1])
        out = np.concatenate([fwd["h"], bwd["h"][::-1]], axis=1)
        layer_caches.append({"fwd": fwd, "bwd": bwd, "in_mask": in_mask})
        layer_outputs.append(out)
        current = out
    out_mask = _dropout_mask(dropout, rng, T, current.shape[1])
    ho = current if out_mask is None else current * out_mask
    z = ho @ params["proj"].T
    zmax = z.max(axis=1, keepdims=True)
    log_norm = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    k = z - log_norm
    cache = {
        "layers": layer_caches,
        "out_mask": out_mask,
        "ho": ho,
        "probs": np.exp(k),
    }
    return EncoderOutput(k=k, layer_outputs=layer_outputs, cache=cache)


def backward(
    params: dict[str, np.ndarray],
    config: EncoderConfig,
    output: EncoderOutput,
    dk: np.ndarray,
) -> dict[str, np.ndarray]:
    """Exact gradient of sum(dk * k) for every parameter."""
    if output.cache is None:
        raise ValueError("forward cache missing")
    if dk.shape != output.k.shape:
        raise ValueError(f"dk shape {dk.shape} != k shape {output.k.shape}")
    cache = output.cache
    H = config.hidden_size
    grads: dict[str, np.ndarray] = {}

    # through log-softmax, then the projection
    dz = dk - cache["probs"] * dk.sum(axis=1, keepdims=True)
    grads["proj"] = dz.T @ cache["ho"]
    d_out = dz @ params["proj"]
    if cache["out_mask"] is not None:
        d_out = d_out * cache["out_mask"]

    for layer in range(config.num_layers - 1, -1, -1):
        lc = cache["layers"][layer]
        d_fwd_ext = d_out[:, :H]
        d_bwd_ext = d_out[:, H:][::-1]
        names_f = _gate_names(layer, "fwd")
        names_b = _gate_names(layer, "bwd")
        dwx, dwh, db, d_in_f = _cell_backward(params[names_f[0]], params[names_f[1]], lc["fwd"], d_fwd_ext)
        grads[names_f[0]], grads[names_f[1]], grads[names_f[2]] = dwx, dwh, db
        dwx, dwh, db, d_in_b = _cell_backward(params[names_b[0]], params[names_b[1]], lc["bwd"], d_bwd_ext)
        grads[names_b[0]], grads[names_b[1]], grads[names_b[2]] = dwx, dwh, db
        d_in = d_in_f + d_in_b[::-1]
        if lc["in_mask"] is not None:
            d_in = d_in * lc["in_mask"]
        d_out = d_in
    return grads


def frame_cross_entropy(output: EncoderOutput, frame_labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed per-frame cross entropy and its co-gradient dk.

    The per-utterance loss is a sum over frames (one utterance is one
    mini-batch); report loss / T when averaging.
    """
    T, L = output.k.shape
    labels = np.asarray(frame_labels)
    if labels.shape != (T,):
        raise ValueError("frame label length does not match k")
    if labels.min() < 0 or labels.max() >= L:
        raise ValueError("frame label out of range")
    loss = -float(output.k[np.arange(T), labels].sum())
    dk = np.zeros_like(output.k)
    dk[np.arange(T), labels] = -1.0
    return loss, dk


def frame_error_rate(output: EncoderOutput, frame_labels: np.ndarray, label_set=None, collapse=None) -> float:
    """Fraction of frames misclassified by argmax over k.

    With a collapse map, both the prediction and the gold label are mapped
    through the eval collapse before comparison.  Argmax ties break toward
    the smaller label index.
    """
    pred = output.k.argmax(axis=1)
    gold = np.asarray(frame_labels)
    if collapse is not None:
        if label_set is None:
            raise ValueError("collapsing frame labels requires the label set")
        pred_names = collapse.apply(label_set.names(pred.tolist()), "eval")
        gold_names = collapse.apply(label_set.names(gold.tolist()), "eval")
        wrong = sum(p != g for p, g in zip(pred_names, gold_names))
        return wrong / len(gold_names)
    return float((pred != gold).mean())
