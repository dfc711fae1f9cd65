"""Coverage predictors and the emulator weight-file format.

A predictor maps an ABS pattern (plus the GU pattern of the planning snapshot)
to a K-by-K map of per-cell coverage probabilities. Two interchangeable
implementations exist: ExactOracle evaluates the true channel, and
EmulatorPredictor runs a learned attention-gated encoder-decoder exported by
the trainer. Thresholding the probability map against the GU pattern yields
the predicted covered-GU pattern and its coverage rate.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import gridmap
from .channel import ChannelParams, assign_min_cost, link_outage, throughput
from .env import Environment

BCE_CLIP = 1e-7
DEFAULT_ETA = 0.5

WEIGHT_MAGIC = b"ABSEMUL1"
ARCH_NAME = "attn-unet-v1"

# (name, out_channels, in_channels, kernel) in file order
_ARCH_LAYERS = [
    ("enc1.conv1", 16, 2, 3),
    ("enc1.conv2", 16, 16, 3),
    ("enc2.conv1", 32, 16, 3),
    ("enc2.conv2", 32, 32, 3),
    ("bot.conv1", 64, 32, 3),
    ("bot.conv2", 64, 64, 3),
    ("ag1.theta", 16, 32, 1),
    ("ag1.phi", 16, 64, 1),
    ("ag1.psi", 1, 16, 1),
    ("dec1.conv1", 32, 96, 3),
    ("dec1.conv2", 32, 32, 3),
    ("ag2.theta", 16, 16, 1),
    ("ag2.phi", 16, 32, 1),
    ("ag2.psi", 1, 16, 1),
    ("dec2.conv1", 16, 48, 3),
    ("dec2.conv2", 16, 16, 3),
    ("out.conv", 1, 16, 1),
]


class FormatError(ValueError):
    """Weight file violates the expected layout."""


@dataclass
class PredictedCgu:
    counts: np.ndarray           # (K, K) predicted covered GUs per cell
    predicted_cr: float


def threshold(probs, gu_counts, eta=DEFAULT_ETA, m=None) -> PredictedCgu:
    """Keep a cell's GUs iff its predicted probability strictly exceeds eta."""
    gu_counts = np.asarray(gu_counts)
    counts = np.where(np.asarray(probs) > eta, gu_counts, 0)
    total = int(gu_counts.sum()) if m is None else int(m)
    cr = float(counts.sum() / total) if total else 0.0
    return PredictedCgu(counts, cr)


def e_bce(probs, label) -> float:
    """Mean element-wise binary cross entropy, natural log, inputs clipped."""
    p = np.clip(np.asarray(probs, dtype=float), BCE_CLIP, 1.0 - BCE_CLIP)
    y = np.asarray(label, dtype=float)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def spp(predicted_ranking, actual_ranking, k) -> float:
    """Fraction of the predicted top-k ids that appear in the actual top-k."""
    pred = list(predicted_ranking)
    act = list(actual_ranking)
    if len(set(pred)) != len(pred) or len(set(act)) != len(act):
        raise ValueError("rankings must not contain duplicate ids")
    if set(pred) != set(act):
        raise ValueError("rankings must cover the same candidate set")
    if not 1 <= k <= len(pred):
        raise ValueError("k outside [1, number of candidates]")
    return len(set(pred[:k]) & set(act[:k])) / k


class ExactOracle:
    """Ground-truth predictor: true channel evaluation on the snapshot GUs.

    Per-cell link quantities (outage, squared distance) are cached per ABS
    cell, so scoring thousands of candidate placements against one GU snapshot
    stays cheap. A cell's probability is 1.0 when every GU quantized into it
    is covered, else 0.0; GU-empty cells are 0.0.
    """

    def __init__(self, env: Environment, gu_positions, params: ChannelParams,
                 k: int, max_size: int, eta: float = DEFAULT_ETA):
        self.env = env
        self.params = params
        self.k = int(k)
        self.max_size = int(max_size)
        self.eta = float(eta)
        self.gu_positions = np.atleast_2d(np.asarray(gu_positions, dtype=float))
        self.m = self.gu_positions.shape[0]
        row, col = gridmap.cell_indices(self.gu_positions, self.k, env.area_side)
        self._gu_flat = row * self.k + col
        self.gu_counts = gridmap.quantize(self.gu_positions, self.k,
                                          env.area_side, gridmap.ROLE_GU).counts
        self._gu_per_cell = np.bincount(self._gu_flat, minlength=self.k * self.k)
        self._occ_cells = np.nonzero(self._gu_per_cell)[0]
        self._occ_totals = self._gu_per_cell[self._occ_cells]
        self._gu_compact = np.searchsorted(self._occ_cells, self._gu_flat)
        self._links: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        cell = env.area_side / self.k
        self._centers_x = (np.arange(self.k) + 0.5) * cell
        self._centers_y = (np.arange(self.k) + 0.5) * cell

    def _cell_center(self, flat_index: int) -> np.ndarray:
        i0, j0 = divmod(int(flat_index) - 1, self.k)
        return np.array([self._centers_x[j0], self._centers_y[i0]])

    def _link_rows(self, flat_index: int):
        got = self._links.get(flat_index)
        if got is None:
            p_out, d2sq = link_outage(self.env, self._cell_center(flat_index),
                                      self.gu_positions, self.params)
            got = (p_out, d2sq)
            self._links[flat_index] = got
        return got

    def indicators_of(self, seq) -> np.ndarray:
        """Per-GU coverage booleans for ABSs at the sequence's cell centers."""
        cells = [int(c) for c in seq]
        n = len(cells)
        p_out = np.empty((n, self.m))
        cost = np.empty((self.m, n))
        for i, c in enumerate(cells):
            p, d2 = self._link_rows(c)
            p_out[i] = p
            cost[:, i] = d2
        gu_to_abs = assign_min_cost(cost, self.max_size)
        sizes = np.bincount(gu_to_abs, minlength=n)
        p = p_out[gu_to_abs, np.arange(self.m)]
        rates = throughput(p, sizes[gu_to_abs], self.params)
        return rates >= self.params.rate_threshold

    def lambda_of(self, seq) -> float:
        """True coverage rate of the placement on the snapshot GUs."""
        if self.m == 0:
            return 0.0
        return float(self.indicators_of(seq).mean())

    def probs_of(self, seq) -> np.ndarray:
        covered = self.indicators_of(seq)
        cov_per_cell = np.bincount(self._gu_flat, weights=covered,
                                   minlength=self.k * self.k)
        full = (self._gu_per_cell > 0) & (cov_per_cell >= self._gu_per_cell)
        return full.astype(float).reshape(self.k, self.k)

    def predict(self, abs_counts, gu_counts=None) -> np.ndarray:
        """Probability map for an ABS pattern (counts); snapshot GUs are held
        internally, so any gu_counts argument only has to match the resolution."""
        abs_counts = np.asarray(abs_counts)
        if abs_counts.shape != (self.k, self.k):
            raise ValueError(f"ABS pattern must be {self.k}x{self.k}")
        if gu_counts is not None and np.asarray(gu_counts).shape != (self.k, self.k):
            raise ValueError("GU pattern resolution mismatch")
        row, col = np.nonzero(abs_counts)
        seq = np.repeat(row * self.k + col + 1, abs_counts[row, col])
        return self.probs_of(seq)

    def score_sequence(self, seq) -> float:
        """Emulator-style fitness: thresholded predicted coverage rate.

        Oracle cell probabilities are exactly 0 or 1, so thresholding reduces
        to summing the GU counts of fully covered cells.
        """
        if self.m == 0:
            return 0.0
        covered = self.indicators_of(seq)
        cov = np.bincount(self._gu_compact, weights=covered,
                          minlength=self._occ_cells.size)
        full = cov >= self._occ_totals
        return float(self._occ_totals[full].sum() / self.m)

    def score_sequences(self, seqs) -> np.ndarray:
        return np.array([self.score_sequence(s) for s in seqs], dtype=float)


# --- emulator weight file -------------------------------------------------

def expected_tensors() -> dict[str, tuple[int, ...]]:
    """Canonical tensor-name -> shape table of the reference architecture."""
    out: dict[str, tuple[int, ...]] = {}
    for name, o, c, ksz in _ARCH_LAYERS:
        out[f"{name}.weight"] = (o, c, ksz, ksz)
        out[f"{name}.bias"] = (o,)
    return out


@dataclass
class EmulatorModel:
    k: int
    arch: str
    tensors: dict[str, np.ndarray]


def save_model(path, k: int, tensors: dict[str, np.ndarray]) -> None:
    """Write the portable weight file: magic, JSON header, float32 blob."""
    expected = expected_tensors()
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise FormatError(f"missing tensors: {missing[:4]}...")
    entries = []
    blob = bytearray()
    offset = 0
    for name, shape in expected.items():
        arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
        if arr.shape != shape:
            raise FormatError(f"{name}: shape {arr.shape} != expected {shape}")
        entries.append({"name": name, "shape": list(shape), "offset": offset})
        blob.extend(arr.tobytes())
        offset += arr.size
    header = json.dumps({"arch": ARCH_NAME, "k": int(k), "tensors": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(bytes(blob))


def load_model(path) -> EmulatorModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != WEIGHT_MAGIC:
        raise FormatError("bad magic bytes")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from exc
    if header.get("arch") != ARCH_NAME:
        raise FormatError(f"unknown architecture {header.get('arch')!r}")
    k = int(header["k"])
    if k % 4 != 0:
        raise FormatError("grid resolution must be divisible by 4")
    blob = np.frombuffer(raw[12 + hlen:], dtype="<f4")
    expected = expected_tensors()
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        name, shape, off = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        if name not in expected:
            raise FormatError(f"unknown tensor {name}")
        if shape != expected[name]:
            raise FormatError(f"{name}: shape {shape} != expected {expected[name]}")
        size = int(np.prod(shape))
        if off + size > blob.size:
            raise FormatError(f"{name}: blob overrun")
        tensors[name] = blob[off:off + size].reshape(shape).copy()
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise FormatError(f"missing tensors: {missing[:4]}...")
    return EmulatorModel(k, ARCH_NAME, tensors)


# --- numpy forward pass ----------------------------------------------------

def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _conv3(x, w, b):
    bsz, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((bsz, c * 9, h * wd), dtype=x.dtype)
    idx = 0
    for di in range(3):
        for dj in range(3):
            patch = xp[:, :, di:di + h, dj:dj + wd]
            cols[:, idx * c:(idx + 1) * c, :] = patch.reshape(bsz, c, h * wd)
            idx += 1
    wm = w.transpose(2, 3, 1, 0).reshape(9 * c, -1)       # (9C, O) matching col order
    out = np.matmul(cols.transpose(0, 2, 1), wm)          # (B, HW, O)
    out = out.transpose(0, 2, 1).reshape(bsz, -1, h, wd)
    return out + b[None, :, None, None]


def _conv1(x, w, b):
    out = np.einsum("oc,bchw->bohw", w[:, :, 0, 0], x)
    return out + b[None, :, None, None]


def _pool2(x):
    bsz, c, h, w = x.shape
    return x.reshape(bsz, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def _up2(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def _attention_gate(skip, gate, t, name):
    add = _conv1(skip, t[f"{name}.theta.weight"], t[f"{name}.theta.bias"]) \
        + _conv1(gate, t[f"{name}.phi.weight"], t[f"{name}.phi.bias"])
    alpha = _sigmoid(_conv1(_relu(add), t[f"{name}.psi.weight"], t[f"{name}.psi.bias"]))
    return skip * alpha


def _block(x, t, name):
    x = _relu(_conv3(x, t[f"{name}.conv1.weight"], t[f"{name}.conv1.bias"]))
    return _relu(_conv3(x, t[f"{name}.conv2.weight"], t[f"{name}.conv2.bias"]))


def forward(model: EmulatorModel, x) -> np.ndarray:
    """Deterministic forward pass; accepts (2,K,K) or a (B,2,K,K) batch.

    Encoder halves the grid twice, the decoder mirrors it with nearest
    upsampling and attention-gated skips, and the 1x1 head applies a sigmoid.
    """
    x = np.asarray(x, dtype=np.float32)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    bsz, c, h, w = x.shape
    if c != 2 or h != model.k or w != model.k or h % 4 != 0:
        raise ValueError(f"input must be (B,2,{model.k},{model.k})")
    t = model.tensors
    s1 = _block(x, t, "enc1")                              # (B,16,K,K)
    s2 = _block(_pool2(s1), t, "enc2")                     # (B,32,K/2,K/2)
    bot = _block(_pool2(s2), t, "bot")                     # (B,64,K/4,K/4)
    g1 = _up2(bot)                                         # (B,64,K/2,K/2)
    d1 = _block(np.concatenate([g1, _attention_gate(s2, g1, t, "ag1")], axis=1),
                t, "dec1")                                 # (B,32,K/2,K/2)
    g2 = _up2(d1)                                          # (B,32,K,K)
    d2 = _block(np.concatenate([g2, _attention_gate(s1, g2, t, "ag2")], axis=1),
                t, "dec2")                                 # (B,16,K,K)
    out = _sigmoid(_conv1(d2, t["out.conv.weight"], t["out.conv.bias"]))
    probs = out[:, 0].astype(np.float64)
    return probs[0] if squeeze else probs


class EmulatorPredictor:
    """Planner-facing wrapper: learned model + the period's GU pattern."""

    def __init__(self, model: EmulatorModel, gu_counts, eta: float = DEFAULT_ETA,
                 batch_size: int = 256):
        self.model = model
        self.k = model.k
        self.eta = float(eta)
        self.batch_size = int(batch_size)
        self.gu_counts = np.asarray(gu_counts)
        if self.gu_counts.shape != (self.k, self.k):
            raise ValueError(f"GU pattern must be {self.k}x{self.k}")
        self.m = int(self.gu_counts.sum())
        self._gu_plane = self.gu_counts.astype(np.float32)

    def predict(self, abs_counts, gu_counts=None) -> np.ndarray:
        gu = self._gu_plane if gu_counts is None else np.asarray(gu_counts, np.float32)
        abs_counts = np.asarray(abs_counts, dtype=np.float32)
        if abs_counts.shape != gu.shape or abs_counts.shape != (self.k, self.k):
            raise ValueError("pattern resolution mismatch")
        return forward(self.model, np.stack([abs_counts, gu]))

    def score_sequences(self, seqs) -> np.ndarray:
        scores = np.empty(len(seqs), dtype=float)
        for lo in range(0, len(seqs), self.batch_size):
            chunk = seqs[lo:lo + self.batch_size]
            batch = np.empty((len(chunk), 2, self.k, self.k), dtype=np.float32)
            for i, seq in enumerate(chunk):
                batch[i, 0] = gridmap.sequence_to_counts(seq, self.k)
                batch[i, 1] = self._gu_plane
            probs = forward(self.model, batch)
            for i in range(len(chunk)):
                scores[lo + i] = threshold(probs[i], self.gu_counts,
                                           self.eta, self.m).predicted_cr
        return scores
