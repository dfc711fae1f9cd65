"""Air-to-ground channel: path gain, angle-dependent Rician outage, throughput,
coverage indicators, and size-constrained GU-to-ABS association.

All SNR-like quantities are linear unless a name carries a _db suffix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import chndtr

from .env import Environment, los_mask


class CapacityError(ValueError):
    """Association demand exceeds total cluster capacity."""


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


_DEFAULT_A2 = 2.0 / math.pi * math.log(1000.0)   # K: 0 dB at grazing, 30 dB overhead


@dataclass(frozen=True)
class ChannelParams:
    carrier_freq: float = 2e9            # f_c, Hz
    bandwidth_hz: float = 20e6           # total system bandwidth B, Hz
    transmit_snr: float = 10.0 ** 11.5   # nominal single-ABS transmit SNR, linear
    snr_threshold: float = 10.0 ** 1.5   # required instantaneous SNR, linear
    rate_threshold: float = 0.83e6       # per-GU throughput target, bit/s
    rician_a1: float = 1.0               # K-factor at zero elevation, linear
    rician_a2: float = _DEFAULT_A2       # K-factor exponent, 1/rad
    n_abs: int = 5

    def __post_init__(self):
        for name in ("carrier_freq", "bandwidth_hz", "transmit_snr", "snr_threshold",
                     "rate_threshold", "rician_a1", "rician_a2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_abs < 1:
            raise ValueError("n_abs must be >= 1")

    @property
    def k_max(self) -> float:
        return self.rician_a1 * math.exp(self.rician_a2 * math.pi / 2.0)

    @classmethod
    def from_db(cls, transmit_snr_db=115.0, snr_threshold_db=15.0,
                k_min_db=0.0, k_max_db=30.0, **kw) -> "ChannelParams":
        a1 = float(db_to_linear(k_min_db))
        a2 = 2.0 / math.pi * math.log(float(db_to_linear(k_max_db)) / a1)
        return cls(transmit_snr=float(db_to_linear(transmit_snr_db)),
                   snr_threshold=float(db_to_linear(snr_threshold_db)),
                   rician_a1=a1, rician_a2=a2, **kw)


@dataclass
class Association:
    gu_to_abs: np.ndarray        # (M,) ABS index per GU
    cluster_sizes: np.ndarray    # (N,) GUs per ABS
    max_size: int


@dataclass
class CoverageReport:
    indicators: np.ndarray       # (M,) bool, throughput >= rate_threshold
    throughputs: np.ndarray      # (M,) bit/s
    outages: np.ndarray          # (M,) probabilities
    rate: float                  # coverage rate, fraction of covered GUs
    association: Association = field(repr=False, default=None)


def pathloss_db(d3d, los, f_c=2e9, gu_height=1.0):
    """Urban-macro style path loss in dB for 3D distance d3d (m).

    LoS: 28 + 22 log10(d) + 20 log10(f/GHz).
    NLoS: max(LoS, 13.54 + 39.08 log10(d) + 20 log10(f/GHz) - 0.6 (h_gu - 1.5)).
    """
    d3d = np.asarray(d3d, dtype=float)
    if (d3d <= 0).any():
        raise ValueError("3D distance must be positive")
    fterm = 20.0 * np.log10(f_c / 1e9)
    pl_los = 28.0 + 22.0 * np.log10(d3d) + fterm
    pl_nlos = np.maximum(
        pl_los,
        13.54 + 39.08 * np.log10(d3d) + fterm - 0.6 * (gu_height - 1.5),
    )
    out = np.where(np.asarray(los, dtype=bool), pl_los, pl_nlos)
    return float(out) if out.ndim == 0 else out


def rician_k(theta, a1=1.0, a2=_DEFAULT_A2):
    """Elevation-dependent Rician K factor a1*exp(a2*theta), linear."""
    return a1 * np.exp(a2 * np.asarray(theta, dtype=float))


def marcum_q1(a, b):
    """First-order Marcum Q via the noncentral chi-square survival function."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = 1.0 - chndtr(b * b, 2.0, a * a)
    return np.clip(out, 0.0, 1.0)


def outage_prob(mean_snr, k_factor, snr_threshold):
    """P(instantaneous SNR < threshold) under Rician fading with unit-mean power.

    Equals 1 - Q1(sqrt(2K), sqrt(2(K+1)*thr/mean)); K = 0 is the Rayleigh case
    1 - exp(-thr/mean). Clamped to [0, 1].
    """
    mean_snr = np.asarray(mean_snr, dtype=float)
    if (mean_snr <= 0).any():
        raise ValueError("mean_snr must be positive")
    k = np.asarray(k_factor, dtype=float)
    ratio = snr_threshold / mean_snr
    x = 2.0 * (k + 1.0) * ratio
    with np.errstate(over="ignore"):
        rayleigh = -np.expm1(-ratio)
        rician = chndtr(x, 2.0, 2.0 * k)
    out = np.clip(np.where(k == 0.0, rayleigh, rician), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def max_cluster_size(n_gu, n_abs, epsilon=0.2) -> int:
    """Per-ABS GU cap floor((1+eps)*M/N)."""
    return int(math.floor((1.0 + epsilon) * n_gu / n_abs))


@njit(cache=True)
def _ssp_assign(cost, cap):
    """Exact min-cost assignment of unit-demand rows to capacitated columns.

    Successive shortest augmenting paths; Bellman-Ford on the column graph is
    cheap because the number of columns is small.
    """
    m_rows, n_cols = cost.shape
    assign = np.full(m_rows, -1, np.int64)
    load = np.zeros(n_cols, np.int64)
    rows_of = np.full((n_cols, m_rows), -1, np.int64)
    inf = 1e300
    for m in range(m_rows):
        dist = cost[m].copy()
        parent_col = np.full(n_cols, -1, np.int64)
        parent_row = np.full(n_cols, -1, np.int64)
        for _ in range(n_cols + 1):
            improved = False
            for a in range(n_cols):
                if dist[a] >= inf:
                    continue
                for s in range(load[a]):
                    r = rows_of[a, s]
                    base = dist[a] - cost[r, a]
                    for b in range(n_cols):
                        if b == a:
                            continue
                        cand = base + cost[r, b]
                        if cand < dist[b] - 1e-12:
                            dist[b] = cand
                            parent_col[b] = a
                            parent_row[b] = r
                            improved = True
            if not improved:
                break
        t = -1
        best = inf
        for n in range(n_cols):
            if load[n] < cap[n] and dist[n] < best:
                best = dist[n]
                t = n
        b = t
        while parent_col[b] != -1:
            a = parent_col[b]
            r = parent_row[b]
            for s in range(load[a]):
                if rows_of[a, s] == r:
                    rows_of[a, s] = rows_of[a, load[a] - 1]
                    load[a] -= 1
                    break
            rows_of[b, load[b]] = r
            load[b] += 1
            assign[r] = b
            b = a
        rows_of[b, load[b]] = m
        load[b] += 1
        assign[m] = b
    return assign


def assign_min_cost(cost, max_size) -> np.ndarray:
    """gu_to_abs for an (M, N) squared-distance cost matrix."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    m, n = cost.shape
    if n * max_size < m:
        raise CapacityError(f"{m} GUs exceed capacity {n}x{max_size}")
    cap = np.full(n, max_size, dtype=np.int64)
    return _ssp_assign(cost, cap)


def associate(abs_pos, gu_pos, max_size) -> Association:
    """Min-total-squared-distance GU-to-ABS assignment with per-cluster cap.

    Solved exactly as a small min-cost-flow (successive shortest paths);
    processing GUs in index order keeps the result deterministic.
    """
    abs_pos = np.atleast_2d(np.asarray(abs_pos, dtype=float))
    gu_pos = np.atleast_2d(np.asarray(gu_pos, dtype=float))
    cost = ((gu_pos[:, None, :] - abs_pos[None, :, :]) ** 2).sum(axis=2)
    gu_to_abs = assign_min_cost(cost, max_size)
    sizes = np.bincount(gu_to_abs, minlength=abs_pos.shape[0])
    return Association(gu_to_abs, sizes, int(max_size))


def link_outage(env: Environment, abs_pos, gu_positions, params: ChannelParams):
    """Per-GU (outage probability, squared 2D distance) for one ABS position.

    The building geometry decides LoS per link; LoS links fade Rician with the
    elevation-dependent K, NLoS links fade Rayleigh.
    """
    gu_positions = np.atleast_2d(np.asarray(gu_positions, dtype=float))
    delta = gu_positions - np.asarray(abs_pos, dtype=float)[None, :]
    d2sq = (delta ** 2).sum(axis=1)
    dh = env.abs_altitude - env.gu_height
    d3d = np.sqrt(d2sq + dh * dh)
    los = los_mask(env, abs_pos, gu_positions)
    theta = np.arctan2(dh, np.sqrt(d2sq))
    k = np.where(los, rician_k(theta, params.rician_a1, params.rician_a2), 0.0)
    pl = pathloss_db(d3d, los, params.carrier_freq, env.gu_height)
    mean_snr = db_to_linear(-pl) * params.n_abs * params.transmit_snr
    p_out = outage_prob(mean_snr, k, params.snr_threshold)
    return p_out, d2sq


def throughput(p_out, cluster_size, params: ChannelParams):
    """Average per-GU throughput (1-P_out) * B/(N*M_n) * log2(1+thr)."""
    se = math.log2(1.0 + params.snr_threshold)
    return (1.0 - np.asarray(p_out, dtype=float)) * params.bandwidth_hz \
        / (params.n_abs * np.asarray(cluster_size, dtype=float)) * se


def evaluate_coverage(env: Environment, abs_pos, gu_pos, params: ChannelParams,
                      max_size=None, epsilon=0.2) -> CoverageReport:
    """Associate GUs, evaluate every link, and report per-GU coverage.

    ABS positions must be valid airspace points; max_size defaults to the
    floor((1+eps)M/N) cap.
    """
    abs_pos = np.atleast_2d(np.asarray(abs_pos, dtype=float))
    gu_pos = np.atleast_2d(np.asarray(gu_pos, dtype=float))
    n, m = abs_pos.shape[0], gu_pos.shape[0]
    if n == 0:
        raise ValueError("need at least one ABS")
    if n != params.n_abs:
        raise ValueError(f"got {n} ABS positions but params.n_abs={params.n_abs}")
    if max_size is None:
        max_size = max_cluster_size(m, n, epsilon)
    assoc = associate(abs_pos, gu_pos, max_size)
    p_out = np.empty(m, dtype=float)
    for j in range(n):
        sel = assoc.gu_to_abs == j
        if sel.any():
            p_out[sel], _ = link_outage(env, abs_pos[j], gu_pos[sel], params)
    sizes = assoc.cluster_sizes[assoc.gu_to_abs]
    rates = throughput(p_out, sizes, params)
    covered = rates >= params.rate_threshold
    return CoverageReport(covered, rates, p_out, float(covered.mean()), assoc)
