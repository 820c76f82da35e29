"""Synchronization and edge-entanglement diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .hilbert import DensityMatrix, SectorBasis

__all__ = [
    "PearsonSeries",
    "SpectrumPeaks",
    "EdgePairState",
    "pearson",
    "fft_spectrum",
    "reduce_to_edge_pair",
    "concurrence",
    "first_settling_time",
]

VARIANCE_FLOOR = 1e-24
PEAK_FRACTION = 0.05
MIN_SPECTRUM_SAMPLES = 64
PEARSON_CHUNK = 1 << 20


@dataclass(frozen=True)
class PearsonSeries:
    times: np.ndarray
    pc: np.ndarray
    valid: np.ndarray
    window: float

    def to_csv(self, path: str | Path) -> None:
        _write_columns(path, ("t", "pc"), self.times, self.pc)


@dataclass(frozen=True)
class SpectrumPeaks:
    frequencies: np.ndarray
    amplitudes: np.ndarray
    resolution: float
    grid: np.ndarray
    magnitude: np.ndarray

    def to_csv(self, path: str | Path) -> None:
        _write_columns(path, ("freq", "amplitude"), self.frequencies, self.amplitudes)

    def spectrum_to_csv(self, path: str | Path) -> None:
        _write_columns(path, ("freq", "amplitude"), self.grid, self.magnitude)


@dataclass(frozen=True)
class EdgePairState:
    """Reduced state of qubits (1, N) in the order |00>, |01>, |10>, |11>;
    the left digit is qubit 1."""

    rho4: np.ndarray


def _write_columns(path, header, *cols) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


def _uniform_step(times: np.ndarray) -> float:
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise ValueError("need at least two samples")
    steps = np.diff(times)
    dt = float(np.mean(steps))
    if not np.allclose(steps, dt, rtol=1e-6, atol=1e-12 * max(1.0, abs(times[-1]))):
        raise ValueError("time grid is not uniform")
    return dt


def pearson(times, x, y, window: float) -> PearsonSeries:
    """Centered sliding-window Pearson coefficient of ``x`` and ``y``.

    The window is given in time units and shrinks near the ends of the
    record.  Windows where ``Var(x) Var(y)`` falls below 1e-24 are marked
    invalid and carry NaN.
    """
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (x.shape == y.shape == times.shape):
        raise ValueError("x, y and times must share one grid")
    dt = _uniform_step(times)
    half = int(round(window / dt)) // 2
    if 2 * half + 1 < 10:
        raise ValueError(f"window {window} spans fewer than 10 samples")
    n = x.size
    w = 2 * half + 1
    # two-pass statistics per window; running sums lose constant windows to cancellation
    xp = np.pad(x, half, constant_values=np.nan)
    yp = np.pad(y, half, constant_values=np.nan)
    cov = np.empty(n)
    denom = np.empty(n)
    chunk = max(1, PEARSON_CHUNK // w)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        wx = sliding_window_view(xp[lo:hi + w - 1], w)
        wy = sliding_window_view(yp[lo:hi + w - 1], w)
        dx = wx - np.nanmean(wx, axis=1, keepdims=True)
        dy = wy - np.nanmean(wy, axis=1, keepdims=True)
        cov[lo:hi] = np.nanmean(dx * dy, axis=1)
        denom[lo:hi] = np.nanmean(dx * dx, axis=1) * np.nanmean(dy * dy, axis=1)
    valid = denom >= VARIANCE_FLOOR
    pc = np.full(n, np.nan)
    pc[valid] = np.clip(cov[valid] / np.sqrt(denom[valid]), -1.0, 1.0)
    return PearsonSeries(times, pc, valid, float(window))


def first_settling_time(series: PearsonSeries, target: float, tol: float) -> float | None:
    """Earliest time after which ``|pc - target| < tol`` holds for good."""
    ok = series.valid & (np.abs(series.pc - target) < tol)
    if not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    start = 0 if bad.size == 0 else bad[-1] + 1
    return float(series.times[start])


def fft_spectrum(times, values, t_start: float = 0.0) -> SpectrumPeaks:
    """Hann-windowed magnitude spectrum of ``values`` restricted to ``t >= t_start``.

    Peaks are local maxima above 5% of the largest bin, with their frequency
    refined by a parabola through the three bins around each maximum.  The
    magnitude is scaled so a sinusoid of amplitude ``A`` peaks near ``A``.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = times >= t_start
    t, v = times[keep], values[keep]
    if t.size < MIN_SPECTRUM_SAMPLES:
        raise ValueError(f"only {t.size} samples after t_start={t_start}; need {MIN_SPECTRUM_SAMPLES}")
    dt = _uniform_step(t)
    n = v.size
    w = np.hanning(n)
    mag = np.abs(np.fft.rfft((v - v.mean()) * w)) * 2.0 / w.sum()
    freqs = np.fft.rfftfreq(n, dt)
    df = float(freqs[1] - freqs[0])
    top = mag.max() if mag.size else 0.0
    peak_f, peak_a = [], []
    if top > 0:
        for k in range(1, mag.size - 1):
            if mag[k] > mag[k - 1] and mag[k] >= mag[k + 1] and mag[k] >= PEAK_FRACTION * top:
                a, b, c = mag[k - 1], mag[k], mag[k + 1]
                curv = a - 2 * b + c
                shift = 0.5 * (a - c) / curv if curv != 0 else 0.0
                peak_f.append(freqs[k] + shift * df)
                peak_a.append(b - 0.25 * (a - c) * shift)
    return SpectrumPeaks(np.array(peak_f), np.array(peak_a), df, freqs, mag)


@lru_cache(maxsize=32)
def _edge_pair_map(basis: SectorBasis) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices of all ``rho[a, b]`` with matching bulk occupation and
    the flat 4x4 slot each one lands in."""
    N = basis.N
    states = basis.states
    bulk = states & ~(1 | (1 << (N - 1)))
    edge = 2 * (states & 1) + ((states >> (N - 1)) & 1)
    order = np.argsort(bulk, kind="stable")
    bounds = np.flatnonzero(np.diff(bulk[order])) + 1
    src, dst = [], []
    for group in np.split(order, bounds):
        a, b = np.meshgrid(group, group, indexing="ij")
        src.append((a * basis.dim + b).ravel())
        dst.append((edge[a] * 4 + edge[b]).ravel())
    return np.concatenate(src), np.concatenate(dst)


def reduce_to_edge_pair(rho: DensityMatrix) -> EdgePairState:
    """Partial trace over the bulk sites 2..N-1."""
    if rho.basis.N < 3:
        raise ValueError("edge-pair reduction needs N >= 3")
    src, dst = _edge_pair_map(rho.basis)
    vals = rho.data.ravel()[src]
    out = np.bincount(dst, vals.real, 16) + 1j * np.bincount(dst, vals.imag, 16)
    return EdgePairState(out.reshape(4, 4))


_YY = np.array([[0, 0, 0, -1], [0, 0, 1, 0], [0, 1, 0, 0], [-1, 0, 0, 0]], dtype=complex)


def concurrence(pair: EdgePairState | np.ndarray, psd_tol: float = 1e-6) -> float:
    """Wootters concurrence ``max(0, l1 - l2 - l3 - l4)``.

    The ``l_i`` are square roots of the eigenvalues of ``rho (sy x sy) rho* (sy x sy)``,
    taken directly from the non-Hermitian product.
    """
    rho = pair.rho4 if isinstance(pair, EdgePairState) else np.asarray(pair, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError("concurrence needs a 4x4 two-qubit density matrix")
    lam_min = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lam_min < -psd_tol:
        raise ValueError(f"two-qubit state is not positive (min eigenvalue {lam_min:.3e})")
    flipped = _YY @ rho.conj() @ _YY
    ev = np.linalg.eigvals(rho @ flipped)
    scale = max(1.0, float(np.max(np.abs(ev))))
    if np.max(np.abs(ev.imag)) > 1e-6 * scale:
        raise ValueError(f"rho rho~ has complex eigenvalues {ev}")
    lam = np.sort(np.sqrt(np.clip(ev.real, 0.0, None)))[::-1]
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))
