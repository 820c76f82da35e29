"""GKLS time evolution on a sector-truncated density matrix.

The state is kept dense; sparsity lives in the operators.  For small bases
the operators are densified once because BLAS products beat sparse-dense
products there.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import RK45

from .dfs import NoiseSpec
from .hilbert import (
    MAX_FULL_SPACE_N,
    ChainSpec,
    DensityMatrix,
    SectorBasis,
    SparseOperator,
    build_hamiltonian,
    build_jump_operator,
    enumerate_sector,
    excitation_support,
)

log = logging.getLogger(__name__)

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "PhysicalityError",
    "PhysicalityReport",
    "LindbladGenerator",
    "lindblad_rhs",
    "jump_operators",
    "required_kmax",
    "evolve",
    "physicality_check",
    "write_snapshot",
    "read_snapshot",
]

DENSE_DIM_LIMIT = 40
TRACE_ABORT = 1e-6
SNAPSHOT_MAGIC = b"XXSNAP\x00\x01"


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.05
    t_max: float = 100.0
    record_stride: int = 1
    method: str = "rk4"
    rel_tol: float = 1e-8
    abs_tol: float = 1e-8
    snapshot_times: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))
        if not (self.dt > 0 and self.t_max > 0):
            raise ValueError("dt and t_max must be positive")
        if self.dt >= self.t_max:
            raise ValueError(f"dt={self.dt} must be smaller than t_max={self.t_max}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")
        if self.method not in ("rk4", "adaptive_rk45"):
            raise ValueError(f"unknown integrator {self.method!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


class PhysicalityError(RuntimeError):
    def __init__(self, message: str, report: "PhysicalityReport | None" = None, time: float | None = None):
        super().__init__(message)
        self.report = report
        self.time = time


@dataclass(frozen=True)
class PhysicalityReport:
    trace: float
    trace_deficit: float
    hermiticity_residual: float
    min_eigenvalue: float
    passed: bool


def physicality_check(rho: DensityMatrix | np.ndarray, tol: float = 1e-8,
                      expected_trace: float = 1.0) -> PhysicalityReport:
    """Trace, Hermiticity and positivity of ``rho`` against ``tol``."""
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    tr = complex(np.trace(data))
    herm = float(np.max(np.abs(data - data.conj().T))) if data.size else 0.0
    min_eig = float(np.linalg.eigvalsh(0.5 * (data + data.conj().T))[0])
    deficit = expected_trace - tr.real
    passed = abs(deficit) <= tol and abs(tr.imag) <= tol and herm <= tol and min_eig >= -tol
    return PhysicalityReport(tr.real, deficit, herm, min_eig, passed)


def jump_operators(noise: NoiseSpec, basis: SectorBasis) -> list[tuple[SparseOperator, float]]:
    noise.check_chain(basis.N)
    jumps = [(build_jump_operator(m, basis, "lowering"), g) for m, g in zip(noise.sites, noise.rates)]
    if noise.thermal:
        for m, g in zip(noise.sites, noise.thermal_rates):
            if g > 0:
                jumps.append((build_jump_operator(m, basis, "raising"), g))
    return jumps


def required_kmax(qubit_states: Sequence, noise: NoiseSpec, N: int) -> int:
    """Smallest truncation closed under the dynamics for this initial state.

    Damping only removes excitations, so the initial excitation support
    bounds every later state.  Pumping can fill the chain, which forces the
    full space.
    """
    if noise.thermal:
        if N > MAX_FULL_SPACE_N:
            raise ValueError(
                f"thermal noise needs the full 2^{N} space; refusing N > {MAX_FULL_SPACE_N}"
            )
        return N
    return excitation_support(qubit_states)


class LindbladGenerator:
    """Right-hand side ``-i[H, rho] + sum_i g_i (L rho L^dag - {L^dag L, rho}/2)``.

    Stored as ``-i(H_eff rho - rho H_eff^dag) + sum_i g_i L rho L^dag`` with
    ``H_eff = H - (i/2) sum_i g_i L^dag L``.  Small bases use dense BLAS
    products; larger ones keep ``H_eff`` sparse and apply single-site jumps,
    which are partial permutations, as index gathers.
    """

    def __init__(self, H: SparseOperator, jumps: Sequence[tuple[SparseOperator, float]],
                 dense: bool | None = None):
        basis = H.basis
        for L, _ in jumps:
            if not L.basis.same_as(basis):
                raise ValueError("jump operator lives on a different basis than H")
        self.basis = basis
        heff = H.matrix.astype(complex)
        for L, g in jumps:
            heff = heff - 0.5j * g * (L.matrix.conj().T @ L.matrix)
        self.dense = basis.dim <= DENSE_DIM_LIMIT if dense is None else dense
        self._gathers = []
        self._jumps = []
        if self.dense:
            self._heff = heff.toarray()
            self._jumps = [np.sqrt(g) * L.toarray() for L, g in jumps]
            self._jumps_dag = [L.conj().T for L in self._jumps]
        else:
            self._heff = sp.csr_matrix(heff)
            for L, g in jumps:
                perm = _partial_permutation(L.matrix)
                if perm is not None:
                    src, dst = perm
                    self._gathers.append((g, np.ix_(src, src), np.ix_(dst, dst)))
                else:
                    self._jumps.append(sp.csr_matrix(np.sqrt(g) * L.matrix))
            self._jumps_dag = [L.conj().T.tocsr() for L in self._jumps]
        self._heff_dag = self._heff.conj().T

    def __call__(self, rho: np.ndarray, hermitian: bool = False) -> np.ndarray:
        """Apply the generator; ``hermitian=True`` promises ``rho == rho^dag``
        and saves one product via ``rho H_eff^dag = (H_eff rho)^dag``."""
        a = self._heff @ rho
        if hermitian:
            out = -1j * (a - a.conj().T)
        elif self.dense:
            out = -1j * (a - rho @ self._heff_dag)
        else:
            out = -1j * (a - (self._heff_dag.T @ rho.T).T)
        if self.dense:
            for L, Ld in zip(self._jumps, self._jumps_dag):
                out += L @ rho @ Ld
            return out
        for g, src, dst in self._gathers:
            out[dst] += g * rho[src]
        for L, Ld in zip(self._jumps, self._jumps_dag):
            out += (Ld.T @ (L @ rho).T).T
        return out


def _partial_permutation(mat: sp.csr_matrix):
    """``(src, dst)`` if ``mat`` maps basis vectors ``src`` one-to-one onto ``dst``
    with unit amplitude, else None."""
    coo = mat.tocoo()
    if not np.all(coo.data == 1):
        return None
    if np.unique(coo.row).size != coo.nnz or np.unique(coo.col).size != coo.nnz:
        return None
    return coo.col.copy(), coo.row.copy()


def lindblad_rhs(rho: DensityMatrix, H: SparseOperator,
                 jumps: Sequence[tuple[SparseOperator, float]]) -> DensityMatrix:
    if not rho.basis.same_as(H.basis):
        raise ValueError("rho and H live on different bases")
    return DensityMatrix(rho.basis, LindbladGenerator(H, jumps)(rho.data))


@dataclass
class Trajectory:
    times: np.ndarray
    sites: tuple[int, ...]
    sigma_x: np.ndarray
    trace_drift: np.ndarray
    bright_population: np.ndarray | None = None
    concurrence: np.ndarray | None = None
    snapshots: list[tuple[float, DensityMatrix]] = field(default_factory=list)
    t_star: float | None = None
    t_star_state: DensityMatrix | None = None
    final: DensityMatrix | None = None
    min_eigenvalue: float = 0.0

    def site_series(self, site: int) -> np.ndarray:
        return self.sigma_x[:, self.sites.index(site)]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def to_csv(self, path: str | Path) -> None:
        header = ["t", *(f"sx_{s}" for s in self.sites), "trace_drift"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i, t in enumerate(self.times):
                w.writerow([_fmt(t), *(_fmt(x) for x in self.sigma_x[i]), _fmt(self.trace_drift[i])])


def _fmt(x) -> str:
    return repr(float(x))


class _SigmaXMeter:
    """<sigma_x^(k)> = 2 Re sum rho[b, a] over the lowering pairs a <- b at site k."""

    def __init__(self, basis: SectorBasis, sites: Sequence[int]):
        rows, cols, owner = [], [], []
        for n, site in enumerate(sites):
            L = build_jump_operator(site, basis, "lowering", truncate=True).matrix.tocoo()
            rows.append(L.row)
            cols.append(L.col)
            owner.append(np.full(L.nnz, n))
        self.flat = np.concatenate(cols) * basis.dim + np.concatenate(rows)
        self.owner = np.concatenate(owner)
        self.n = len(sites)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        vals = rho.ravel()[self.flat]
        return 2.0 * np.bincount(self.owner, weights=vals.real, minlength=self.n)


def evolve(rho0: DensityMatrix, chain: ChainSpec, noise: NoiseSpec, config: IntegratorConfig,
           observables: Sequence[int], *, dark_vectors: np.ndarray | None = None,
           bright_threshold: float = 1e-9, edge_concurrence: bool = False,
           check_interval: float = 10.0) -> Trajectory:
    """Integrate the master equation from ``rho0`` up to ``config.t_max``.

    Parameters
    ----------
    observables
        Sites whose ``<sigma_x>`` is recorded at every ``record_stride`` step.
    dark_vectors
        Optional ``dim x n`` matrix of orthonormal dark kets.  When given, the
        bright population ``Tr rho - Tr(P rho P)`` is recorded and the first
        recorded time where it drops below ``bright_threshold`` becomes
        ``t_star``; the state there is kept as ``t_star_state``.
    edge_concurrence
        Record the concurrence of the (1, N) qubit pair as well.
    check_interval
        Time between positivity checks.  Trace drift is checked at every
        recorded time.

    Raises
    ------
    PhysicalityError
        When the trace drifts by more than 1e-6 or the smallest eigenvalue
        falls below ``-100 * config.abs_tol``.
    """
    basis = rho0.basis
    if basis.N != chain.N:
        raise ValueError("initial state basis and chain disagree on N")
    if noise.thermal and basis.kmax < chain.N:
        raise ValueError("thermal noise requires the full Hilbert space (kmax = N)")
    H = build_hamiltonian(chain, basis)
    gen = LindbladGenerator(H, jump_operators(noise, basis))
    meter = _SigmaXMeter(basis, observables)
    if edge_concurrence:
        from .observables import concurrence, reduce_to_edge_pair

    tr0 = rho0.trace().real
    neg_limit = -100.0 * config.abs_tol
    dt = config.dt
    stride = int(config.record_stride)
    n_steps = config.n_steps
    n_rec = n_steps // stride + 1
    rec_dt = dt * stride
    check_every = max(1, int(round(check_interval / rec_dt)))
    snap_times = sorted(config.snapshot_times)
    snap_ptr = 0

    times = np.arange(n_rec) * rec_dt
    sx = np.empty((n_rec, len(observables)))
    drift = np.empty(n_rec)
    bright = np.empty(n_rec) if dark_vectors is not None else None
    conc = np.empty(n_rec) if edge_concurrence else None
    traj = Trajectory(times, tuple(observables), sx, drift, bright, conc)
    min_eig = math.inf

    def record(i: int, rho: np.ndarray) -> None:
        nonlocal snap_ptr, min_eig
        t = times[i]
        sx[i] = meter(rho)
        tr = np.trace(rho)
        drift[i] = tr.real - tr0
        if abs(tr - tr0) > TRACE_ABORT:
            raise PhysicalityError(f"trace drift {abs(tr - tr0):.3e} at t={t:g} exceeds {TRACE_ABORT}",
                                   time=t)
        if i % check_every == 0 or i == n_rec - 1:
            lam = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
            min_eig = min(min_eig, lam)
            if lam < neg_limit:
                report = physicality_check(rho, tol=-neg_limit, expected_trace=tr0)
                raise PhysicalityError(
                    f"min eigenvalue {lam:.3e} at t={t:g} below {neg_limit:.1e}", report, t)
        if bright is not None:
            dark_pop = np.real(np.einsum("ia,ij,ja->", dark_vectors.conj(), rho, dark_vectors))
            bright[i] = tr.real - dark_pop
            if traj.t_star is None and bright[i] < bright_threshold:
                traj.t_star = float(t)
                traj.t_star_state = DensityMatrix(basis, rho.copy())
        if conc is not None:
            try:
                conc[i] = concurrence(reduce_to_edge_pair(DensityMatrix(basis, rho)), psd_tol=-neg_limit)
            except ValueError as exc:
                raise PhysicalityError(f"edge-pair state at t={t:g}: {exc}", time=t) from None
        while snap_ptr < len(snap_times) and snap_times[snap_ptr] <= t + 1e-9 * rec_dt:
            traj.snapshots.append((float(t), DensityMatrix(basis, rho.copy())))
            snap_ptr += 1

    rho = np.array(rho0.data, dtype=complex)
    record(0, rho)
    if config.method == "rk4":
        half = 0.5 * dt
        sixth = dt / 6.0
        for step in range(1, n_steps + 1):
            # stages of a Hermitian state stay Hermitian under a GKLS generator
            k1 = gen(rho, True)
            k2 = gen(rho + half * k1, True)
            k3 = gen(rho + half * k2, True)
            k4 = gen(rho + dt * k3, True)
            rho = rho + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if step % stride == 0:
                record(step // stride, rho)
    else:
        rho = _run_adaptive(gen, rho, times, config, record)

    traj.final = DensityMatrix(basis, rho)
    traj.min_eigenvalue = min_eig
    return traj


def _run_adaptive(gen, rho, times, config, record):
    dim = rho.shape[0]

    def fun(_t, y):
        return gen(y.reshape(dim, dim)).ravel()

    solver = RK45(fun, 0.0, rho.ravel().copy(), times[-1], rtol=config.rel_tol,
                  atol=config.abs_tol, first_step=min(config.dt, times[-1]))
    i = 1
    while i < len(times):
        msg = solver.step()
        if solver.status == "failed":
            raise PhysicalityError(f"adaptive integrator failed: {msg}", time=solver.t)
        interp = solver.dense_output()
        while i < len(times) and times[i] <= solver.t:
            y = solver.y if times[i] == solver.t else interp(times[i])
            record(i, y.reshape(dim, dim))
            i += 1
    return solver.y.reshape(dim, dim)


def write_snapshot(path: str | Path, time: float, rho: DensityMatrix) -> None:
    """Binary layout, all little-endian: 8-byte magic, u64 N, u64 n_sectors,
    u64 sectors[n_sectors], u64 dim, f64 time, then ``dim*dim`` (re, im)
    f64 pairs in row-major order."""
    basis = rho.basis
    head = SNAPSHOT_MAGIC + struct.pack("<QQ", basis.N, len(basis.sectors))
    head += struct.pack(f"<{len(basis.sectors)}Q", *basis.sectors)
    head += struct.pack("<Qd", basis.dim, float(time))
    body = np.ascontiguousarray(rho.data, dtype="<c16").tobytes()
    Path(path).write_bytes(head + body)


def read_snapshot(path: str | Path) -> tuple[float, DensityMatrix]:
    raw = Path(path).read_bytes()
    if raw[:8] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    N, nsec = struct.unpack_from("<QQ", raw, 8)
    off = 24
    sectors = struct.unpack_from(f"<{nsec}Q", raw, off)
    off += 8 * nsec
    dim, time = struct.unpack_from("<Qd", raw, off)
    off += 16
    if tuple(sectors) != tuple(range(len(sectors))):
        raise ValueError(f"{path}: unsupported sector layout {sectors}")
    basis = enumerate_sector(int(N), int(sectors[-1]))
    if basis.dim != dim:
        raise ValueError(f"{path}: dim {dim} inconsistent with basis dim {basis.dim}")
    data = np.frombuffer(raw, dtype="<c16", count=dim * dim, offset=off).reshape(dim, dim)
    return float(time), DensityMatrix(basis, data.astype(complex))
