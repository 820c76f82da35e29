"""Asymptotic dynamics inside the decoherence-free subspace.

Once every bright component has decayed, the state evolves unitarily inside
the DFS and each local expectation value becomes

    <sx_k(t)> = 2 Re sum_{mu, nu} rho_inf[nu, mu] X_k[mu, nu] exp(-i (E_nu - E_mu) t),

summed over dark pairs with ``n(nu) = n(mu) + 1`` and ``X_k = <mu|sx_k|nu>``.
This module tabulates those transitions, builds ``rho_inf``, classifies the
edge synchronization and provides a dense Liouvillian oracle for small chains.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .dfs import DfsBasis, DfsReport, NoiseSpec
from .hilbert import (
    ChainSpec,
    DensityMatrix,
    build_jump_operator,
    enumerate_sector,
    excitation_support,
    product_state_vector,
)

__all__ = [
    "Transition",
    "TransitionTable",
    "AsymptoticState",
    "SyncReason",
    "SyncVerdict",
    "transition_table",
    "asymptotic_state",
    "closed_form_series",
    "classify_synchronization",
    "asymptotic_concurrence",
    "dense_liouvillian",
    "kron_to_sector_permutation",
    "liouvillian_peripheral_spectrum",
    "PeripheralSpectrum",
]

MATRIX_ELEMENT_FLOOR = 1e-12
PERIPHERAL_THRESHOLD = 1e-9
MAX_ORACLE_N = 6
AMPLITUDE_FLOOR = 1e-8


@dataclass(frozen=True)
class Transition:
    mu: int
    nu: int
    frequency: float
    x: dict[int, float]

    def to_dict(self) -> dict:
        return {"mu": self.mu, "nu": self.nu, "frequency": self.frequency,
                "x": {str(k): v for k, v in self.x.items()}}


@dataclass(frozen=True)
class TransitionTable:
    dfs: DfsBasis = field(repr=False)
    sites: tuple[int, ...]
    entries: tuple[Transition, ...]

    def frequencies(self) -> list[float]:
        return [e.frequency for e in self.entries]

    def to_dict(self) -> dict:
        labels = [list(s.labels) for s in self.dfs.states]
        return {"sites": list(self.sites), "states": labels,
                "energies": self.dfs.energies().tolist(),
                "entries": [e.to_dict() for e in self.entries]}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def transition_table(dfs: DfsBasis, sites: Sequence[int]) -> TransitionTable:
    """All dark pairs one excitation apart with their ``<mu|sx_k|nu>`` elements.

    Only the lowering half of ``sx`` connects ``nu`` down to ``mu``, so the
    elements are computed as ``<mu| sm_k |nu>``.  Entries whose elements are
    all below 1e-12 are dropped; degenerate frequencies stay separate.
    """
    basis = dfs.basis
    sites = tuple(sites)
    lowers = {k: build_jump_operator(k, basis, "lowering").matrix for k in sites}
    vecs = dfs.vectors() if len(dfs) else np.zeros((basis.dim, 0))
    energies = dfs.energies()
    n_exc = [s.excitations for s in dfs.states]
    entries = []
    for nu, state in enumerate(dfs.states):
        if state.excitations == 0:
            continue
        lowered = {k: lowers[k] @ state.vector for k in sites}
        for mu in range(len(dfs)):
            if n_exc[mu] != n_exc[nu] - 1:
                continue
            x = {k: float(np.real(np.vdot(vecs[:, mu], lowered[k]))) for k in sites}
            if max(abs(v) for v in x.values()) < MATRIX_ELEMENT_FLOOR:
                continue
            entries.append(Transition(mu, nu, float(energies[nu] - energies[mu]), x))
    return TransitionTable(dfs, sites, tuple(entries))


@dataclass(frozen=True)
class AsymptoticState:
    """Dark-basis block of the asymptotic state.

    ``t0`` is the time at which ``coherences`` hold; the closed-form clock
    runs from there.
    """

    dfs: DfsBasis = field(repr=False)
    coherences: np.ndarray
    source: str
    t0: float = 0.0

    def element(self, nu_labels, mu_labels) -> complex:
        return complex(self.coherences[self.dfs.index(nu_labels), self.dfs.index(mu_labels)])


def asymptotic_state(dfs: DfsBasis, *, initial=None, snapshot: DensityMatrix | None = None,
                     t0: float = 0.0) -> AsymptoticState:
    """``rho_inf = P rho P`` on the dark basis.

    Analytic mode (``initial`` = list of single-qubit states) is restricted to
    product states with at most one excitable qubit: their bright part can
    only decay into the ground-state population, which is credited to
    ``|G><G|`` so the trace stays one.  Anything else must go through
    ``snapshot``, the simulated state at ``t0``.
    """
    if (initial is None) == (snapshot is None):
        raise ValueError("give exactly one of initial or snapshot")
    V = dfs.vectors()
    if snapshot is not None:
        if not snapshot.basis.same_as(dfs.basis):
            raise ValueError("snapshot and DFS basis differ")
        rho_inf = V.conj().T @ snapshot.data @ V
        return AsymptoticState(dfs, rho_inf, "empirical", float(t0))
    if excitation_support(initial) > 1:
        raise ValueError(
            "analytic asymptotic state needs an initial state within sectors 0..1; "
            "multi-excitation bright components can feed dark coherences; use a snapshot"
        )
    psi = product_state_vector(initial, dfs.basis)
    amps = V.conj().T @ psi
    rho_inf = np.outer(amps, amps.conj())
    g = dfs.index(())
    rho_inf[g, g] += 1.0 - float(np.sum(np.abs(amps) ** 2))
    return AsymptoticState(dfs, rho_inf, "analytic", 0.0)


def closed_form_series(state: AsymptoticState, table: TransitionTable, site: int, times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if state.dfs is not table.dfs:
        raise ValueError("asymptotic state and transition table use different DFS bases")
    if site not in table.sites:
        raise ValueError(f"site {site} not tabulated (sites {table.sites})")
    tau = times - state.t0
    out = np.zeros(times.shape, dtype=complex)
    for e in table.entries:
        weight = state.coherences[e.nu, e.mu] * e.x[site]
        if weight != 0:
            out += weight * np.exp(-1j * e.frequency * tau)
    return 2.0 * out.real


class SyncReason(str, Enum):
    unique_dark_mode = "unique_dark_mode"
    conflicting_matrix_elements = "conflicting_matrix_elements"
    empty_dfs = "empty_dfs"


@dataclass(frozen=True)
class SyncVerdict:
    generic: bool
    constant_C: int | None
    frequencies: tuple[float, ...]
    reason: SyncReason
    conflicts: tuple[tuple[int, int, int, int], ...] = ()
    amplitudes: dict[float, tuple[float, float]] | None = None
    degenerate: bool = False

    def to_dict(self) -> dict:
        d = {
            "generic": self.generic,
            "constant_C": self.constant_C,
            "frequencies": list(self.frequencies),
            "reason": self.reason.value,
            "conflicts": [list(c) for c in self.conflicts],
            "degenerate": self.degenerate,
        }
        if self.amplitudes is not None:
            d["amplitudes"] = [{"frequency": f, "edge_1": a, "edge_N": b}
                               for f, (a, b) in self.amplitudes.items()]
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _edge_ratio_sign(e: Transition, first: int, last: int) -> int:
    a, b = e.x[first], e.x[last]
    if abs(a) < MATRIX_ELEMENT_FLOOR or abs(b) < MATRIX_ELEMENT_FLOOR:
        return 0
    return 1 if a * b > 0 else -1


def classify_synchronization(report: DfsReport, table: TransitionTable,
                             state: AsymptoticState | None = None,
                             freq_tol: float = 1e-9) -> SyncVerdict:
    """Generic edge synchronization holds exactly when ``g == 2``.

    Otherwise the verdict lists the transition frequencies and, per
    frequency, the pairs of transitions whose edge elements disagree in
    relative sign (``(mu1, nu1, mu2, nu2)``).  With ``state`` given, the
    edge amplitude at each frequency is reported and the verdict is flagged
    degenerate when an edge amplitude stays below 1e-8.
    """
    first, last = 1, report.N
    if first not in table.sites or last not in table.sites:
        raise ValueError("transition table must include both edge sites")
    amplitudes = None
    degenerate = False
    if state is not None:
        amplitudes = {}
        for e in table.entries:
            key = _group_key(amplitudes, e.frequency, freq_tol)
            rho = state.coherences[e.nu, e.mu]
            a, b = amplitudes.get(key, (0j, 0j))
            amplitudes[key] = (a + rho * e.x[first], b + rho * e.x[last])
        amplitudes = {f: (2 * float(abs(a)), 2 * float(abs(b))) for f, (a, b) in amplitudes.items()}
        degenerate = bool(amplitudes) and bool(
            max(a for a, _ in amplitudes.values()) < AMPLITUDE_FLOOR
            or max(b for _, b in amplitudes.values()) < AMPLITUDE_FLOOR)

    if report.r == 0:
        return SyncVerdict(False, None, (), SyncReason.empty_dfs, (), amplitudes, degenerate)
    if report.generic_sync:
        alpha = report.labels[0]
        energy = table.dfs.states[table.dfs.index((alpha,))].energy
        return SyncVerdict(True, (-1) ** (alpha + 1), (energy,), SyncReason.unique_dark_mode,
                           (), amplitudes, degenerate)
    conflicts = []
    entries = list(table.entries)
    for i, e1 in enumerate(entries):
        s1 = _edge_ratio_sign(e1, first, last)
        for e2 in entries[i + 1:]:
            if abs(e1.frequency - e2.frequency) > freq_tol:
                continue
            s2 = _edge_ratio_sign(e2, first, last)
            if s1 and s2 and s1 != s2:
                conflicts.append((e1.mu, e1.nu, e2.mu, e2.nu))
    freqs = tuple(sorted(e.frequency for e in entries))
    return SyncVerdict(False, None, freqs, SyncReason.conflicting_matrix_elements,
                       tuple(conflicts), amplitudes, degenerate)


def _group_key(groups: dict, f: float, tol: float) -> float:
    for key in groups:
        if abs(key - f) <= tol:
            return key
    return f


def asymptotic_concurrence(state: AsymptoticState, report: DfsReport) -> float:
    """Edge concurrence ``4 |rho_DD| / (N + 1)`` of a two-state DFS ``{G, D}``."""
    if report.g != 2 or report.thermal:
        raise ValueError("closed-form edge concurrence holds only for g == 2")
    rho_dd = state.element(report.labels, report.labels)
    return 4.0 * abs(rho_dd) / (report.N + 1)


# -- dense Liouvillian oracle -------------------------------------------------

_SM = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1| : lowers |1> (excited) to |0>
_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def _site_op(op: np.ndarray, site: int, N: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for j in range(1, N + 1):
        out = np.kron(out, op if j == site else np.eye(2))
    return out


def _kron_hamiltonian(chain: ChainSpec) -> np.ndarray:
    N = chain.N
    H = sum(-0.5 * chain.omega * _site_op(_SZ, j, N) for j in range(1, N + 1))
    for j in range(1, N):
        H = H + 0.5 * chain.J * (_site_op(_SX, j, N) @ _site_op(_SX, j + 1, N)
                                 + _site_op(_SY, j, N) @ _site_op(_SY, j + 1, N))
    return H


def dense_liouvillian(chain: ChainSpec, noise: NoiseSpec) -> np.ndarray:
    """Full ``4^N x 4^N`` GKLS superoperator in the tensor-product basis.

    Built from Pauli Kronecker products, including the ``-omega/2 sz`` terms,
    with row-major vectorization ``vec(A rho B) = (A kron B^T) vec(rho)``.
    Qubit 1 is the most significant tensor factor and ``|1>`` is excited.
    """
    N = chain.N
    if N > MAX_ORACLE_N:
        raise ValueError(f"dense Liouvillian limited to N <= {MAX_ORACLE_N}")
    noise.check_chain(N)
    H = _kron_hamiltonian(chain)
    eye = np.eye(2**N)
    sup = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    jumps = [(_site_op(_SM, m, N), g) for m, g in zip(noise.sites, noise.rates)]
    if noise.thermal_rates is not None:
        jumps += [(_site_op(_SM.T, m, N), g) for m, g in zip(noise.sites, noise.thermal_rates) if g > 0]
    for L, g in jumps:
        LdL = L.conj().T @ L
        sup += g * (np.kron(L, L.conj()) - 0.5 * np.kron(LdL, eye) - 0.5 * np.kron(eye, LdL.T))
    return sup


def kron_to_sector_permutation(N: int) -> np.ndarray:
    """``perm[i]`` = tensor-product index of the full-space sector-basis state ``i``."""
    basis = enumerate_sector(N, N)
    perm = np.zeros(basis.dim, dtype=np.int64)
    for i, mask in enumerate(basis.states):
        # site j (bit j-1) is tensor factor j, counted from the most significant end
        perm[i] = sum(1 << (N - j) for j in range(1, N + 1) if (int(mask) >> (j - 1)) & 1)
    return perm


@dataclass(frozen=True)
class PeripheralSpectrum:
    eigenvalues: np.ndarray
    count: int

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("re", "im"))
            for lam in self.eigenvalues:
                w.writerow((repr(float(lam.real)), repr(float(lam.imag))))


def liouvillian_peripheral_spectrum(chain: ChainSpec, noise: NoiseSpec,
                                    threshold: float = PERIPHERAL_THRESHOLD) -> PeripheralSpectrum:
    """Eigenvalues of the dense Liouvillian with ``|Re| < threshold``, sorted by
    imaginary then real part."""
    lam = np.linalg.eigvals(dense_liouvillian(chain, noise))
    keep = lam[np.abs(lam.real) < threshold]
    keep = keep[np.lexsort((keep.real, keep.imag))]
    return PeripheralSpectrum(keep, int(keep.size))
