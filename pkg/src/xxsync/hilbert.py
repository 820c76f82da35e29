"""Excitation-sector bases and sparse operators for an open XX chain.

States are occupation bitmasks: bit ``j-1`` set means site ``j`` is excited.
A :class:`SectorBasis` covers the excitation sectors ``0..kmax``; within a
sector the masks are sorted ascending, sectors are stacked in ascending order.

The Hamiltonian drops the constant ``-N*omega/2`` so that the ground state has
energy zero and every configuration in sector ``k`` sits at ``omega*k`` on the
diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ChainSpec",
    "SectorBasis",
    "DensityMatrix",
    "SparseOperator",
    "enumerate_sector",
    "build_hamiltonian",
    "build_jump_operator",
    "build_sigma_x",
    "excitation_support",
    "product_state_vector",
    "embed_product_state",
    "QUBIT_PRESETS",
]

MAX_FULL_SPACE_N = 14

_SQRT_HALF = 1.0 / math.sqrt(2.0)
QUBIT_PRESETS: dict[str, tuple[complex, complex]] = {
    "zero": (1.0, 0.0),
    "one": (0.0, 1.0),
    "plus": (_SQRT_HALF, _SQRT_HALF),
    "minus": (_SQRT_HALF, -_SQRT_HALF),
}


@dataclass(frozen=True)
class ChainSpec:
    """Open XX chain of ``N`` qubits with on-site frequency ``omega`` and hopping ``J``."""

    N: int
    omega: float
    J: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"chain needs N >= 2 qubits, got {self.N!r}")
        if not (math.isfinite(self.omega) and math.isfinite(self.J)):
            raise ValueError("omega and J must be finite")


@dataclass(frozen=True, eq=False)
class SectorBasis:
    N: int
    sectors: tuple[int, ...]
    states: np.ndarray
    offsets: tuple[int, ...]
    _sorted_masks: np.ndarray = field(repr=False)
    _sorted_pos: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return int(self.states.size)

    @property
    def kmax(self) -> int:
        return self.sectors[-1]

    def sector_slice(self, k: int) -> slice:
        """Index range of sector ``k`` in the dense ordering."""
        try:
            pos = self.sectors.index(k)
        except ValueError:
            raise KeyError(f"sector {k} not in basis (sectors {self.sectors})") from None
        return slice(self.offsets[pos], self.offsets[pos + 1])

    def lookup(self, masks) -> np.ndarray:
        """Dense indices of ``masks``; -1 where a mask is not in the basis."""
        masks = np.asarray(masks, dtype=np.int64)
        pos = np.searchsorted(self._sorted_masks, masks)
        pos = np.clip(pos, 0, self.dim - 1)
        hit = self._sorted_masks[pos] == masks
        return np.where(hit, self._sorted_pos[pos], -1)

    def index_of(self, mask: int) -> int:
        idx = int(self.lookup([mask])[0])
        if idx < 0:
            raise KeyError(f"mask {mask:#b} not in basis")
        return idx

    def excitations(self) -> np.ndarray:
        return _popcount(self.states)

    def same_as(self, other: "SectorBasis") -> bool:
        return self is other or (
            self.N == other.N and self.sectors == other.sectors
        )

    def describe(self) -> dict:
        return {"N": self.N, "sectors": list(self.sectors), "dim": self.dim}


def _popcount(masks: np.ndarray) -> np.ndarray:
    masks = np.asarray(masks, dtype=np.int64)
    count = np.zeros(masks.shape, dtype=np.int64)
    m = masks.copy()
    while np.any(m):
        count += m & 1
        m >>= 1
    return count


def enumerate_sector(N: int, kmax: int) -> SectorBasis:
    """Basis spanning the excitation sectors ``0..kmax`` of an ``N``-site chain."""
    if N < 1 or N > 62:
        raise ValueError(f"N={N} outside the supported range 1..62")
    if not 0 <= kmax <= N:
        raise ValueError(f"kmax={kmax} must lie in 0..{N}")
    chunks = []
    offsets = [0]
    for k in range(kmax + 1):
        masks = sorted(sum(1 << s for s in sites) for sites in combinations(range(N), k))
        chunks.append(np.asarray(masks, dtype=np.int64))
        offsets.append(offsets[-1] + len(masks))
    states = np.concatenate(chunks)
    order = np.argsort(states, kind="stable")
    return SectorBasis(
        N=N,
        sectors=tuple(range(kmax + 1)),
        states=states,
        offsets=tuple(offsets),
        _sorted_masks=states[order],
        _sorted_pos=order,
    )


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    basis: SectorBasis
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(
                f"density matrix shape {self.data.shape} does not match basis dim {self.basis.dim}"
            )

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def purity(self) -> float:
        return float(np.real(np.vdot(self.data.conj().T, self.data)))


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Operator on a :class:`SectorBasis` that shifts excitation number by ``delta``."""

    basis: SectorBasis
    matrix: sp.csr_matrix
    delta: int
    label: str = ""

    @property
    def H(self) -> "SparseOperator":
        return SparseOperator(self.basis, self.matrix.conj().T.tocsr(), -self.delta, self.label + "^dag")

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self.basis, (self.matrix @ other.matrix).tocsr(),
                                  self.delta + other.delta)
        return self.matrix @ other


def _coo_to_csr(rows, cols, vals, dim) -> sp.csr_matrix:
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=complex).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


def build_hamiltonian(chain: ChainSpec, basis: SectorBasis) -> SparseOperator:
    """XX Hamiltonian with ground-state energy fixed at zero."""
    if basis.N != chain.N:
        raise ValueError(f"basis built for N={basis.N}, chain has N={chain.N}")
    states = basis.states
    idx = np.arange(basis.dim)
    rows = [idx]
    cols = [idx]
    vals = [chain.omega * basis.excitations().astype(float)]
    for j in range(chain.N - 1):
        pair = (1 << j) | (1 << (j + 1))
        hop = ((states >> j) & 1) != ((states >> (j + 1)) & 1)
        src = idx[hop]
        dst = basis.lookup(states[hop] ^ pair)
        # hopping conserves excitation number, so the partner is always present
        rows.append(dst)
        cols.append(src)
        vals.append(np.full(src.size, chain.J, dtype=float))
    mat = _coo_to_csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), basis.dim)
    return SparseOperator(basis, mat, 0, "H")


def build_jump_operator(site: int, basis: SectorBasis, kind: str = "lowering",
                        *, truncate: bool = False) -> SparseOperator:
    """sigma_- (``kind="lowering"``) or sigma_+ (``"raising"``) at ``site`` (1-based).

    With ``truncate=True`` matrix elements leading out of the basis are
    dropped instead of raising; only observables should use that.
    """
    if not 1 <= site <= basis.N:
        raise ValueError(f"site {site} outside 1..{basis.N}")
    if kind not in ("lowering", "raising"):
        raise ValueError(f"unknown jump kind {kind!r}")
    bit = 1 << (site - 1)
    occupied = (basis.states & bit) != 0
    src = np.flatnonzero(occupied if kind == "lowering" else ~occupied)
    dst = basis.lookup(basis.states[src] ^ bit)
    missing = dst < 0
    if np.any(missing):
        if not truncate:
            lost = sorted(set(basis.excitations()[src[missing]].tolist()))
            raise ValueError(
                f"{kind} at site {site} leaves the basis from sectors {lost}; "
                "target sector missing"
            )
        src, dst = src[~missing], dst[~missing]
    mat = _coo_to_csr(dst, src, np.ones(src.size), basis.dim)
    delta = -1 if kind == "lowering" else 1
    name = "sm" if kind == "lowering" else "sp"
    return SparseOperator(basis, mat, delta, f"{name}_{site}")


def build_sigma_x(site: int, basis: SectorBasis) -> SparseOperator:
    """sigma_x at ``site``; raising elements out of the top sector are dropped."""
    low = build_jump_operator(site, basis, "lowering")
    mat = (low.matrix + low.matrix.T).tocsr()
    mat.sort_indices()
    return SparseOperator(basis, mat, 0, f"sx_{site}")


def _as_qubit(state) -> tuple[complex, complex]:
    if isinstance(state, str):
        try:
            return QUBIT_PRESETS[state]
        except KeyError:
            raise ValueError(f"unknown qubit preset {state!r}") from None
    a, b = state
    return complex(a), complex(b)


def excitation_support(qubit_states: Sequence) -> int:
    """Number of qubits with a nonzero excited amplitude."""
    return sum(1 for q in qubit_states if _as_qubit(q)[1] != 0)


def product_state_vector(qubit_states: Sequence, basis: SectorBasis) -> np.ndarray:
    """Ket of a product state expressed in ``basis``.

    Raises if the state has weight outside the truncated sectors.
    """
    if len(qubit_states) != basis.N:
        raise ValueError(f"expected {basis.N} qubit states, got {len(qubit_states)}")
    amps = [_as_qubit(q) for q in qubit_states]
    for j, (a, b) in enumerate(amps, start=1):
        norm = abs(a) ** 2 + abs(b) ** 2
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"qubit {j} state not normalized (norm^2 = {norm})")
    support = [j for j, (_, b) in enumerate(amps) if b != 0]
    if len(support) > basis.kmax:
        raise ValueError(
            f"initial state has {len(support)} excitable qubits but the basis is "
            f"truncated at kmax={basis.kmax}; rebuild with kmax >= {len(support)}"
        )
    psi = np.zeros(basis.dim, dtype=complex)
    for k in range(len(support) + 1):
        for chosen in combinations(support, k):
            amp = complex(1.0)
            for j, (a, b) in enumerate(amps):
                amp *= b if j in chosen else a
            if amp != 0:
                psi[basis.index_of(sum(1 << j for j in chosen))] = amp
    return psi


def embed_product_state(qubit_states: Sequence, basis: SectorBasis) -> DensityMatrix:
    psi = product_state_vector(qubit_states, basis)
    return DensityMatrix(basis, np.outer(psi, psi.conj()))
