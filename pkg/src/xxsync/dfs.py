"""Decoherence-free subspace of the XX chain under amplitude damping.

A single-excitation eigenmode ``n`` is dark when it has a node on every noise
site, i.e. ``n*m_a`` is a multiple of ``N+1`` for all ``a``.  The surviving
labels are the multiples of ``(N+1)/g`` with ``g = gcd(m_1, ..., m_q, N+1)``.
Multi-excitation dark states are Slater determinants of dark modes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import reduce
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .hilbert import ChainSpec, SectorBasis, SparseOperator, build_jump_operator

__all__ = [
    "NoiseSpec",
    "DfsReport",
    "DarkState",
    "DfsBasis",
    "DarknessReport",
    "gcd_analysis",
    "single_excitation_mode",
    "mode_energy",
    "slater_state",
    "build_dfs_basis",
    "verify_darkness",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Amplitude-damping sites (1-based), decay rates and optional pumping rates.

    An empty site list describes the closed chain (purely unitary dynamics).
    """

    sites: tuple[int, ...]
    rates: tuple[float, ...]
    thermal_rates: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(int(s) for s in self.sites))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if self.thermal_rates is not None:
            object.__setattr__(self, "thermal_rates", tuple(float(r) for r in self.thermal_rates))
        if len(set(self.sites)) != len(self.sites):
            raise ValueError(f"noise sites must be distinct: {self.sites}")
        if len(self.rates) != len(self.sites):
            raise ValueError("sites and rates differ in length")
        if any(not r > 0 for r in self.rates):
            raise ValueError(f"decay rates must be strictly positive: {self.rates}")
        if self.thermal_rates is not None:
            if len(self.thermal_rates) != len(self.sites):
                raise ValueError("sites and thermal_rates differ in length")
            if any(r < 0 for r in self.thermal_rates):
                raise ValueError("thermal rates must be non-negative")

    @property
    def thermal(self) -> bool:
        return self.thermal_rates is not None and any(r > 0 for r in self.thermal_rates)

    def check_chain(self, N: int) -> None:
        bad = [s for s in self.sites if not 1 <= s <= N]
        if bad:
            raise ValueError(f"noise sites {bad} outside 1..{N}")

    @classmethod
    def uniform(cls, sites: Iterable[int], rate: float, thermal_rate: float | None = None):
        sites = tuple(sites)
        thermal = None if thermal_rate is None else (thermal_rate,) * len(sites)
        return cls(sites, (rate,) * len(sites), thermal)


@dataclass(frozen=True)
class DfsReport:
    N: int
    g: int
    r: int
    labels: tuple[int, ...]
    sector_dims: tuple[int, ...]
    total_dim: int
    generic_sync: bool
    sync_sign: int | None
    thermal: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["labels"] = list(self.labels)
        d["sector_dims"] = list(self.sector_dims)
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def gcd_analysis(noise: NoiseSpec, N: int) -> DfsReport:
    """Count and label the single-excitation dark modes.

    Under finite-temperature damping the pumping term re-excites the noise
    site, so no dark mode survives and the report is reduced to ``r = 0``
    with ``thermal=True``; ``g`` still carries the arithmetic value.
    """
    noise.check_chain(N)
    g = reduce(math.gcd, noise.sites, N + 1)
    if noise.thermal:
        return DfsReport(N, g, 0, (), (1,), 1, False, None, thermal=True)
    r = g - 1
    step = (N + 1) // g
    labels = tuple(l * step for l in range(1, g))
    sector_dims = tuple(math.comb(r, k) for k in range(r + 1))
    generic = g == 2
    sign = (-1) ** (labels[0] + 1) if generic else None
    return DfsReport(N, g, r, labels, sector_dims, 2**r, generic, sign)


def single_excitation_mode(n: int, chain: ChainSpec) -> tuple[np.ndarray, float]:
    """Amplitudes ``phi_n(1..N)`` and energy ``E_n`` of the ``n``-th hopping mode."""
    N = chain.N
    if not 1 <= n <= N:
        raise ValueError(f"mode label {n} outside 1..{N}")
    j = np.arange(1, N + 1)
    phi = math.sqrt(2.0 / (N + 1)) * np.sin(n * j * math.pi / (N + 1))
    return phi, mode_energy(n, chain)


def mode_energy(n: int, chain: ChainSpec) -> float:
    return chain.omega + 2.0 * chain.J * math.cos(n * math.pi / (chain.N + 1))


def slater_state(labels: Sequence[int], chain: ChainSpec,
                 basis: SectorBasis) -> tuple[np.ndarray, float]:
    """Antisymmetrized product of the modes ``labels`` as a ket over ``basis``.

    The amplitude on ``|i_1 < ... < i_k>`` is ``det[phi_{labels[a]}(i_b)]``;
    the label order fixes the overall sign.  The vector is renormalized
    explicitly after construction.
    """
    labels = tuple(sorted(labels)) if isinstance(labels, (set, frozenset)) else tuple(labels)
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate mode labels {labels}")
    if basis.N != chain.N:
        raise ValueError("basis and chain disagree on N")
    k = len(labels)
    sl = basis.sector_slice(k)
    psi = np.zeros(basis.dim, dtype=complex)
    if k == 0:
        psi[sl] = 1.0
        return psi, 0.0
    phis = np.array([single_excitation_mode(n, chain)[0] for n in labels])
    masks = basis.states[sl]
    occupied = np.array([[j for j in range(chain.N) if (m >> j) & 1] for m in masks])
    # minors[s, a, b] = phi_{labels[a]}(site_b of state s)
    minors = phis[:, occupied].transpose(1, 0, 2)
    amps = np.linalg.det(minors) if k > 1 else minors[:, 0, 0]
    norm = np.linalg.norm(amps)
    if norm < 1e-12:
        raise ValueError(f"Slater determinant for labels {labels} vanishes")
    psi[sl] = amps / norm
    energy = float(sum(mode_energy(n, chain) for n in labels))
    return psi, energy


@dataclass(frozen=True)
class DarkState:
    labels: tuple[int, ...]
    vector: np.ndarray = field(repr=False)
    energy: float

    @property
    def excitations(self) -> int:
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class DfsBasis:
    basis: SectorBasis
    states: tuple[DarkState, ...]
    complete: bool

    def __len__(self) -> int:
        return len(self.states)

    def vectors(self) -> np.ndarray:
        """Dark kets as the columns of a ``dim x len(self)`` matrix."""
        return np.column_stack([s.vector for s in self.states])

    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.states])

    def index(self, labels: Iterable[int]) -> int:
        key = tuple(sorted(labels))
        for i, s in enumerate(self.states):
            if s.labels == key:
                return i
        raise KeyError(f"no dark state with labels {key}")

    def sector_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for s in self.states:
            counts[s.excitations] = counts.get(s.excitations, 0) + 1
        return counts


def build_dfs_basis(report: DfsReport, chain: ChainSpec, basis: SectorBasis,
                    *, allow_truncation: bool = False) -> DfsBasis:
    """All ``2**r`` dark eigenstates, ordered by excitation number then labels.

    A basis truncated below ``r`` excitations cannot hold the whole DFS; that
    is an error unless ``allow_truncation`` is set, in which case only the
    dark states fitting inside the basis are returned (``complete=False``).
    """
    if basis.N != chain.N or report.N != chain.N:
        raise ValueError("report, chain and basis disagree on N")
    top = report.r
    if basis.kmax < top:
        if not allow_truncation:
            raise ValueError(
                f"basis truncated at kmax={basis.kmax} but the DFS reaches "
                f"{report.r} excitations"
            )
        top = basis.kmax
    states = []
    for k in range(top + 1):
        for subset in combinations(report.labels, k):
            vec, energy = slater_state(subset, chain, basis)
            states.append(DarkState(subset, vec, energy))
    return DfsBasis(basis, tuple(states), complete=top == report.r)


@dataclass(frozen=True)
class DarknessReport:
    max_lowering_residual: float
    max_energy_residual: float
    max_raising_residual: float | None
    lowering_residuals: tuple[float, ...]
    energy_residuals: tuple[float, ...]
    passed: bool


def verify_darkness(dfs: DfsBasis, noise: NoiseSpec, H: SparseOperator,
                    *, lowering_tol: float = 1e-10, energy_tol: float = 1e-9) -> DarknessReport:
    """Residuals of the dark-state conditions for every state in ``dfs``.

    When pumping is present each dark state is also tested against
    ``sigma_+`` at the noise sites.  Since a dark state has no weight on
    configurations occupying the site, ``||sigma_+ D||^2`` equals the weight
    on configurations leaving it empty, which is computed directly so the
    check does not depend on the truncation of the basis.
    """
    basis = dfs.basis
    lowers = [build_jump_operator(m, basis, "lowering") for m in noise.sites]
    low_res, e_res, up_res = [], [], []
    for state in dfs.states:
        v = state.vector
        low_res.append(max((float(np.linalg.norm(L.matrix @ v)) for L in lowers), default=0.0))
        e_res.append(float(np.linalg.norm(H.matrix @ v - state.energy * v)))
        if noise.thermal:
            per_site = []
            for m, rate in zip(noise.sites, noise.thermal_rates):
                if rate > 0:
                    empty = (basis.states & (1 << (m - 1))) == 0
                    per_site.append(float(np.linalg.norm(v[empty])))
            up_res.append(max(per_site))
    max_low = max(low_res, default=0.0)
    max_e = max(e_res, default=0.0)
    max_up = max(up_res, default=0.0) if noise.thermal else None
    passed = max_low <= lowering_tol and max_e <= energy_tol
    if max_up is not None:
        passed = passed and max_up <= lowering_tol
    return DarknessReport(max_low, max_e, max_up, tuple(low_res), tuple(e_res), passed)
