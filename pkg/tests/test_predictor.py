import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xxsync.dfs import NoiseSpec, build_dfs_basis, gcd_analysis, mode_energy, single_excitation_mode
from xxsync.dynamics import IntegratorConfig, evolve
from xxsync.hilbert import ChainSpec, DensityMatrix, embed_product_state, enumerate_sector
from xxsync.observables import concurrence, reduce_to_edge_pair
from xxsync.predictor import (
    AsymptoticState,
    SyncReason,
    asymptotic_concurrence,
    asymptotic_state,
    classify_synchronization,
    closed_form_series,
    dense_liouvillian,
    kron_to_sector_permutation,
    liouvillian_peripheral_spectrum,
    transition_table,
)

from .oracles import liouvillian, sector_order

CHAIN = ChainSpec(11, 0.4, 0.15)
FIG1A = NoiseSpec.uniform([6], 0.05)
FIG1B = NoiseSpec.uniform([2, 4, 6, 8, 10], 0.05)
PLUS = ["plus"] + ["zero"] * 10


def dfs_for(noise, chain=CHAIN, kmax=None):
    rep = gcd_analysis(noise, chain.N)
    b = enumerate_sector(chain.N, rep.r if kmax is None else kmax)
    return rep, build_dfs_basis(rep, chain, b, allow_truncation=True)


def test_ground_to_single_elements():
    rep, dfs = dfs_for(FIG1A, kmax=1)
    table = transition_table(dfs, [1, 11])
    assert len(table.entries) == 5
    for e in table.entries:
        alpha = dfs.states[e.nu].labels[0]
        phi = single_excitation_mode(alpha, CHAIN)[0]
        assert dfs.states[e.mu].labels == ()
        assert e.x[1] == pytest.approx(phi[0], abs=1e-14)
        assert e.frequency == pytest.approx(mode_energy(alpha, CHAIN), abs=1e-12)
    s3 = math.sqrt(3)
    np.testing.assert_allclose(sorted(table.frequencies()),
                               sorted([0.4 + s3 * 0.15, 0.55, 0.4, 0.25, 0.4 - s3 * 0.15]), atol=1e-10)


def test_selection_rule_and_frequency_closure():
    rep, dfs = dfs_for(FIG1A)
    singles = [mode_energy(n, CHAIN) for n in rep.labels]
    table = transition_table(dfs, [1, 11])
    for e in table.entries:
        assert dfs.states[e.nu].excitations == dfs.states[e.mu].excitations + 1
        assert min(abs(e.frequency - E) for E in singles) < 1e-10
        assert all(isinstance(v, float) for v in e.x.values())
    # an interior sigma_- also links D_bc to D_a with a not in {b, c}
    interior = transition_table(dfs, [3])
    odd = [e for e in interior.entries if min(abs(e.frequency - E) for E in singles) > 1e-6]
    assert odd
    for e in odd:
        assert not set(dfs.states[e.mu].labels) <= set(dfs.states[e.nu].labels)


def _check_laws(N, sites):
    chain = ChainSpec(N, 0.4, 0.15)
    rep = gcd_analysis(NoiseSpec.uniform(sites, 0.1), N)
    if rep.r == 0:
        return 0
    b = enumerate_sector(N, min(rep.r, 2))
    dfs = build_dfs_basis(rep, chain, b, allow_truncation=True)
    table = transition_table(dfs, [1, N])
    by_pair = {(dfs.states[e.mu].labels, dfs.states[e.nu].labels): e for e in table.entries}
    for a in rep.labels:
        e = by_pair[((), (a,))]
        assert abs(e.x[1] - (-1) ** (a + 1) * e.x[N]) < 1e-12
    for a in rep.labels:
        phi = single_excitation_mode(a, chain)[0]
        for beta in rep.labels:
            if beta == a:
                continue
            e = by_pair[((beta,), tuple(sorted((a, beta))))]
            # the sorted-label determinant carries the sign of ordering alpha first
            sign = 1 if a < beta else -1
            assert abs(sign * e.x[1] - phi[0]) < 1e-10
            assert abs(sign * e.x[N] + phi[N - 1]) < 1e-10
    return rep.r


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 15), st.data())
def test_parity_and_conflict_laws(N, data):
    sites = data.draw(st.lists(st.integers(1, N), min_size=1, max_size=3, unique=True))
    _check_laws(N, sites)


def test_analytic_asymptotic_state():
    rep, dfs = dfs_for(FIG1A, kmax=1)
    state = asymptotic_state(dfs, initial=PLUS)
    for a in rep.labels:
        phi = single_excitation_mode(a, CHAIN)[0]
        assert state.element((a,), (a,)).real == pytest.approx(phi[0] ** 2 / 2, abs=1e-14)
    assert np.trace(state.coherences).real == pytest.approx(1.0, abs=1e-14)
    rep, dfs = dfs_for(FIG1B)
    state = asymptotic_state(dfs, initial=PLUS)
    assert state.element((6,), (6,)).real == pytest.approx(1 / 12, abs=1e-14)
    ground = asymptotic_state(dfs, initial=["zero"] * 11)
    expected = np.zeros((2, 2))
    expected[0, 0] = 1
    np.testing.assert_allclose(ground.coherences, expected, atol=1e-15)


def test_analytic_mode_rejects_two_excitation_support():
    _, dfs = dfs_for(FIG1A, kmax=2)
    with pytest.raises(ValueError, match="snapshot"):
        asymptotic_state(dfs, initial=["plus", "minus"] + ["zero"] * 9)
    with pytest.raises(ValueError):
        asymptotic_state(dfs)


def test_empirical_state_trace_is_dark_population():
    N = 5
    chain = ChainSpec(N, 0.4, 0.15)
    noise = NoiseSpec.uniform([3], 0.2)
    rep, dfs = dfs_for(noise, chain, kmax=2)
    rho0 = embed_product_state(["plus", "minus", "zero", "zero", "zero"], dfs.basis)
    traj = evolve(rho0, chain, noise, IntegratorConfig(dt=0.05, t_max=150.0, record_stride=10), [1, N],
                  dark_vectors=dfs.vectors(), bright_threshold=1e-3, check_interval=50.0)
    state = asymptotic_state(dfs, snapshot=traj.t_star_state, t0=traj.t_star)
    assert state.source == "empirical" and state.t0 == traj.t_star
    i = int(np.searchsorted(traj.times, traj.t_star))
    assert np.trace(state.coherences).real == pytest.approx(1 - traj.bright_population[i], abs=1e-12)
    V = dfs.vectors()
    np.testing.assert_allclose(V @ state.coherences @ V.conj().T,
                               V @ V.conj().T @ traj.t_star_state.data @ V @ V.conj().T, atol=1e-14)


def test_closed_form_from_ground_is_zero():
    _, dfs = dfs_for(FIG1A, kmax=1)
    state = asymptotic_state(dfs, initial=["zero"] * 11)
    table = transition_table(dfs, [1, 11])
    assert np.all(closed_form_series(state, table, 1, np.linspace(0, 100, 50)) == 0)


def test_closed_form_single_frequency():
    _, dfs = dfs_for(FIG1B)
    state = asymptotic_state(dfs, initial=PLUS)
    table = transition_table(dfs, [1, 11])
    t = np.linspace(0, 200, 400)
    np.testing.assert_allclose(closed_form_series(state, table, 1, t), np.cos(0.4 * t) / 6, atol=1e-14)
    np.testing.assert_allclose(closed_form_series(state, table, 11, t), -np.cos(0.4 * t) / 6, atol=1e-14)
    with pytest.raises(ValueError):
        closed_form_series(state, table, 5, t)


def test_verdicts():
    rep, dfs = dfs_for(FIG1B)
    table = transition_table(dfs, [1, 11])
    v = classify_synchronization(rep, table, asymptotic_state(dfs, initial=PLUS))
    assert v.generic and v.constant_C == -1 and v.reason is SyncReason.unique_dark_mode
    assert v.frequencies == pytest.approx((0.4,))
    assert not v.degenerate

    rep, dfs = dfs_for(FIG1A)
    v = classify_synchronization(rep, transition_table(dfs, [1, 11]))
    assert not v.generic and v.reason is SyncReason.conflicting_matrix_elements
    assert len(set(round(f, 9) for f in v.frequencies)) == 5
    assert v.conflicts

    rep, dfs = dfs_for(NoiseSpec.uniform([1], 0.05))
    v = classify_synchronization(rep, transition_table(dfs, [1, 11]))
    assert v.reason is SyncReason.empty_dfs and v.frequencies == ()


def test_degenerate_flag_for_vanishing_edge_amplitude():
    rep, dfs = dfs_for(FIG1B)
    state = asymptotic_state(dfs, initial=["zero"] * 11)
    v = classify_synchronization(rep, transition_table(dfs, [1, 11]), state)
    assert v.degenerate


def test_json_serialization():
    rep, dfs = dfs_for(FIG1B)
    table = transition_table(dfs, [1, 11])
    d = json.loads(table.to_json())
    assert d["entries"][0]["frequency"] == pytest.approx(0.4)
    v = json.loads(classify_synchronization(rep, table, asymptotic_state(dfs, initial=PLUS)).to_json())
    assert v["generic"] is True and v["reason"] == "unique_dark_mode"


def test_asymptotic_concurrence_formula():
    rep, dfs = dfs_for(FIG1B)
    state = asymptotic_state(dfs, initial=PLUS)
    assert asymptotic_concurrence(state, rep) == pytest.approx(4 / 144, abs=1e-15)
    zero = AsymptoticState(dfs, np.diag([1.0, 0.0]).astype(complex), "analytic")
    assert asymptotic_concurrence(zero, rep) == 0
    rep_a, dfs_a = dfs_for(FIG1A, kmax=1)
    with pytest.raises(ValueError):
        asymptotic_concurrence(asymptotic_state(dfs_a, initial=PLUS), rep_a)


def test_asymptotic_concurrence_matches_small_simulation():
    N = 5
    chain = ChainSpec(N, 0.4, 0.15)
    noise = NoiseSpec.uniform([2, 4], 0.2)
    rep, dfs = dfs_for(noise, chain)
    assert rep.g == 2
    rho0 = embed_product_state(["plus"] + ["zero"] * 4, dfs.basis)
    traj = evolve(rho0, chain, noise, IntegratorConfig(dt=0.05, t_max=400.0, record_stride=20), [1],
                  edge_concurrence=True)
    expected = asymptotic_concurrence(asymptotic_state(dfs, initial=rho0_states(N)), rep)
    assert expected == pytest.approx(4 / 36)
    assert concurrence(reduce_to_edge_pair(traj.final)) == pytest.approx(expected, abs=1e-4)


def rho0_states(N):
    return ["plus"] + ["zero"] * (N - 1)


@pytest.mark.parametrize("N", [2, 3, 4])
def test_dense_liouvillian_matches_column_stacked_oracle(N):
    chain = ChainSpec(N, 0.4, 0.15)
    noise = NoiseSpec((1,), (0.1,), (0.02,))
    rng = np.random.default_rng(N)
    rho = rng.normal(size=(2**N, 2**N)) + 1j * rng.normal(size=(2**N, 2**N))
    a = (dense_liouvillian(chain, noise) @ rho.reshape(-1)).reshape(2**N, 2**N)
    b = (liouvillian(chain, [1], [0.1], [0.02]) @ rho.reshape(-1, order="F")).reshape(2**N, 2**N, order="F")
    np.testing.assert_allclose(a, b, atol=1e-13)


def test_kron_permutation_matches_oracle():
    for N in (2, 3, 5):
        np.testing.assert_array_equal(kron_to_sector_permutation(N), sector_order(N))


def test_peripheral_spectrum_examples(tmp_path):
    chain = ChainSpec(3, 0.4, 0.15)
    spec = liouvillian_peripheral_spectrum(chain, NoiseSpec.uniform([2], 0.1))
    assert spec.count == 4
    np.testing.assert_allclose(np.sort(spec.eigenvalues.imag), [-0.4, 0, 0, 0.4], atol=1e-9)
    assert liouvillian_peripheral_spectrum(chain, NoiseSpec.uniform([1], 0.1)).count == 1
    assert liouvillian_peripheral_spectrum(chain, NoiseSpec.uniform([1], 0.1, 0.02)).count == 1
    spec.to_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "re,im"
    with pytest.raises(ValueError):
        dense_liouvillian(ChainSpec(7, 0.4, 0.1), NoiseSpec.uniform([1], 0.1))


@pytest.mark.parametrize("N,m,count", [(3, 2, 2), (5, 3, 3), (4, 2, 1), (5, 2, 1)])
def test_thermal_noise_leaves_only_stationary_states(N, m, count):
    # pumping kills every oscillating dark coherence; a centred noise site keeps
    # the mirror reflection as a strong symmetry, hence several steady states
    chain = ChainSpec(N, 0.4, 0.15)
    spec = liouvillian_peripheral_spectrum(chain, NoiseSpec.uniform([m], 0.05, 0.01))
    assert spec.count == count
    assert np.all(np.abs(spec.eigenvalues.imag) < 1e-9)
    sv = np.linalg.svd(liouvillian(chain, [m], [0.05], [0.01]), compute_uv=False)
    assert int(np.sum(sv < 1e-12)) == count
