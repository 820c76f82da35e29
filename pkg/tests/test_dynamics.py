import math

import numpy as np
import pytest
import scipy.linalg

from xxsync.dfs import NoiseSpec, build_dfs_basis, gcd_analysis, slater_state
from xxsync.dynamics import (
    IntegratorConfig,
    LindbladGenerator,
    PhysicalityError,
    evolve,
    jump_operators,
    lindblad_rhs,
    physicality_check,
    read_snapshot,
    required_kmax,
    write_snapshot,
)
from xxsync.hilbert import (
    ChainSpec,
    DensityMatrix,
    build_hamiltonian,
    build_jump_operator,
    embed_product_state,
    enumerate_sector,
)

from .oracles import SX, evolve_expm, expect, kron_hamiltonian, liouvillian, sector_to_kron, site_op

CHAIN = ChainSpec(11, 0.4, 0.15)


def generic_qubits(N, shift=0.0):
    return [(math.cos(0.3 * j + 0.2 + shift), math.sin(0.3 * j + 0.2 + shift) * np.exp(1j * j))
            for j in range(N)]


def random_state(dim, rng):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def test_ground_state_is_stationary():
    b = enumerate_sector(11, 1)
    rho = embed_product_state(["zero"] * 11, b)
    out = lindblad_rhs(rho, build_hamiltonian(CHAIN, b), jump_operators(NoiseSpec.uniform([6], 0.05), b))
    assert np.max(np.abs(out.data)) == 0


def test_dark_projector_is_stationary():
    b = enumerate_sector(11, 2)
    v, _ = slater_state((2, 8), CHAIN, b)
    rho = DensityMatrix(b, np.outer(v, v.conj()))
    out = lindblad_rhs(rho, build_hamiltonian(CHAIN, b), jump_operators(NoiseSpec.uniform([6], 0.05), b))
    assert np.max(np.abs(out.data)) < 1e-14


def test_pure_decay_on_noise_site():
    b = enumerate_sector(4, 1)
    m = b.index_of(1 << 2)
    rho = np.zeros((b.dim, b.dim), dtype=complex)
    rho[m, m] = 1
    H0 = build_hamiltonian(ChainSpec(4, 0.0, 0.0), b)
    out = lindblad_rhs(DensityMatrix(b, rho), H0, jump_operators(NoiseSpec.uniform([3], 0.3), b)).data
    expected = np.zeros_like(out)
    expected[m, m] = -0.3
    expected[0, 0] = 0.3
    np.testing.assert_allclose(out, expected, atol=1e-15)


@pytest.mark.parametrize("dense", [True, False])
def test_generator_trace_and_hermiticity(dense):
    rng = np.random.default_rng(1)
    b = enumerate_sector(6, 3)
    gen = LindbladGenerator(build_hamiltonian(ChainSpec(6, 0.4, 0.15), b),
                            jump_operators(NoiseSpec.uniform([2, 5], 0.1), b), dense=dense)
    rho = random_state(b.dim, rng)
    out = gen(rho)
    assert abs(np.trace(out)) < 1e-12
    assert np.max(np.abs(out - out.conj().T)) < 1e-12
    np.testing.assert_allclose(gen(rho, hermitian=True), out, atol=1e-14)


def test_dense_and_sparse_generators_agree():
    rng = np.random.default_rng(2)
    b = enumerate_sector(11, 2)
    H = build_hamiltonian(CHAIN, b)
    jumps = jump_operators(NoiseSpec.uniform([2, 6], 0.05), b)
    rho = random_state(b.dim, rng)
    np.testing.assert_allclose(LindbladGenerator(H, jumps, dense=True)(rho),
                               LindbladGenerator(H, jumps, dense=False)(rho), atol=1e-14)


def test_generator_matches_kron_liouvillian():
    rng = np.random.default_rng(3)
    N = 4
    chain = ChainSpec(N, 0.5, 0.2)
    b = enumerate_sector(N, N)
    noise = NoiseSpec((1, 3), (0.1, 0.2), (0.03, 0.0))
    rho = random_state(b.dim, rng)
    out = LindbladGenerator(build_hamiltonian(chain, b), jump_operators(noise, b))(rho)
    Lsup = liouvillian(chain, noise.sites, noise.rates, noise.thermal_rates)
    full = sector_to_kron(rho, N)
    ref = (Lsup @ full.reshape(-1, order="F")).reshape(2**N, 2**N, order="F")
    np.testing.assert_allclose(sector_to_kron(out, N), ref, atol=1e-13)


def test_rhs_rejects_basis_mismatch():
    b1, b2 = enumerate_sector(4, 1), enumerate_sector(4, 2)
    rho = embed_product_state(["zero"] * 4, b1)
    with pytest.raises(ValueError):
        lindblad_rhs(rho, build_hamiltonian(ChainSpec(4, 0.4, 0.1), b2), [])


def test_required_kmax():
    assert required_kmax(["plus"] + ["zero"] * 10, NoiseSpec.uniform([6], 0.1), 11) == 1
    assert required_kmax(["plus", "minus"] + ["zero"] * 9, NoiseSpec.uniform([6], 0.1), 11) == 2
    assert required_kmax(["zero"] * 4, NoiseSpec.uniform([2], 0.1, 0.01), 4) == 4
    with pytest.raises(ValueError):
        required_kmax(["zero"] * 15, NoiseSpec.uniform([2], 0.1, 0.01), 15)


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=1.0, t_max=0.5)
    with pytest.raises(ValueError):
        IntegratorConfig(record_stride=0)
    with pytest.raises(ValueError):
        IntegratorConfig(method="euler")
    assert IntegratorConfig(dt=0.05, t_max=100).n_steps == 2000


def test_physicality_check_examples():
    b = enumerate_sector(3, 1)
    pure = embed_product_state(["plus", "zero", "zero"], b)
    assert physicality_check(pure).passed
    bad = DensityMatrix(b, 0.9 * pure.data)
    rep = physicality_check(bad)
    assert not rep.passed
    assert rep.trace_deficit == pytest.approx(0.1)


@pytest.mark.parametrize("N", [2, 3, 4, 5])
def test_evolution_matches_expm_of_liouvillian(N):
    chain = ChainSpec(N, 0.4, 0.15)
    m = (N + 1) // 2
    noise = NoiseSpec.uniform([m], 0.05)
    b = enumerate_sector(N, N)
    rho0 = embed_product_state(generic_qubits(N), b)
    cfg = IntegratorConfig(dt=0.005, t_max=100.0, record_stride=200, snapshot_times=(1.0, 10.0, 100.0))
    traj = evolve(rho0, chain, noise, cfg, [1, N])
    Lsup = liouvillian(chain, [m], [0.05])
    for t, snap in traj.snapshots:
        ref = evolve_expm(Lsup, sector_to_kron(rho0.data, N), t)
        assert np.max(np.abs(sector_to_kron(snap.data, N) - ref)) < 1e-7, t
    assert [t for t, _ in traj.snapshots] == [1.0, 10.0, 100.0]


@pytest.mark.parametrize("N", [3, 6])
def test_unitary_evolution_matches_expm(N):
    chain = ChainSpec(N, 0.4, 0.15)
    b = enumerate_sector(N, N)
    qubits = generic_qubits(N, 0.5)
    rho0 = embed_product_state(qubits, b)
    traj = evolve(rho0, chain, NoiseSpec((), ()), IntegratorConfig(dt=0.005, t_max=100.0, record_stride=2000),
                  list(range(1, N + 1)))
    U = scipy.linalg.expm(-1j * kron_hamiltonian(chain) * 100.0)
    full = U @ sector_to_kron(rho0.data, N) @ U.conj().T
    for k in range(1, N + 1):
        assert abs(traj.site_series(k)[-1] - expect(full, site_op(SX, k, N))) < 1e-7
    ev0 = np.linalg.eigvalsh(rho0.data)
    np.testing.assert_allclose(np.linalg.eigvalsh(traj.final.data), ev0, atol=1e-7)


def test_rk4_step_halving_ratio():
    N = 5
    chain = ChainSpec(N, 0.4, 0.15)
    b = enumerate_sector(N, N)
    rho0 = embed_product_state(generic_qubits(N), b)
    ref = evolve_expm(liouvillian(chain, [3], [0.05]), sector_to_kron(rho0.data, N), 20.0)
    exact = expect(ref, site_op(SX, 1, N))
    errs = []
    for dt in (0.2, 0.1):
        traj = evolve(rho0, chain, NoiseSpec.uniform([3], 0.05),
                      IntegratorConfig(dt=dt, t_max=20.0, abs_tol=1e-2), [1])
        errs.append(abs(traj.sigma_x[-1, 0] - exact))
    assert 12 <= errs[0] / errs[1] <= 20


def test_adaptive_matches_rk4():
    N = 4
    chain = ChainSpec(N, 0.4, 0.15)
    b = enumerate_sector(N, N)
    rho0 = embed_product_state(generic_qubits(N), b)
    noise = NoiseSpec.uniform([2], 0.1)
    a = evolve(rho0, chain, noise, IntegratorConfig(dt=0.01, t_max=30.0, record_stride=10), [1, 4])
    c = evolve(rho0, chain, noise, IntegratorConfig(dt=0.01, t_max=30.0, record_stride=10,
                                                    method="adaptive_rk45", rel_tol=1e-10, abs_tol=1e-12), [1, 4])
    np.testing.assert_array_equal(a.times, c.times)
    assert np.max(np.abs(a.sigma_x - c.sigma_x)) < 1e-7


def test_positivity_violation_aborts():
    N = 5
    b = enumerate_sector(N, N)
    rho0 = embed_product_state(generic_qubits(N), b)
    with pytest.raises(PhysicalityError, match="min eigenvalue") as info:
        evolve(rho0, ChainSpec(N, 0.4, 0.15), NoiseSpec.uniform([3], 0.05),
               IntegratorConfig(dt=0.4, t_max=20.0), [1])
    assert info.value.time is not None


def test_thermal_requires_full_space():
    b = enumerate_sector(4, 1)
    rho0 = embed_product_state(["plus"] + ["zero"] * 3, b)
    with pytest.raises(ValueError):
        evolve(rho0, ChainSpec(4, 0.4, 0.1), NoiseSpec.uniform([2], 0.1, 0.01),
               IntegratorConfig(dt=0.1, t_max=1.0), [1])


def test_bright_population_and_t_star():
    N = 5
    chain = ChainSpec(N, 0.4, 0.15)
    noise = NoiseSpec.uniform([3], 0.2)
    b = enumerate_sector(N, 2)
    rho0 = embed_product_state(["plus", "minus", "zero", "zero", "zero"], b)
    dfs = build_dfs_basis(gcd_analysis(noise, N), chain, b, allow_truncation=True)
    traj = evolve(rho0, chain, noise, IntegratorConfig(dt=0.05, t_max=600.0, record_stride=10), [1, N],
                  dark_vectors=dfs.vectors(), bright_threshold=1e-9)
    bp = traj.bright_population
    assert bp[0] > 0.1
    assert bp[-1] < 1e-9
    assert traj.t_star is not None
    i = int(np.searchsorted(traj.times, traj.t_star))
    assert bp[i] < 1e-9 and np.all(bp[:i] >= 1e-9)
    assert np.allclose(traj.t_star_state.data, traj.t_star_state.data.conj().T)
    assert np.max(np.abs(traj.trace_drift)) < 1e-12


def test_fig1a_trace_drift_short():
    b = enumerate_sector(11, 1)
    rho0 = embed_product_state(["plus"] + ["zero"] * 10, b)
    traj = evolve(rho0, CHAIN, NoiseSpec.uniform([6], 0.05), IntegratorConfig(dt=0.05, t_max=500.0), [1, 11])
    assert np.max(np.abs(traj.trace_drift)) <= 1e-8


def _fig1a_min_eig(dt, t_max=500.0):
    b = enumerate_sector(11, 1)
    rho0 = embed_product_state(["plus"] + ["zero"] * 10, b)
    traj = evolve(rho0, CHAIN, NoiseSpec.uniform([6], 0.05),
                  IntegratorConfig(dt=dt, t_max=t_max, record_stride=int(round(1 / dt)), abs_tol=1e-6), [1],
                  check_interval=1.0)
    return traj.min_eigenvalue


def test_fig1a_negativity_is_rk4_truncation_error():
    # the dominant negative eigenvalue shrinks as dt^4
    neg = [_fig1a_min_eig(dt) for dt in (0.1, 0.05, 0.025)]
    assert all(x < 0 for x in neg)
    assert 12 <= neg[0] / neg[1] <= 20
    assert 12 <= neg[1] / neg[2] <= 20
    assert neg[2] >= -1e-8


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    b = enumerate_sector(6, 2)
    rho = DensityMatrix(b, random_state(b.dim, rng))
    path = tmp_path / "s.snap"
    write_snapshot(path, 12.5, rho)
    t, back = read_snapshot(path)
    assert t == 12.5
    assert back.basis.N == 6 and back.basis.sectors == (0, 1, 2)
    np.testing.assert_array_equal(back.data, rho.data)
    raw = path.read_bytes()
    assert len(raw) == 8 + 16 + 8 * 3 + 16 + 16 * b.dim**2
    (tmp_path / "bad").write_bytes(b"nope" + raw[4:])
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "bad")


def test_trajectory_csv(tmp_path):
    b = enumerate_sector(3, 1)
    rho0 = embed_product_state(["plus", "zero", "zero"], b)
    traj = evolve(rho0, ChainSpec(3, 0.4, 0.15), NoiseSpec.uniform([2], 0.1),
                  IntegratorConfig(dt=0.1, t_max=5.0, record_stride=5), [1, 2, 3])
    path = tmp_path / "t.csv"
    traj.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,sx_1,sx_2,sx_3,trace_drift"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 0], traj.times)
    np.testing.assert_array_equal(data[:, 1:4], traj.sigma_x)
    assert np.all(np.diff(traj.times) > 0)


def test_lowering_targets_present_for_ad_truncation():
    # amplitude damping keeps sectors 0..kmax closed
    b = enumerate_sector(7, 3)
    for site in range(1, 8):
        build_jump_operator(site, b)
