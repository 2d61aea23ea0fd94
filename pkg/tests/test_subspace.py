import numpy as np
import pytest

from maxlik_tomo.fock import SqueezeParams, squeezed_vacuum
from maxlik_tomo.maxlik import SolverConfig, r_operator, random_density, solve_mixed
from maxlik_tomo.measurement import (
    BinGrid,
    FrequencyData,
    ProjectorKind,
    ProjectorSet,
    build_random_phase_povm,
    build_tomography_projectors,
    drop_empty_bins,
    simulate_homodyne,
    simulate_random_phase,
)
from maxlik_tomo.subspace import (
    factor_surface,
    overlap_operator,
    r_diagonal,
    recoverable_subspace,
    renormalize,
    residual_z,
)

from oracles import random_nonorthogonal_kets

GRID = BinGrid.uniform()


def sharp(kets):
    kets = np.asarray(kets, dtype=complex)
    return ProjectorSet(kets.shape[1], [(0, i) for i in range(len(kets))], ProjectorKind.SHARP, vectors=kets)


@pytest.fixture(scope="module")
def reference_fit():
    state = squeezed_vacuum(SqueezeParams(1.0, np.pi / 2), 120)
    data = simulate_homodyne(state, GRID, 600, seed=0)
    proj, freqs = drop_empty_bins(build_tomography_projectors(GRID, 15), data)
    res = solve_mixed(proj, freqs, SolverConfig(tol=1e-8))
    assert res.converged
    return proj, freqs, res.rho.entries


def test_renormalized_projectors_reproduce_frequencies(reference_fit):
    proj, freqs, rho = reference_fit
    renorm = renormalize(proj, freqs, rho)
    assert np.max(np.abs(renorm.projectors.probabilities(rho) - freqs.frequencies)) <= 1e-10
    other = random_density(proj.dim, np.random.default_rng(0))
    renorm = renormalize(proj, freqs, other)
    assert np.max(np.abs(renorm.projectors.probabilities(other) - freqs.frequencies)) <= 1e-10


def test_unit_factors_at_exact_fit():
    proj = sharp(np.eye(3))
    freqs = FrequencyData([2, 3, 5], proj.labels)
    renorm = renormalize(proj, freqs, np.diag([0.2, 0.3, 0.5]))
    assert np.allclose(renorm.factors, 1.0, atol=1e-15)
    assert np.allclose(overlap_operator(renorm), np.eye(3), atol=1e-15)


def test_renormalize_rejects_impossible_state():
    proj = sharp(np.eye(2))
    with pytest.raises(ValueError, match="zero probability"):
        renormalize(proj, FrequencyData([1, 1], proj.labels), np.diag([1.0, 0.0]))


def test_overlap_equals_r_operator(reference_fit):
    proj, freqs, rho = reference_fit
    for state in (rho, random_density(proj.dim, np.random.default_rng(1))):
        a = overlap_operator(renormalize(proj, freqs, state))
        b = r_operator(state, proj, freqs)
        assert np.max(np.abs(a - b)) <= 1e-12


def test_trace_identity():
    rng = np.random.default_rng(2)
    kets = random_nonorthogonal_kets(7, 4, rng)
    proj = sharp(kets)
    freqs = FrequencyData(rng.integers(1, 50, 7), proj.labels)
    rho = random_density(4, rng)
    overlap = overlap_operator(renormalize(proj, freqs, rho))
    rep = recoverable_subspace(overlap)
    p = proj.probabilities(rho)
    expected = np.sum(freqs.frequencies / p * np.sum(np.abs(kets) ** 2, axis=1))
    assert np.sum(rep.eigenvalues) == pytest.approx(expected, rel=1e-12)
    assert rep.eigenvalues[-1] >= -1e-12


def test_single_projector_overlap_is_rank_one():
    proj = sharp([[0.6, 0.8j, 0.0]])
    rep = recoverable_subspace(overlap_operator(renormalize(proj, FrequencyData([3], proj.labels), np.eye(3) / 3)))
    assert rep.overlap_rank == 1
    assert rep.span_rank == 1
    # the renormalized ket carries weight 1 / <y|rho|y> = 3
    assert rep.eigenvalues[0] == pytest.approx(3.0)


def test_identity_and_zero_inputs():
    rep = recoverable_subspace(np.eye(6))
    assert rep.recoverable_dim == 6 and np.allclose(rep.eigenvalues, 1.0)
    assert rep.residual_Z == pytest.approx(0.0, abs=1e-14)
    rep = recoverable_subspace(np.zeros((6, 6)))
    assert rep.recoverable_dim == 0 and rep.overlap_rank == 0
    with pytest.raises(ValueError):
        recoverable_subspace(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_recoverable_dim_counts_tolerance_band():
    rep = recoverable_subspace(np.diag([1.0, 0.97, 1.04, 0.9, 0.2]), lambda_tolerance=0.05)
    assert rep.recoverable_dim == 3
    assert np.all(np.diff(rep.eigenvalues) <= 0)
    assert recoverable_subspace(np.diag([1.0, 0.97, 1.04, 0.9, 0.2]), lambda_tolerance=0.1).recoverable_dim == 4


def test_residual_z_matches_trace_formula(reference_fit):
    proj, freqs, rho = reference_fit
    renorm = renormalize(proj, freqs, rho)
    overlap = overlap_operator(renorm)
    with_kets = recoverable_subspace(overlap, renormalized=renorm)
    trace_only = recoverable_subspace(overlap)
    assert with_kets.residual_Z == pytest.approx(trace_only.residual_Z, rel=1e-10)
    basis = with_kets.recoverable_basis
    P = basis @ basis.conj().T
    assert residual_z(renorm, basis) == pytest.approx(np.trace((np.eye(proj.dim) - P) @ overlap).real, rel=1e-10)
    assert residual_z(renorm, np.eye(proj.dim)) == pytest.approx(0.0, abs=1e-12)
    assert residual_z(renorm, np.zeros((proj.dim, 0))) == pytest.approx(np.trace(overlap).real, rel=1e-12)


def test_eigenbasis_minimizes_residual(reference_fit):
    proj, freqs, rho = reference_fit
    renorm = renormalize(proj, freqs, rho)
    rep = recoverable_subspace(overlap_operator(renorm), renormalized=renorm)
    k = rep.recoverable_dim
    rng = np.random.default_rng(3)
    for _ in range(5):
        q, _ = np.linalg.qr(rng.standard_normal((proj.dim, k)) + 1j * rng.standard_normal((proj.dim, k)))
        # the top-k eigenvectors capture the most weight of any k-dimensional subspace
        assert residual_z(renorm, q) >= residual_z(renorm, rep.eigenvectors[:, :k]) - 1e-12


def test_basis_stability_under_unitary(reference_fit):
    proj, freqs, rho = reference_fit
    overlap = r_operator(rho, proj, freqs)
    rng = np.random.default_rng(4)
    u, _ = np.linalg.qr(rng.standard_normal((proj.dim,) * 2) + 1j * rng.standard_normal((proj.dim,) * 2))
    a = recoverable_subspace(overlap)
    b = recoverable_subspace(u @ overlap @ u.conj().T)
    assert np.max(np.abs(a.eigenvalues - b.eigenvalues)) <= 1e-10
    assert a.recoverable_dim == b.recoverable_dim
    pa = a.recoverable_basis @ a.recoverable_basis.conj().T
    back = u.conj().T @ b.recoverable_basis
    assert np.allclose(pa, back @ back.conj().T, atol=1e-8)


@pytest.mark.parametrize("n_phases", [3, 12])
def test_recoverable_dim_monotone_in_window(n_phases):
    # with unit factors the overlap is the grid's own resolution of identity
    dims = []
    for half in (4.2, 5.04, 5.88, 7.0):
        grid = BinGrid.uniform(n_phases, np.pi, x_min=-half, x_max=half, n_bins=round(2 * half / 0.14))
        proj = build_tomography_projectors(grid, 25)
        dims.append(recoverable_subspace(proj.operator_sum()).recoverable_dim)
    assert dims == sorted(dims)
    assert dims[-1] > dims[0]


def test_subspace_chain_dimensions(reference_fit):
    proj, freqs, rho = reference_fit
    renorm = renormalize(proj, freqs, rho)
    rep = recoverable_subspace(overlap_operator(renorm), renormalized=renorm)
    assert rep.recoverable_dim <= rep.overlap_rank <= rep.span_rank <= rep.dim
    d = rep.to_dict()
    assert d["subspace_dims"]["recoverable"] == rep.recoverable_dim
    assert len(d["eigenvalues"]) == proj.dim


def test_r_diagonal_cases():
    complete = ProjectorSet(4, [(0, i) for i in range(4)], ProjectorKind.RANDOM_PHASE, diagonals=np.eye(4))
    assert np.array_equal(r_diagonal(complete), np.ones(4))
    povm = build_random_phase_povm(GRID, 30)
    single = povm.subset([50])
    assert np.array_equal(r_diagonal(single), povm.diagonals[50])
    full = r_diagonal(povm)
    assert np.all(full <= 1 + 1e-9) and np.all(full >= 0)
    assert np.all(np.abs(full[:11] - 1) < 1e-6)
    assert full[29] < full[20] < 1
    with pytest.raises(ValueError, match="commuting"):
        r_diagonal(build_tomography_projectors(GRID, 4))
    with pytest.raises(ValueError):
        r_diagonal(povm, basis="coherent")


def test_r_diagonal_on_registered_bins_decays():
    state = squeezed_vacuum(SqueezeParams(1.0, np.pi / 2), 120)
    data = simulate_random_phase(state, GRID, 7200, seed=0)
    povm, _ = drop_empty_bins(build_random_phase_povm(GRID, 30), data)
    r = r_diagonal(povm)
    assert np.all(r[:9] > 0.95)
    assert r[29] < r[16] < r[8]


def test_factor_surface_lists_registered_cells_only(reference_fit):
    proj, freqs, rho = reference_fit
    rows = factor_surface(renormalize(proj, freqs, rho), GRID)
    assert len(rows) == len(proj) < 1200
    registered = {(r["phase_index"], r["bin_index"]) for r in rows}
    assert registered == {tuple(l) for l in proj.labels}
    row = rows[0]
    assert row["bin_center"] == pytest.approx(GRID.bin_centers[row["bin_index"]])
    assert row["theta"] == pytest.approx(GRID.phases[row["phase_index"]])
    assert all(r["factor"] > 0 for r in rows)


def test_factor_surface_random_phase_has_no_angle():
    state = squeezed_vacuum(SqueezeParams(1.0, np.pi / 2), 120)
    data = simulate_random_phase(state, GRID, 2000, seed=1)
    povm, freqs = drop_empty_bins(build_random_phase_povm(GRID, 10), data)
    rows = factor_surface(renormalize(povm, freqs, np.eye(10) / 10), GRID)
    assert all(np.isnan(r["theta"]) for r in rows)
    with pytest.raises(ValueError):
        residual_z(renormalize(povm, freqs, np.eye(10) / 10), np.eye(10))
