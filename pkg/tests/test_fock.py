import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxlik_tomo.fock import (
    SqueezeParams,
    StateVector,
    coherent_state,
    hermite_function,
    hermite_functions,
    number_state,
    quadrature_amplitude,
    quadrature_amplitudes,
    quadrature_density,
    squeezed_vacuum,
)

from oracles import gaussian_pdf, hermite_explicit, squeezed_marginal_variance


def test_ground_state_at_origin():
    assert hermite_function(0, 0.0) == pytest.approx(np.pi ** -0.25, rel=1e-15)
    assert hermite_function(0, 0.0) == pytest.approx(0.7511255444649425, abs=1e-15)


def test_odd_function_vanishes_at_origin():
    assert hermite_function(1, 0.0) == 0.0


@pytest.mark.parametrize("n,x", [(5, 1.3), (0, -2.0), (3, 0.7), (7, -1.1), (10, 2.5), (10, 0.0)])
def test_recurrence_matches_explicit_polynomial(n, x):
    assert hermite_function(n, x) == pytest.approx(hermite_explicit(n, x), rel=1e-12, abs=1e-15)


def test_high_order_is_finite_where_raw_hermite_overflows():
    vals = hermite_functions(400, np.linspace(-30, 30, 101))
    assert np.all(np.isfinite(vals))
    # psi_400 still peaks near its turning point sqrt(801)
    assert np.max(np.abs(vals[400])) > 1e-3


def test_order_cap():
    with pytest.raises(ValueError):
        hermite_functions(513, 0.0)
    assert hermite_functions(600, 0.0, max_n=600).shape == (601,)
    with pytest.raises(ValueError):
        hermite_function(-1, 0.0)


def _midpoint_gram(n_max, half_width, points=4000):
    h = 2 * half_width / points
    x = -half_width + (np.arange(points) + 0.5) * h
    psi = hermite_functions(n_max, x)
    return h * psi @ psi.T


def test_orthonormality_inside_scan_window():
    # levels whose turning point sqrt(2n+1) sits well inside (-7, 7)
    assert np.max(np.abs(_midpoint_gram(10, 7.0) - np.eye(11))) < 1e-8


def test_orthonormality_on_sampling_window():
    assert np.max(np.abs(_midpoint_gram(30, 10.5) - np.eye(31))) < 1e-8


def test_scan_window_cuts_off_high_levels():
    gram = _midpoint_gram(30, 7.0)
    assert gram[30, 30] < 0.9


@given(st.integers(0, 60), st.floats(-10, 10))
def test_parity(n, x):
    assert hermite_function(n, -x) == pytest.approx((-1) ** n * hermite_function(n, x), abs=1e-14)


def test_quadrature_amplitude_phase_convention():
    x = np.linspace(-3, 3, 7)
    assert np.allclose(quadrature_amplitude(4, x, 0.0), hermite_function(4, x))
    assert np.isreal(quadrature_amplitude(4, 0.3, 0.0))
    assert quadrature_amplitude(2, 0.5, np.pi) == pytest.approx(hermite_function(2, 0.5), abs=1e-15)
    assert quadrature_amplitude(3, 0.5, np.pi / 2) == pytest.approx(-1j * hermite_function(3, 0.5), abs=1e-15)


@given(st.integers(0, 40), st.floats(-6, 6), st.floats(-20, 20))
def test_quadrature_amplitude_periodic(n, x, theta):
    a = quadrature_amplitude(n, x, theta)
    b = quadrature_amplitude(n, x, theta + 2 * np.pi)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


def test_quadrature_amplitudes_matrix_matches_scalar():
    x = np.array([-1.0, 0.2, 2.5])
    mat = quadrature_amplitudes(6, x, 0.7)
    for n in range(6):
        assert np.allclose(mat[n], quadrature_amplitude(n, x, 0.7))


@pytest.mark.parametrize("phi", [0.0, 1.0, np.pi / 2, 3.0])
def test_squeezed_marginals_match_closed_form(phi):
    r = 1.0
    state = squeezed_vacuum(SqueezeParams(r, phi), 200)
    x = np.linspace(-6, 6, 241)
    for theta in (phi / 2, phi / 2 + np.pi / 2, phi / 2 + 0.4):
        expected = gaussian_pdf(x, squeezed_marginal_variance(r, phi, theta))
        assert np.max(np.abs(quadrature_density(state, x, theta) - expected)) < 1e-10


def test_truncation_error_of_marginal_shrinks_with_dim():
    x = np.linspace(-6, 6, 241)
    expected = gaussian_pdf(x, squeezed_marginal_variance(1.0, np.pi / 2, np.pi / 4))
    errs = [np.max(np.abs(quadrature_density(squeezed_vacuum(SqueezeParams(1.0, np.pi / 2), d), x, np.pi / 4) - expected))
            for d in (40, 80, 120)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-7


def test_narrowest_marginal_at_half_squeeze_phase():
    state = squeezed_vacuum(SqueezeParams(1.0, np.pi / 2), 200)
    x = np.linspace(-8, 8, 3201)
    h = x[1] - x[0]
    thetas = np.linspace(0, np.pi, 181)
    variances = [h * np.sum(x * x * quadrature_density(state, x, t)) for t in thetas]
    assert thetas[int(np.argmin(variances))] == pytest.approx(np.pi / 4, abs=1e-12)
    assert min(variances) == pytest.approx(0.5 * math.exp(-2), rel=1e-6)


@given(st.floats(0, 2 * np.pi, exclude_max=True))
def test_zero_squeezing_is_vacuum(phi):
    state = squeezed_vacuum(SqueezeParams(0.0, phi), 10)
    assert np.array_equal(state.amplitudes, np.eye(10)[0])


def test_squeezed_vacuum_ground_population():
    state = squeezed_vacuum(SqueezeParams(1.0, np.pi / 2), 30)
    # before renormalization |c0|^2 = 1/cosh(1); the 30-level truncation keeps almost all the norm
    captured = 1.0 / np.cosh(1.0) / state.populations()[0]
    assert 1 / np.cosh(1.0) == pytest.approx(0.6480542736638855, rel=1e-15)
    assert 0.999 < captured <= 1.0
    assert state.populations()[0] == pytest.approx(1 / np.cosh(1.0), rel=2e-3)


@given(st.floats(0, 1.5), st.floats(0, 2 * np.pi, exclude_max=True))
@settings(max_examples=30)
def test_squeezed_vacuum_even_parity(r, phi):
    state = squeezed_vacuum(SqueezeParams(r, phi), 120)
    assert np.all(state.amplitudes[1::2] == 0)


def test_squeezed_vacuum_truncation_check():
    with pytest.raises(ValueError, match="norm"):
        squeezed_vacuum(SqueezeParams(1.0, 0.0), 8)


def test_coherent_state_statistics():
    assert np.array_equal(coherent_state(0, 12).amplitudes, np.eye(12)[0])
    state = coherent_state(1.0, 20)
    assert state.populations()[0] == pytest.approx(math.exp(-1), abs=1e-6)
    alpha = 1.5 - 0.5j
    state = coherent_state(alpha, 30)
    assert state.mean_photon_number() == pytest.approx(abs(alpha) ** 2, abs=1e-6)
    with pytest.raises(ValueError):
        coherent_state(3.0, 5)


def test_state_vector_validation():
    with pytest.raises(ValueError):
        StateVector(np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        number_state(3, 3)
    with pytest.raises(ValueError):
        SqueezeParams(-0.1, 0.0)
    assert SqueezeParams(1.0, 2 * np.pi + 0.5).phi == pytest.approx(0.5)
