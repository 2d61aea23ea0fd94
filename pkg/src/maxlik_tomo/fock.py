"""Truncated Fock-space numerics.

Quadratures follow the convention ``x = (a + a^dagger) / sqrt(2)``, so the
vacuum marginal has variance 1/2. Rotated quadrature eigenstates are
``|x, theta> = exp(i theta n) |x>``, giving ``<n|x, theta> = exp(i n theta) psi_n(x)``.
Under this convention a squeezed vacuum with phase ``phi`` has its narrowest
marginal at ``theta = phi / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_MAX_N = 512
MIN_CAPTURED_NORM = 0.999


def check_dim(dim: int) -> int:
    dim = int(dim)
    if dim < 1:
        raise ValueError(f"Fock dimension must be >= 1, got {dim}")
    return dim


@dataclass(frozen=True)
class StateVector:
    """Normalized pure state in the truncated number basis ``|0>..|dim-1>``."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).ravel()
        check_dim(amps.size)
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"state is not normalized (norm={norm:.12g})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def density_matrix(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())

    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def mean_photon_number(self) -> float:
        return float(np.dot(np.arange(self.dim), self.populations()))


@dataclass(frozen=True)
class SqueezeParams:
    """Squeeze magnitude ``r >= 0`` and phase ``phi`` (wrapped into [0, 2pi))."""

    r: float
    phi: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.r) or self.r < 0:
            raise ValueError(f"squeeze magnitude must be >= 0, got {self.r}")
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "phi", float(np.mod(self.phi, 2 * np.pi)))


def hermite_functions(n_max: int, x, max_n: int = DEFAULT_MAX_N) -> np.ndarray:
    """Oscillator eigenfunctions ``psi_0 .. psi_{n_max}`` evaluated at ``x``.

    Uses the three-term recurrence on the normalized functions,

        psi_{n+1} = sqrt(2/(n+1)) x psi_n - sqrt(n/(n+1)) psi_{n-1},

    which stays finite where the raw Hermite polynomials would overflow.

    Returns an array of shape ``(n_max + 1,) + np.shape(x)``.
    """
    n_max = int(n_max)
    if n_max < 0:
        raise ValueError(f"n must be >= 0, got {n_max}")
    if n_max > max_n:
        raise ValueError(
            f"n={n_max} exceeds the recurrence cap {max_n}; "
            "raise max_n explicitly if denormal underflow is acceptable"
        )
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * x * x)
    if n_max >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for n in range(1, n_max):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * x * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def hermite_function(n: int, x, max_n: int = DEFAULT_MAX_N):
    """Single oscillator eigenfunction ``psi_n(x)``."""
    vals = hermite_functions(n, x, max_n=max_n)[n]
    return float(vals) if vals.ndim == 0 else vals


def quadrature_amplitudes(dim: int, x, theta: float) -> np.ndarray:
    """Matrix ``<n|x, theta>`` with shape ``(dim,) + np.shape(x)``."""
    dim = check_dim(dim)
    if not np.isfinite(theta):
        raise ValueError("theta must be finite")
    psi = hermite_functions(dim - 1, x)
    n = np.arange(dim)
    # exact for integer windings: reduce n*theta mod 2pi before exponentiating
    phase = np.exp(1j * np.mod(n * float(theta), 2 * np.pi))
    return psi * phase.reshape((dim,) + (1,) * (psi.ndim - 1))


def quadrature_amplitude(n: int, x, theta: float):
    """``<n|x, theta> = exp(i n theta) psi_n(x)``."""
    val = hermite_function(n, x) * np.exp(1j * np.mod(n * float(theta), 2 * np.pi))
    return complex(val) if np.ndim(val) == 0 else val


def _finish(amps: np.ndarray, what: str) -> StateVector:
    norm2 = float(np.sum(np.abs(amps) ** 2))
    if norm2 < MIN_CAPTURED_NORM:
        raise ValueError(
            f"{what}: truncation captures only norm {norm2:.6f} < {MIN_CAPTURED_NORM}; "
            "increase the Fock dimension"
        )
    return StateVector(amps / np.sqrt(norm2))


def squeezed_vacuum(params: SqueezeParams, dim: int) -> StateVector:
    """State annihilated by ``a cosh r + exp(i phi) sinh r a^dagger``.

    Built from the two-term recurrence of that annihilation condition with
    ``c_0 = 1/sqrt(cosh r)``; only even photon numbers are populated.
    """
    dim = check_dim(dim)
    amps = np.zeros(dim, dtype=complex)
    amps[0] = 1.0 / np.sqrt(np.cosh(params.r))
    k = -np.exp(1j * params.phi) * np.tanh(params.r)
    for n in range(1, dim - 1, 2):
        amps[n + 1] = k * np.sqrt(n / (n + 1)) * amps[n - 1]
    return _finish(amps, "squeezed_vacuum")


def coherent_state(alpha: complex, dim: int) -> StateVector:
    dim = check_dim(dim)
    amps = np.zeros(dim, dtype=complex)
    amps[0] = np.exp(-0.5 * abs(alpha) ** 2)
    for n in range(1, dim):
        amps[n] = amps[n - 1] * alpha / np.sqrt(n)
    return _finish(amps, "coherent_state")


def number_state(n: int, dim: int) -> StateVector:
    dim = check_dim(dim)
    if not 0 <= n < dim:
        raise ValueError(f"number state |{n}> outside truncation dim {dim}")
    amps = np.zeros(dim, dtype=complex)
    amps[n] = 1.0
    return StateVector(amps)


def quadrature_density(state: StateVector, x, theta: float) -> np.ndarray:
    """Continuous marginal ``|<x, theta|psi>|^2``."""
    amp = np.tensordot(state.amplitudes, quadrature_amplitudes(state.dim, x, theta).conj(), axes=(0, 0))
    return np.abs(amp) ** 2


def phase_averaged_density(populations, x) -> np.ndarray:
    """Marginal averaged over a uniformly random phase: ``sum_n p_n psi_n(x)^2``."""
    populations = np.asarray(populations, dtype=float)
    psi = hermite_functions(populations.size - 1, x)
    return np.tensordot(populations, psi * psi, axes=(0, 0))
