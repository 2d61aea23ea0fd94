"""Projector sets, Born-rule predictions and homodyne record simulation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .fock import (
    StateVector,
    check_dim,
    hermite_functions,
    phase_averaged_density,
    quadrature_amplitudes,
    quadrature_density,
)

# inverse-CDF sampling grid: points and extent relative to the scan window
FINE_GRID_POINTS = 2 ** 12
FINE_GRID_SCALE = 1.5
MAX_DISCARD_FRACTION = 0.01
DEFAULT_MAX_CONDITION = 1e10


class ProjectorKind(str, Enum):
    SHARP = "sharp-quadrature"
    UNSHARP = "unsharp-quadrature"
    RANDOM_PHASE = "random-phase-povm"


@dataclass(frozen=True)
class BinGrid:
    """Cut angles plus a uniform binning of the scanned quadrature window."""

    phases: np.ndarray
    x_min: float = -7.0
    x_max: float = 7.0
    n_bins: int = 100

    def __post_init__(self):
        phases = np.atleast_1d(np.asarray(self.phases, dtype=float))
        if phases.ndim != 1 or phases.size < 1:
            raise ValueError("phases must be a non-empty 1-d sequence")
        if np.any(phases < 0) or np.any(phases >= 2 * np.pi):
            raise ValueError("phases must lie in [0, 2pi)")
        if np.any(np.diff(phases) <= 0):
            raise ValueError("phases must be strictly increasing")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if int(self.n_bins) < 1:
            raise ValueError("n_bins must be >= 1")
        phases.setflags(write=False)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "n_bins", int(self.n_bins))
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))

    @classmethod
    def uniform(cls, n_phases: int = 12, span: float = np.pi, x_min: float = -7.0,
                x_max: float = 7.0, n_bins: int = 100) -> "BinGrid":
        """``n_phases`` cuts at ``j * span / n_phases``; ``span`` is pi or 2pi."""
        return cls(np.arange(n_phases) * span / n_phases, x_min, x_max, n_bins)

    @property
    def n_phases(self) -> int:
        return self.phases.size

    @property
    def bin_width(self) -> float:
        return (self.x_max - self.x_min) / self.n_bins

    @property
    def bin_centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_bins) + 0.5) * self.bin_width

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_bins + 1)


@dataclass(frozen=True)
class ProjectorSet:
    """Measured POVM elements in the truncated Fock basis.

    For the quadrature kinds, element ``i`` is ``sum_s |y_is><y_is|`` with the
    kets stored as rows ``vectors[i, s, :]`` (one sub-sample for sharp bins).
    For the random-phase kind the elements are diagonal and ``diagonals[i]``
    holds ``<n|Pi_i|n>``.
    """

    dim: int
    labels: np.ndarray
    kind: ProjectorKind
    vectors: np.ndarray | None = None
    diagonals: np.ndarray | None = None

    def __post_init__(self):
        check_dim(self.dim)
        labels = np.asarray(self.labels, dtype=int).reshape(-1, 2)
        object.__setattr__(self, "labels", labels)
        if self.kind is ProjectorKind.RANDOM_PHASE:
            diag = np.asarray(self.diagonals, dtype=float)
            if diag.shape != (labels.shape[0], self.dim):
                raise ValueError("diagonals must have shape (M, dim)")
            object.__setattr__(self, "diagonals", diag)
        else:
            vec = np.asarray(self.vectors, dtype=complex)
            if vec.ndim == 2:
                vec = vec[:, None, :]
            if vec.shape[0] != labels.shape[0] or vec.shape[2] != self.dim:
                raise ValueError("vectors must have shape (M, subsamples, dim)")
            object.__setattr__(self, "vectors", vec)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def commuting(self) -> bool:
        return self.kind is ProjectorKind.RANDOM_PHASE

    @property
    def rank_one(self) -> bool:
        return not self.commuting and self.vectors.shape[1] == 1

    def kets(self) -> np.ndarray:
        """Sharp kets as an ``(M, dim)`` array; only for rank-one elements."""
        if not self.rank_one:
            raise ValueError(f"{self.kind.value} elements are not rank one")
        return self.vectors[:, 0, :]

    def subset(self, index) -> "ProjectorSet":
        index = np.asarray(index)
        if self.commuting:
            return ProjectorSet(self.dim, self.labels[index], self.kind, diagonals=self.diagonals[index])
        return ProjectorSet(self.dim, self.labels[index], self.kind, vectors=self.vectors[index])

    def scaled(self, weights) -> "ProjectorSet":
        """Elements multiplied by nonnegative ``weights``."""
        weights = np.asarray(weights, dtype=float)
        if self.commuting:
            return ProjectorSet(self.dim, self.labels, self.kind, diagonals=self.diagonals * weights[:, None])
        return ProjectorSet(self.dim, self.labels, self.kind,
                            vectors=self.vectors * np.sqrt(weights)[:, None, None])

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        """``Tr[rho Pi_i]`` for every element (unclamped)."""
        rho = np.asarray(rho)
        if rho.shape != (self.dim, self.dim):
            raise ValueError(f"state dimension {rho.shape} does not match projector dim {self.dim}")
        if self.commuting:
            return self.diagonals @ np.real(np.diagonal(rho))
        m, s, d = self.vectors.shape
        flat = self.vectors.reshape(m * s, d)
        vals = np.einsum("ka,ka->k", flat.conj() @ rho, flat).real
        return vals.reshape(m, s).sum(axis=1)

    def operator_sum(self, weights=None) -> np.ndarray:
        """``sum_i w_i Pi_i`` as a dense Hermitian matrix."""
        if weights is None:
            weights = np.ones(len(self))
        weights = np.asarray(weights, dtype=float)
        if self.commuting:
            return np.diag(weights @ self.diagonals).astype(complex)
        m, s, d = self.vectors.shape
        flat = self.vectors.reshape(m * s, d)
        w = np.repeat(weights, s)
        out = (flat.T * w) @ flat.conj()
        return 0.5 * (out + out.conj().T)


@dataclass(frozen=True)
class CorrelationMatrix:
    entries: np.ndarray
    condition_number: float
    max_condition: float = DEFAULT_MAX_CONDITION

    @property
    def well_conditioned(self) -> bool:
        return bool(np.isfinite(self.condition_number) and self.condition_number <= self.max_condition)

    def inverse(self) -> np.ndarray:
        if not self.well_conditioned:
            raise np.linalg.LinAlgError(
                f"correlation matrix is numerically singular (cond={self.condition_number:.3g})"
            )
        return np.linalg.inv(self.entries)


@dataclass(frozen=True)
class FrequencyData:
    """Counts per measured cell, aligned with a ``ProjectorSet`` by ``labels``."""

    counts: np.ndarray
    labels: np.ndarray
    discarded: int = 0
    per_phase_discarded: tuple = field(default=())

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or np.any(counts < 0) or not np.all(counts == np.round(counts)):
            raise ValueError("counts must be a 1-d array of nonnegative integers")
        labels = np.asarray(self.labels, dtype=int).reshape(-1, 2)
        if labels.shape[0] != counts.size:
            raise ValueError("labels and counts are not aligned")
        object.__setattr__(self, "counts", counts.astype(np.int64))
        object.__setattr__(self, "labels", labels)

    @property
    def total_n(self) -> int:
        return int(self.counts.sum())

    @property
    def frequencies(self) -> np.ndarray:
        total = self.total_n
        if total == 0:
            raise ValueError("no registered events")
        return self.counts / total

    @property
    def discarded_fraction(self) -> float:
        recorded = self.total_n + self.discarded
        return self.discarded / recorded if recorded else 0.0

    def entropy(self) -> float:
        f = self.frequencies
        f = f[f > 0]
        return float(-np.sum(f * np.log(f)))

    def subset(self, index) -> "FrequencyData":
        index = np.asarray(index)
        return FrequencyData(self.counts[index], self.labels[index], self.discarded, self.per_phase_discarded)


def _grid_labels(grid: BinGrid) -> np.ndarray:
    j, i = np.meshgrid(np.arange(grid.n_phases), np.arange(grid.n_bins), indexing="ij")
    return np.stack([j.ravel(), i.ravel()], axis=1)


def build_tomography_projectors(grid: BinGrid, dim: int, subsamples: int = 1) -> ProjectorSet:
    """Rotated-quadrature projectors, one per (phase, bin) cell.

    The ket for cell ``(j, i)`` is ``sqrt(bin_width / P) <n|x_i, theta_j>`` so
    the projector sum tends to the identity as bins shrink and the ``P`` cuts
    cover half a period of the rotation. With ``subsamples > 1`` each bin is
    an unsharp element: a sum over ``subsamples`` equally spaced points across
    the bin with the weight split between them.
    """
    dim = check_dim(dim)
    if subsamples < 1:
        raise ValueError("subsamples must be >= 1")
    if subsamples == 1:
        xs = grid.bin_centers[:, None]
        kind = ProjectorKind.SHARP
    else:
        offsets = ((np.arange(subsamples) + 0.5) / subsamples - 0.5) * grid.bin_width
        xs = grid.bin_centers[:, None] + offsets[None, :]
        kind = ProjectorKind.UNSHARP
    weight = np.sqrt(grid.bin_width / (grid.n_phases * subsamples))
    blocks = []
    for theta in grid.phases:
        amps = quadrature_amplitudes(dim, xs, theta)  # (dim, n_bins, subsamples)
        blocks.append(np.moveaxis(amps, 0, -1))
    vectors = weight * np.concatenate(blocks, axis=0)
    return ProjectorSet(dim, _grid_labels(grid), kind, vectors=vectors)


def build_random_phase_povm(grid: BinGrid, dim: int) -> ProjectorSet:
    """Phase-averaged bins: ``<m|Pi_i|n> = delta_mn * bin_width * psi_n(x_i)^2``."""
    dim = check_dim(dim)
    psi = hermite_functions(dim - 1, grid.bin_centers)
    diagonals = grid.bin_width * (psi * psi).T
    labels = np.stack([np.zeros(grid.n_bins, dtype=int), np.arange(grid.n_bins)], axis=1)
    return ProjectorSet(dim, labels, ProjectorKind.RANDOM_PHASE, diagonals=diagonals)


def correlation_matrix(projectors: ProjectorSet, max_condition: float = DEFAULT_MAX_CONDITION) -> CorrelationMatrix:
    """Gram matrix ``C_ij = <y_i|y_j>`` of sharp kets, with its condition number."""
    kets = projectors.kets()
    gram = kets.conj() @ kets.T
    gram = 0.5 * (gram + gram.conj().T)
    eig = np.linalg.eigvalsh(gram)
    cond = np.inf if eig[0] <= 0 else float(eig[-1] / eig[0])
    return CorrelationMatrix(gram, cond, max_condition)


def as_density(state) -> np.ndarray:
    if isinstance(state, StateVector):
        return state.density_matrix()
    if hasattr(state, "entries"):
        return np.asarray(state.entries)
    return np.asarray(state, dtype=complex)


def born_probability(state, projectors: ProjectorSet) -> np.ndarray:
    """Predicted cell probabilities ``<y_i|rho|y_i>`` (``Tr[rho Pi_i]`` for POVMs)."""
    p = projectors.probabilities(as_density(state))
    if np.any(p < -1e-12):
        raise ValueError(f"negative Born probability {p.min():.3g}; input is not a valid state")
    return np.clip(p, 0.0, None)


def _fine_grid(grid: BinGrid, points: int = FINE_GRID_POINTS, scale: float = FINE_GRID_SCALE):
    mid = 0.5 * (grid.x_min + grid.x_max)
    half = 0.5 * scale * (grid.x_max - grid.x_min)
    return np.linspace(mid - half, mid + half, points)


def _inverse_cdf_sample(xs: np.ndarray, density: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(xs))])
    cdf /= cdf[-1]
    return np.interp(rng.random(n), cdf, xs)


def _bin_records(samples: np.ndarray, grid: BinGrid) -> tuple[np.ndarray, int]:
    inside = (samples > grid.x_min) & (samples < grid.x_max)
    counts, _ = np.histogram(samples[inside], bins=grid.edges)
    return counts, int(np.count_nonzero(~inside))


def _report_discards(discarded: int, total: int):
    if total and discarded / total > MAX_DISCARD_FRACTION:
        warnings.warn(
            f"{discarded}/{total} records fell outside the scan window; window too small for the state",
            RuntimeWarning,
            stacklevel=3,
        )


def simulate_homodyne(state: StateVector, grid: BinGrid, records_per_phase: int, seed: int) -> FrequencyData:
    """Monte-Carlo quadrature histograms at each cut angle of ``grid``.

    Every phase draws from its own substream spawned from ``seed``, so results
    do not depend on the order the phases are processed in.
    """
    if records_per_phase < 1:
        raise ValueError("records_per_phase must be >= 1")
    xs = _fine_grid(grid)
    streams = np.random.SeedSequence(seed).spawn(grid.n_phases)
    counts, dropped = [], []
    for theta, ss in zip(grid.phases, streams):
        density = quadrature_density(state, xs, theta)
        samples = _inverse_cdf_sample(xs, density, records_per_phase, np.random.default_rng(ss))
        c, d = _bin_records(samples, grid)
        counts.append(c)
        dropped.append(d)
    _report_discards(sum(dropped), records_per_phase * grid.n_phases)
    return FrequencyData(np.concatenate(counts), _grid_labels(grid), sum(dropped), tuple(dropped))


def simulate_random_phase(state: StateVector, grid: BinGrid, n_records: int, seed: int) -> FrequencyData:
    """Quadrature histogram with a uniformly random local-oscillator phase.

    The phase-averaged marginal depends only on the photon-number populations,
    so records are drawn from it directly.
    """
    if n_records < 1:
        raise ValueError("n_records must be >= 1")
    xs = _fine_grid(grid)
    density = phase_averaged_density(state.populations(), xs)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    counts, dropped = _bin_records(_inverse_cdf_sample(xs, density, n_records, rng), grid)
    _report_discards(dropped, n_records)
    labels = np.stack([np.zeros(grid.n_bins, dtype=int), np.arange(grid.n_bins)], axis=1)
    return FrequencyData(counts, labels, dropped, (dropped,))


def drop_empty_bins(projectors: ProjectorSet, freqs: FrequencyData) -> tuple[ProjectorSet, FrequencyData]:
    """Keep only registered cells; frequencies renormalize over what is kept."""
    if len(projectors) != freqs.counts.size:
        raise ValueError("projectors and frequency data are not aligned")
    if not np.array_equal(projectors.labels, freqs.labels):
        raise ValueError("projector labels do not match frequency labels")
    keep = np.flatnonzero(freqs.counts > 0)
    if keep.size == 0:
        raise ValueError("all counts are zero")
    return projectors.subset(keep), freqs.subset(keep)
