"""Renormalized projectors and the subspace where the data resolve the identity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measurement import BinGrid, FrequencyData, ProjectorSet, as_density

DEFAULT_LAMBDA_TOLERANCE = 0.05
RANK_TOL = 1e-10


@dataclass(frozen=True)
class RenormalizedProjectorSet:
    """Projectors rescaled by ``f_i / p_i`` so each reproduces its observed frequency."""

    projectors: ProjectorSet
    factors: np.ndarray

    @property
    def vectors(self) -> np.ndarray:
        return self.projectors.vectors

    @property
    def labels(self) -> np.ndarray:
        return self.projectors.labels


@dataclass(frozen=True)
class SubspaceReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    recoverable_dim: int
    lambda_tolerance: float
    residual_Z: float
    overlap_rank: int
    span_rank: int

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def recoverable_basis(self) -> np.ndarray:
        return self.eigenvectors[:, self._selected()]

    def _selected(self) -> np.ndarray:
        return np.abs(self.eigenvalues - 1.0) <= self.lambda_tolerance

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "recoverable_dim": self.recoverable_dim,
            "lambda_tolerance": self.lambda_tolerance,
            "residual_Z": self.residual_Z,
            "subspace_dims": {
                "recoverable": self.recoverable_dim,
                "overlap_rank": self.overlap_rank,
                "span_rank": self.span_rank,
                "hilbert": self.dim,
            },
        }


def renormalize(projectors: ProjectorSet, freqs: FrequencyData, rho) -> RenormalizedProjectorSet:
    """Scale each element by ``f_i / p_i`` (kets by the square root).

    Raises ``ValueError`` when the state assigns zero probability to a
    registered cell, since no finite factor can then reproduce ``f_i``.
    """
    f = freqs.frequencies
    if f.size != len(projectors):
        raise ValueError("projectors and frequencies are not aligned")
    p = projectors.probabilities(as_density(rho))
    bad = (p <= 0) & (f > 0)
    if np.any(bad):
        raise ValueError(f"state assigns zero probability to {int(bad.sum())} registered cell(s)")
    factors = np.sqrt(np.where(f > 0, f / np.where(p > 0, p, 1.0), 0.0))
    return RenormalizedProjectorSet(projectors.scaled(factors ** 2), factors)


def overlap_operator(renormalized: RenormalizedProjectorSet) -> np.ndarray:
    """``sum_i |y'_i><y'_i|``, the resolution of identity the data actually achieve."""
    return renormalized.projectors.operator_sum()


def recoverable_subspace(overlap: np.ndarray, lambda_tolerance: float = DEFAULT_LAMBDA_TOLERANCE,
                         renormalized: RenormalizedProjectorSet | None = None) -> SubspaceReport:
    """Eigen-analysis of the overlap operator.

    The recoverable subspace is spanned by eigenvectors whose eigenvalue lies
    within ``lambda_tolerance`` of one. ``residual_Z`` is the weight of the
    projectors outside that subspace; given the projectors it is summed over
    their orthogonal components, otherwise it is the equivalent trace
    ``Tr[(1 - P) overlap]``.
    """
    overlap = np.asarray(overlap, dtype=complex)
    if np.max(np.abs(overlap - overlap.conj().T), initial=0.0) > 1e-9 * max(1.0, np.abs(overlap).max()):
        raise ValueError("overlap operator is not Hermitian")
    w, v = np.linalg.eigh(0.5 * (overlap + overlap.conj().T))
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    selected = np.abs(w - 1.0) <= lambda_tolerance
    basis = v[:, selected]
    if renormalized is not None:
        z = residual_z(renormalized, basis)
    else:
        proj = basis @ basis.conj().T
        z = float(np.real(np.trace(overlap - proj @ overlap)))
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    overlap_rank = int(np.count_nonzero(w > RANK_TOL * scale))
    if renormalized is not None and not renormalized.projectors.commuting:
        flat = renormalized.vectors.reshape(-1, overlap.shape[0])
        span_rank = int(np.linalg.matrix_rank(flat, tol=RANK_TOL * max(1.0, np.abs(flat).max())))
    else:
        span_rank = overlap_rank
    return SubspaceReport(w, v, int(selected.sum()), float(lambda_tolerance), z, overlap_rank, span_rank)


def residual_z(renormalized: RenormalizedProjectorSet, basis: np.ndarray) -> float:
    """``sum_i <Z_i|Z_i>`` with ``|Z_i>`` the part of ``|y'_i>`` orthogonal to ``basis``."""
    proj = renormalized.projectors
    if proj.commuting:
        raise ValueError("residual_z needs ket-valued projectors")
    flat = proj.vectors.reshape(-1, proj.dim)
    inside = (flat @ basis.conj()) @ basis.T  # rows: components of each ket inside the subspace
    z = flat - inside
    return float(np.sum(np.abs(z) ** 2))


def r_diagonal(povm: ProjectorSet, basis: str = "fock") -> np.ndarray:
    """Diagonal of the unweighted POVM sum in the common eigenbasis."""
    if basis != "fock":
        raise ValueError(f"unsupported basis {basis!r}")
    if not povm.commuting:
        raise ValueError(f"r_diagonal needs a commuting POVM, got {povm.kind.value}")
    return povm.diagonals.sum(axis=0)


def factor_surface(renormalized: RenormalizedProjectorSet, grid: BinGrid) -> list[dict]:
    """One row per registered cell: position, angle and renormalization factor."""
    rows = []
    random_phase = renormalized.projectors.commuting
    for (j, i), factor in zip(renormalized.labels, renormalized.factors):
        rows.append({
            "phase_index": int(j),
            "bin_index": int(i),
            "bin_center": float(grid.bin_centers[i]),
            "theta": float("nan") if random_phase else float(grid.phases[j]),
            "factor": float(factor),
        })
    return rows
