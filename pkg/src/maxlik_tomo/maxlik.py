"""Maximum-likelihood reconstruction by fixed-point iteration.

A state ``rho`` is extremal for the data when ``R(rho) rho = rho`` with

    R(rho) = sum_i f_i / p_i(rho) * Pi_i,    p_i(rho) = Tr[rho Pi_i].

Three solvers are provided: a general one over density matrices, one
restricted to pure states, and an expectation-maximization solver for
commuting (diagonal) POVMs.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .fock import check_dim
from .measurement import CorrelationMatrix, FrequencyData, ProjectorSet

log = logging.getLogger(__name__)

# floor applied to predicted probabilities inside R weights
PROB_FLOOR = 1e-14
HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-12
MIN_DILUTION = 1e-12
# a run stops early once its best residual has not improved by STALL_GAIN within STALL_ITERS steps
STALL_ITERS = 1000
STALL_GAIN = 0.99
THREADS_ENV = "MAXLIK_TOMO_THREADS"


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, positive-semidefinite, unit-trace matrix (validated)."""

    entries: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.entries, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError("density matrix must be square")
        check_dim(rho.shape[0])
        if np.max(np.abs(rho - rho.conj().T), initial=0.0) > HERMITIAN_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > TRACE_TOL:
            raise ValueError(f"density matrix trace {np.trace(rho).real:.15g} != 1")
        if np.linalg.eigvalsh(rho)[0] < -PSD_TOL:
            raise ValueError("density matrix is not positive semidefinite")
        rho.setflags(write=False)
        object.__setattr__(self, "entries", rho)

    @classmethod
    def from_array(cls, rho) -> "DensityMatrix":
        """Symmetrize and trace-normalize an (approximately valid) matrix first."""
        rho = np.asarray(rho, dtype=complex)
        rho = 0.5 * (rho + rho.conj().T)
        return cls(rho / np.trace(rho).real)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(check_dim(dim), dtype=complex) / dim)

    @classmethod
    def pure(cls, amplitudes) -> "DensityMatrix":
        psi = np.asarray(amplitudes, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls.from_array(np.outer(psi, psi.conj()))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Weights ``r_k`` (descending, clipped at 0) and eigenvectors ``|phi_k>`` as columns."""
        w, v = np.linalg.eigh(self.entries)
        order = np.argsort(w)[::-1]
        return np.clip(w[order], 0.0, None), v[:, order]

    def to_json(self) -> list:
        return [[[float(z.real), float(z.imag)] for z in row] for row in self.entries]

    @classmethod
    def from_json(cls, data) -> "DensityMatrix":
        arr = np.asarray(data, dtype=float)
        return cls.from_array(arr[..., 0] + 1j * arr[..., 1])


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 20000
    tol: float = 1e-8
    dilution: float = 0.5
    restarts: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not 0 < self.dilution <= 1:
            raise ValueError("dilution must lie in (0, 1]")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")


@dataclass
class ReconstructionResult:
    rho: DensityMatrix
    method: str
    iterations: int
    converged: bool
    log_likelihood_per_event: float
    entropy_S: float
    rel_entropy_K: float
    extremal_residual: float
    restart_spread: float = 0.0
    restart_loglik_spread: float = 0.0
    floor_hits: int = 0
    amplitudes: np.ndarray | None = None
    restart_log_likelihoods: list = field(default_factory=list)

    @property
    def rel_entropy_percent(self) -> float:
        return 100.0 * self.rel_entropy_K / self.entropy_S if self.entropy_S > 0 else float("nan")

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "dim": self.rho.dim,
            "iterations": self.iterations,
            "converged": self.converged,
            "log_likelihood_per_event": self.log_likelihood_per_event,
            "entropy_S": self.entropy_S,
            "rel_entropy_K": self.rel_entropy_K,
            "rel_entropy_percent": self.rel_entropy_percent,
            "extremal_residual": self.extremal_residual,
            "restart_spread": self.restart_spread,
            "restart_loglik_spread": self.restart_loglik_spread,
            "restart_log_likelihoods": list(self.restart_log_likelihoods),
            "floor_hits": self.floor_hits,
            "rho": self.rho.to_json(),
        }
        if self.amplitudes is not None:
            out["amplitudes"] = [[float(z.real), float(z.imag)] for z in self.amplitudes]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ReconstructionResult":
        amps = data.get("amplitudes")
        if amps is not None:
            amps = np.asarray(amps, dtype=float)
            amps = amps[:, 0] + 1j * amps[:, 1]
        return cls(
            rho=DensityMatrix.from_json(data["rho"]),
            method=data["method"],
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            log_likelihood_per_event=float(data["log_likelihood_per_event"]),
            entropy_S=float(data["entropy_S"]),
            rel_entropy_K=float(data["rel_entropy_K"]),
            extremal_residual=float(data["extremal_residual"]),
            restart_spread=float(data.get("restart_spread", 0.0)),
            restart_loglik_spread=float(data.get("restart_loglik_spread", 0.0)),
            floor_hits=int(data.get("floor_hits", 0)),
            amplitudes=amps,
            restart_log_likelihoods=list(data.get("restart_log_likelihoods", [])),
        )


def _density(rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        return rho.entries
    return np.asarray(rho, dtype=complex)


def _check_frequencies(projectors: ProjectorSet, freqs: FrequencyData) -> np.ndarray:
    if freqs.counts.size != len(projectors):
        raise ValueError("projectors and frequencies are not aligned")
    f = freqs.frequencies
    if np.any(f <= 0):
        raise ValueError("all retained frequencies must be > 0; drop empty bins first")
    return f


def _loglik(p: np.ndarray, f: np.ndarray) -> float:
    if np.any(p <= 0):
        return -np.inf
    return float(np.dot(f, np.log(p)))


def log_likelihood(rho, projectors: ProjectorSet, freqs: FrequencyData) -> float:
    """Log-likelihood per event, ``sum_i f_i ln p_i``; ``-inf`` if an observed cell has ``p_i = 0``."""
    f = _check_frequencies(projectors, freqs)
    return _loglik(projectors.probabilities(_density(rho)), f)


def relative_entropy(rho, projectors: ProjectorSet, freqs: FrequencyData) -> float:
    """``K = sum_i f_i ln(f_i / p_i)``; zero exactly when every ``p_i = f_i``."""
    f = _check_frequencies(projectors, freqs)
    p = projectors.probabilities(_density(rho))
    if np.any(p <= 0):
        return np.inf
    return float(np.dot(f, np.log(f) - np.log(p)))


def relative_entropy_percent(rho, projectors: ProjectorSet, freqs: FrequencyData) -> float:
    return 100.0 * relative_entropy(rho, projectors, freqs) / freqs.entropy()


def _weights(p: np.ndarray, f: np.ndarray) -> tuple[np.ndarray, int]:
    low = p < PROB_FLOOR
    return f / np.where(low, PROB_FLOOR, p), int(np.count_nonzero(low))


def r_operator(rho, projectors: ProjectorSet, freqs: FrequencyData) -> np.ndarray:
    """``R = sum_i (f_i / p_i) Pi_i`` with ``p_i`` floored at ``PROB_FLOOR``."""
    f = _check_frequencies(projectors, freqs)
    w, hits = _weights(projectors.probabilities(_density(rho)), f)
    if hits:
        log.warning("r_operator: %d predicted probabilities floored at %g", hits, PROB_FLOOR)
    return projectors.operator_sum(w)


def _hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Wishart-style random state ``G G^dagger / Tr`` with complex Gaussian ``G``."""
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    return _hermitize(rho / np.trace(rho).real)


def trace_distance(a, b) -> float:
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(_hermitize(_density(a) - _density(b))))))


Callback = Callable[[int, np.ndarray, float], None]


class _StallGuard:
    """Detects runs whose residual has hit the floating-point floor above ``tol``."""

    def __init__(self):
        self.best = np.inf
        self.since = 0

    def stalled(self, residual: float) -> bool:
        if residual < STALL_GAIN * self.best:
            self.best = residual
            self.since = 0
        else:
            self.since += 1
        return self.since >= STALL_ITERS


@dataclass
class _Run:
    rho: np.ndarray
    iterations: int
    converged: bool
    loglik: float
    residual: float
    floor_hits: int
    amplitudes: np.ndarray | None = None


def _iterate_mixed(projectors, f, rho, config: SolverConfig, callback: Callback | None) -> _Run:
    p = projectors.probabilities(rho)
    ll = _loglik(p, f)
    hits = 0
    residual = np.inf
    guard = _StallGuard()
    it = 0
    for it in range(1, config.max_iters + 1):
        w, h = _weights(p, f)
        hits += h
        R = projectors.operator_sum(w)
        Rrho = R @ rho
        residual = float(np.linalg.norm(Rrho - rho))
        if residual <= config.tol:
            return _Run(rho, it - 1, True, ll, residual, hits)
        if guard.stalled(residual):
            log.info("mixed run stalled at residual %.3g after %d iterations", residual, it - 1)
            return _Run(rho, it - 1, False, ll, residual, hits)
        target = _hermitize(Rrho @ R)
        target /= np.trace(target).real
        d = config.dilution
        while True:
            cand = (1.0 - d) * rho + d * target
            pc = projectors.probabilities(cand)
            llc = _loglik(pc, f)
            if llc >= ll:
                break
            d *= 0.5
            if d < MIN_DILUTION:
                return _Run(rho, it, False, ll, residual, hits)
        rho, p, ll = cand, pc, llc
        if callback is not None:
            callback(it, rho, ll)
    w, h = _weights(p, f)
    residual = float(np.linalg.norm(projectors.operator_sum(w) @ rho - rho))
    return _Run(rho, it, residual <= config.tol, ll, residual, hits + h)


def _iterate_pure(projectors, f, psi, config: SolverConfig, callback: Callback | None) -> _Run:
    psi = psi / np.linalg.norm(psi)
    rho = np.outer(psi, psi.conj())
    p = projectors.probabilities(rho)
    ll = _loglik(p, f)
    hits = 0
    residual = np.inf
    guard = _StallGuard()
    it = 0
    for it in range(1, config.max_iters + 1):
        w, h = _weights(p, f)
        hits += h
        step = projectors.operator_sum(w) @ psi - psi
        residual = float(np.linalg.norm(step))
        if residual <= config.tol:
            return _Run(rho, it - 1, True, ll, residual, hits, psi)
        if guard.stalled(residual):
            log.info("pure run stalled at residual %.3g after %d iterations", residual, it - 1)
            return _Run(rho, it - 1, False, ll, residual, hits, psi)
        d = config.dilution
        while True:
            cand = psi + d * step
            cand /= np.linalg.norm(cand)
            rc = np.outer(cand, cand.conj())
            pc = projectors.probabilities(rc)
            llc = _loglik(pc, f)
            if llc >= ll:
                break
            d *= 0.5
            if d < MIN_DILUTION:
                return _Run(rho, it, False, ll, residual, hits, psi)
        psi, rho, p, ll = cand, rc, pc, llc
        if callback is not None:
            callback(it, rho, ll)
    w, h = _weights(p, f)
    residual = float(np.linalg.norm(projectors.operator_sum(w) @ psi - psi))
    return _Run(rho, it, residual <= config.tol, ll, residual, hits + h, psi)


def _iterate_diagonal(povm, f, pops, config: SolverConfig, callback: Callback | None) -> _Run:
    D = povm.diagonals
    pops = pops / pops.sum()
    q = D @ pops
    ll = _loglik(q, f)
    hits = 0
    residual = np.inf
    guard = _StallGuard()
    it = 0
    for it in range(1, config.max_iters + 1):
        w, h = _weights(q, f)
        hits += h
        r_diag = w @ D
        residual = float(np.linalg.norm((r_diag - 1.0) * pops))
        if residual <= config.tol:
            break
        if guard.stalled(residual):
            log.info("diagonal run stalled at residual %.3g after %d iterations", residual, it - 1)
            return _Run(np.diag(pops).astype(complex), it - 1, False, ll, residual, hits)
        pops = pops * r_diag
        pops /= pops.sum()
        q = D @ pops
        ll = _loglik(q, f)
        if callback is not None:
            callback(it, np.diag(pops).astype(complex), ll)
    else:
        w, h = _weights(q, f)
        hits += h
        residual = float(np.linalg.norm((w @ D - 1.0) * pops))
        return _Run(np.diag(pops).astype(complex), it, residual <= config.tol, ll, residual, hits)
    return _Run(np.diag(pops).astype(complex), it - 1, True, ll, residual, hits)


def _thread_count(n_tasks: int) -> int:
    cap = os.environ.get(THREADS_ENV)
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_tasks))


def _run_all(run_one, starts: list) -> list[_Run]:
    if len(starts) == 1:
        return [run_one(starts[0])]
    workers = _thread_count(len(starts))
    if workers == 1:
        return [run_one(s) for s in starts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_one, starts))


def _assemble(method: str, runs: list[_Run], freqs: FrequencyData, f: np.ndarray, projectors) -> ReconstructionResult:
    lls = [r.loglik for r in runs]
    # highest likelihood wins; ties go to the lowest run index, canonical run first
    best = runs[int(np.argmax(lls))]
    spread = 0.0
    for a in range(len(runs)):
        for b in range(a + 1, len(runs)):
            spread = max(spread, trace_distance(runs[a].rho, runs[b].rho))
    S = freqs.entropy()
    p = projectors.probabilities(best.rho)
    K = float(np.dot(f, np.log(f) - np.log(p))) if np.all(p > 0) else np.inf
    return ReconstructionResult(
        rho=DensityMatrix.from_array(best.rho),
        method=method,
        iterations=best.iterations,
        converged=best.converged,
        log_likelihood_per_event=best.loglik,
        entropy_S=S,
        rel_entropy_K=K,
        extremal_residual=best.residual,
        restart_spread=float(spread),
        restart_loglik_spread=float(max(lls) - min(lls)),
        floor_hits=sum(r.floor_hits for r in runs),
        amplitudes=best.amplitudes,
        restart_log_likelihoods=lls,
    )


def _restart_rngs(config: SolverConfig) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(config.restarts)]


def solve_mixed(projectors: ProjectorSet, freqs: FrequencyData, config: SolverConfig = SolverConfig(),
                callback: Callback | None = None, start=None) -> ReconstructionResult:
    """Diluted ``R rho R`` iteration from the maximally mixed state.

    Each step moves to ``(1 - d) rho + d N[R rho R]``; a step that lowers the
    likelihood is retried with ``d`` halved, so progress is monotone. The
    ``callback`` (if given) only sees the canonical run.
    """
    if projectors.commuting:
        log.info("solve_mixed on a commuting POVM; solve_diagonal is equivalent and faster")
    f = _check_frequencies(projectors, freqs)
    dim = projectors.dim
    rho0 = np.eye(dim, dtype=complex) / dim if start is None else _density(start).copy()
    starts = [(rho0, callback)] + [(random_density(dim, rng), None) for rng in _restart_rngs(config)]
    runs = _run_all(lambda s: _iterate_mixed(projectors, f, s[0], config, s[1]), starts)
    return _assemble("mixed", runs, freqs, f, projectors)


def _pure_start(projectors: ProjectorSet, f: np.ndarray) -> np.ndarray:
    # dominant eigenvector of R evaluated at the maximally mixed state
    rho = np.eye(projectors.dim) / projectors.dim
    w, _ = _weights(projectors.probabilities(rho), f)
    _, vecs = np.linalg.eigh(projectors.operator_sum(w))
    return vecs[:, -1]


def solve_pure(projectors: ProjectorSet, freqs: FrequencyData, config: SolverConfig = SolverConfig(),
               callback: Callback | None = None, start=None) -> ReconstructionResult:
    """Likelihood ascent over pure states, ``psi <- N[psi + d (R psi - psi)]``.

    With ``d = 1`` this is the plain ``psi <- N[R psi]`` update. The canonical
    run starts from the dominant eigenvector of ``R`` at the maximally mixed
    state; restarts use random Gaussian vectors.
    """
    f = _check_frequencies(projectors, freqs)
    dim = projectors.dim
    psi0 = _pure_start(projectors, f) if start is None else np.asarray(start, dtype=complex)
    starts = [(psi0, callback)] + [
        (rng.standard_normal(dim) + 1j * rng.standard_normal(dim), None) for rng in _restart_rngs(config)
    ]
    runs = _run_all(lambda s: _iterate_pure(projectors, f, s[0], config, s[1]), starts)
    for r in runs:
        r.amplitudes = align_phase(r.amplitudes)
    return _assemble("pure", runs, freqs, f, projectors)


def solve_diagonal(povm: ProjectorSet, freqs: FrequencyData, config: SolverConfig = SolverConfig(),
                   callback: Callback | None = None, start=None) -> ReconstructionResult:
    """Expectation-maximization on photon-number populations for a commuting POVM."""
    if not povm.commuting:
        raise ValueError(f"solve_diagonal needs a commuting POVM, got {povm.kind.value}")
    f = _check_frequencies(povm, freqs)
    dim = povm.dim
    p0 = np.full(dim, 1.0 / dim) if start is None else np.asarray(start, dtype=float)
    starts = [(p0, callback)] + [(rng.dirichlet(np.ones(dim)), None) for rng in _restart_rngs(config)]
    runs = _run_all(lambda s: _iterate_diagonal(povm, f, s[0], config, s[1]), starts)
    return _assemble("diagonal", runs, freqs, f, povm)


def align_phase(psi: np.ndarray) -> np.ndarray:
    """Remove the global phase by making the largest-magnitude amplitude real positive."""
    psi = np.asarray(psi, dtype=complex)
    k = int(np.argmax(np.abs(psi)))
    out = psi * np.exp(-1j * np.angle(psi[k]))
    out[k] = abs(psi[k])
    return out


@dataclass(frozen=True)
class ExtremalResiduals:
    """Largest violations of the matrix-element forms of the extremal equation.

    ``matrix`` checks ``f_i Q_ij = Q_ii (C^-1 Q)_ij`` and ``diagonal`` checks
    ``(C^-1 Q)_ii = f_i``, where ``Q_kj = <y_k|rho|y_j>``.
    """

    matrix: float
    diagonal: float
    skipped: bool = False
    reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def extremal_residuals(rho, projectors: ProjectorSet, freqs: FrequencyData,
                       corr: CorrelationMatrix) -> ExtremalResiduals:
    if not corr.well_conditioned:
        reason = f"correlation matrix ill-conditioned (cond={corr.condition_number:.3g})"
        log.warning("extremal_residuals skipped: %s", reason)
        return ExtremalResiduals(np.nan, np.nan, True, reason)
    f = _check_frequencies(projectors, freqs)
    kets = projectors.kets()
    Q = kets.conj() @ _density(rho) @ kets.T
    CQ = np.linalg.solve(corr.entries, Q)
    diag_q = np.real(np.diagonal(Q))
    eq_matrix = f[:, None] * Q - diag_q[:, None] * CQ
    eq_diag = np.real(np.diagonal(CQ)) - f
    return ExtremalResiduals(float(np.max(np.abs(eq_matrix))), float(np.max(np.abs(eq_diag))))
