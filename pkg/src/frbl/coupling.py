"""Couplings with prescribed diagonal blocks and the inner log-det maximization.

Given SPD marginal blocks K_1..K_k, the coupling set consists of the
positive-semidefinite N x N matrices whose i-th diagonal block is K_i
(covariances of joint Gaussians with fixed marginals). The inner problem
maximizes

    sum_j d_j log det(B_j Lambda K Lambda B_j*)

over that set. The objective is concave; optima may sit on the PSD
boundary, so the solver anneals a log-det barrier and ascends only the
off-diagonal blocks, which keeps the prescribed-block constraint
structural rather than penalized.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._linalg import block_diag, chol_logdet, min_eig, offsets_of, opnorm, sym
from .core import Datum, SpdOperator, SymmetricOperator

__all__ = [
    "PSD_SLACK",
    "DEFAULT_MU_SCHEDULE",
    "FinitenessError",
    "ConvergenceError",
    "Coupling",
    "CouplingSolution",
    "blockdiag_coupling",
    "coupling_from_matrix",
    "objective",
    "maximize_coupling",
]

PSD_SLACK = 1e-9
BLOCK_RTOL = 1e-9
DEFAULT_MU_SCHEDULE = tuple(10.0 ** (-t) for t in range(9))

_ARMIJO = 1e-4
_STEP_FLOOR = 1e-20


class FinitenessError(RuntimeError):
    """The requested quantity is infinite or undefined for this datum."""


class ConvergenceError(RuntimeError):
    """Iteration budget exhausted before reaching tolerance.

    The best iterate found so far is attached as `best`.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class Coupling:
    """A PSD operator on the direct sum, tagged with the factor dimensions.

    Mild negative eigenvalues from rounding are tolerated: the minimum
    eigenvalue must be >= -1e-9 times the operator norm.
    """

    ambient: SymmetricOperator
    block_dims: tuple[int, ...]

    def __post_init__(self) -> None:
        amb = self.ambient
        if not isinstance(amb, SymmetricOperator):
            amb = SymmetricOperator(np.asarray(amb, dtype=float))
            object.__setattr__(self, "ambient", amb)
        dims = tuple(int(n) for n in self.block_dims)
        object.__setattr__(self, "block_dims", dims)
        if sum(dims) != amb.dim:
            raise ValueError(
                f"block dims {dims} sum to {sum(dims)}, ambient dimension is {amb.dim}"
            )
        lo = min_eig(amb.matrix)
        if lo < -PSD_SLACK * opnorm(amb.matrix):
            raise ValueError(f"coupling is not PSD: min eigenvalue {lo:.3e}")

    @property
    def dim(self) -> int:
        return self.ambient.dim

    @property
    def matrix(self) -> np.ndarray:
        return self.ambient.matrix

    @cached_property
    def offsets(self) -> list[int]:
        return offsets_of(self.block_dims)

    def block(self, i: int) -> np.ndarray:
        off = self.offsets
        return self.matrix[off[i]:off[i + 1], off[i]:off[i + 1]]

    def block_residual(self, K_list) -> float:
        """Max relative deviation of the diagonal blocks from the K_i."""
        worst = 0.0
        for i, k in enumerate(K_list):
            ki = k.matrix if isinstance(k, SymmetricOperator) else np.asarray(k, float)
            denom = max(opnorm(ki), np.finfo(float).tiny)
            worst = max(worst, opnorm(self.block(i) - ki) / denom)
        return worst

    def to_json_dict(self) -> dict:
        return {
            "block_dims": list(self.block_dims),
            "matrix": [[float(x) for x in row] for row in self.matrix],
        }


@dataclass(frozen=True)
class CouplingSolution:
    coupling: Coupling
    value: float
    barrier_mu: float
    grad_residual: float
    iterations: int = 0


def blockdiag_coupling(K_list) -> Coupling:
    """The independence coupling: block-diagonal with the given marginals."""
    mats = [k.matrix if isinstance(k, SymmetricOperator) else np.asarray(k, float) for k in K_list]
    return Coupling(SymmetricOperator(block_diag(mats)), tuple(m.shape[0] for m in mats))

def coupling_from_matrix(a: np.ndarray, block_dims) -> Coupling:
    return Coupling(SymmetricOperator(np.asarray(a, dtype=float)), tuple(block_dims))


def objective(datum: Datum, coupling) -> float:
    """sum_j d_j log det of the weighted pushforwards; -inf on a singular one."""
    pi = coupling.matrix if isinstance(coupling, Coupling) else np.asarray(coupling, float)
    total = 0.0
    for dj, qj in zip(datum.d_float, datum.weighted_maps):
        ld = chol_logdet(sym(qj @ pi @ qj.T))
        if ld is None:
            return float("-inf")
        total += dj * ld
    return total


def _offblock_mask(dims: tuple[int, ...]) -> np.ndarray:
    n = sum(dims)
    mask = np.ones((n, n))
    off = offsets_of(dims)
    for i in range(len(dims)):
        mask[off[i]:off[i + 1], off[i]:off[i + 1]] = 0.0
    return mask


def _phi_value(pi: np.ndarray, qjs, ds, mu: float) -> float | None:
    """Barrier objective, or None when pi or a pushforward is not PD."""
    ld_pi = chol_logdet(pi)
    if ld_pi is None:
        return None
    total = mu * ld_pi
    for dj, qj in zip(ds, qjs):
        ld = chol_logdet(sym(qj @ pi @ qj.T))
        if ld is None:
            return None
        total += dj * ld
    return total

def _phi_gradient(pi: np.ndarray, qjs, ds, mu: float) -> np.ndarray:
    grad = mu * np.linalg.inv(pi)
    for dj, qj in zip(ds, qjs):
        s = sym(qj @ pi @ qj.T)
        grad += dj * (qj.T @ np.linalg.solve(s, qj))
    return sym(grad)


def _ascend(pi, qjs, ds, mu, mask, tol, cap):
    """Maximize the barrier objective over the off-diagonal blocks.

    Ascent direction is the off-block projection of Pi G Pi (the gradient
    in the metric induced by Pi), which stays well scaled as the iterate
    approaches the PSD boundary; plain gradient is the fallback. Returns
    (pi, residual, iterations, converged).
    """
    phi = _phi_value(pi, qjs, ds, mu)
    if phi is None:
        raise ValueError("initial coupling is not positive-definite")
    step = 1.0
    stalls = 0
    value_stalls = 0
    for it in range(cap):
        grad = _phi_gradient(pi, qjs, ds, mu)
        gm = grad * mask
        resid = float(np.linalg.norm(gm))
        if resid <= tol:
            return pi, resid, it, True
        if value_stalls >= 3:
            # Objective gains have fallen to rounding noise for several
            # iterations; the value is float-optimal even though the
            # gradient (ill-conditioned near a singular optimum) is not.
            return pi, resid, it, True
        direction = (pi @ gm @ pi) * mask
        slope = float(np.sum(gm * direction))
        if not np.isfinite(slope) or slope <= 0.0:
            direction, slope = gm, resid * resid
        step = min(step * 2.0, 1e6)
        # Demanding a few ulps of real progress keeps float noise from
        # masquerading as improvement, which would starve the stall check.
        min_gain = 32.0 * np.finfo(float).eps * max(1.0, abs(phi))
        # Steps below float resolution of the iterate cannot change it.
        dir_norm = float(np.linalg.norm(direction))
        step_floor = max(
            _STEP_FLOOR,
            1e-17 * float(np.linalg.norm(pi)) / max(dir_norm, np.finfo(float).tiny),
        )
        accepted = False
        while step > step_floor:
            cand = sym(pi + step * direction)
            val = _phi_value(cand, qjs, ds, mu)
            if val is not None and val >= phi + max(_ARMIJO * step * slope, min_gain):
                gain = val - phi
                value_stalls = value_stalls + 1 if gain < 1e-13 * max(1.0, abs(val)) else 0
                pi, phi, accepted = cand, val, True
                break
            step *= 0.5
        if accepted:
            stalls = 0
        else:
            stalls += 1
            step = 1.0
            if stalls >= 2:
                # No float-representable off-block step improves the
                # objective: the iterate is numerically optimal even if
                # the gradient norm has not met tol.
                return pi, resid, it + 1, True
    grad = _phi_gradient(pi, qjs, ds, mu) * mask
    resid = float(np.linalg.norm(grad))
    return pi, resid, cap, resid <= tol


def _as_spd_arrays(K_list, input_dims) -> list[np.ndarray]:
    ks = []
    for i, k in enumerate(K_list):
        a = k.matrix if isinstance(k, SymmetricOperator) else sym(np.asarray(k, dtype=float))
        if a.shape != (input_dims[i], input_dims[i]):
            raise ValueError(
                f"K[{i + 1}] has shape {a.shape}, expected {(input_dims[i], input_dims[i])}"
            )
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"K[{i + 1}] is not positive definite") from exc
        ks.append(a)
    return ks


def _repair_warm(warm: np.ndarray, ks: list[np.ndarray], dims) -> np.ndarray:
    """Overwrite diagonal blocks with the new marginals, shrink off-blocks to PD."""
    bd = block_diag(ks)
    off = sym(np.asarray(warm, dtype=float)) - block_diag(
        [warm[o:o + n, o:o + n] for o, n in zip(offsets_of(dims), dims)]
    )
    for _ in range(64):
        cand = bd + off
        if chol_logdet(cand) is not None:
            return cand
        off *= 0.5
    return bd


def maximize_coupling(
    datum: Datum,
    K_list,
    mu_schedule=None,
    tol: float = 1e-8,
    max_iter: int = 10000,
    warm_start: Coupling | np.ndarray | None = None,
) -> CouplingSolution:
    """Maximize the pushforward log-det objective over couplings of K_1..K_k.

    Anneals the barrier weight through mu_schedule (default 1 down to 1e-8),
    warm-starting each stage from the previous one; the reported value is the
    plain objective at the final iterate, without the barrier term. The
    computation is deterministic.
    """
    ks = _as_spd_arrays(K_list, datum.input_dims)
    for j, qj in enumerate(datum.weighted_maps):
        if np.linalg.matrix_rank(qj) < datum.output_dims[j]:
            raise FinitenessError(
                f"output map {j + 1} is not surjective; the objective is unbounded below"
            )
    if mu_schedule is None:
        mu_schedule = DEFAULT_MU_SCHEDULE
    mu_schedule = tuple(float(m) for m in mu_schedule)
    if not mu_schedule or any(m <= 0 for m in mu_schedule):
        raise ValueError("mu_schedule must be a non-empty sequence of positive reals")

    dims = datum.input_dims
    if warm_start is not None:
        w = warm_start.matrix if isinstance(warm_start, Coupling) else np.asarray(warm_start, float)
        pi = _repair_warm(w, ks, dims)
    else:
        pi = block_diag(ks)
    mask = _offblock_mask(dims)
    qjs, ds = datum.weighted_maps, datum.d_float

    total_iters = 0
    resid = 0.0
    for mu in mu_schedule:
        pi, resid, used, converged = _ascend(pi, qjs, ds, mu, mask, tol, max_iter)
        total_iters += used
        if not converged:
            best = CouplingSolution(
                coupling=coupling_from_matrix(pi, dims),
                value=objective(datum, pi),
                barrier_mu=mu,
                grad_residual=resid,
                iterations=total_iters,
            )
            raise ConvergenceError(
                f"coupling ascent hit the {max_iter}-iteration cap at mu={mu:g} "
                f"with gradient residual {resid:.3e} > {tol:g}",
                best=best,
            )
    return CouplingSolution(
        coupling=coupling_from_matrix(pi, dims),
        value=objective(datum, pi),
        barrier_mu=mu_schedule[-1],
        grad_residual=resid,
        iterations=total_iters,
    )
