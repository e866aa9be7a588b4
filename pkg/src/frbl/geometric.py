"""Geometric data: recognition, frame constructions, geometrization, kernels.

A datum is geometric when some coupling Sigma with identity diagonal blocks
makes every scaled pushforward Q_j Sigma Q_j* the identity while
sum_j d_j Q_j* Q_j stays below the exponent diagonal. Geometric data have
best constant zero, and every certified-extremizable datum is equivalent to
a geometric one by an explicit change of variables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._linalg import block_diag, min_eig, opnorm, sym
from .core import Datum, SymmetricOperator, parse_rational
from .coupling import Coupling
from .solver import Extremizers, certify

__all__ = [
    "NotGeometricError",
    "GeometricWitness",
    "is_geometric",
    "from_frames",
    "frame_sigma",
    "identity_extremizers",
    "geometrize",
    "gauss_kernel_datum",
    "random_geometric_datum",
]

_FRAME_TOL = 1e-10


class NotGeometricError(RuntimeError):
    """The geometric conditions fail beyond tolerance."""


@dataclass(frozen=True)
class GeometricWitness:
    """Sigma together with the residuals of the two geometric conditions."""

    sigma: Coupling
    qq_gram: float
    lambda_slack: float

    def __post_init__(self) -> None:
        dims = self.sigma.block_dims
        resid = self.sigma.block_residual([np.eye(n) for n in dims])
        if resid > 1e-9:
            raise ValueError(f"sigma diagonal blocks deviate from identity by {resid:.3e}")

    def to_json_dict(self) -> dict:
        return {
            "sigma": self.sigma.to_json_dict(),
            "qq_gram": self.qq_gram,
            "lambda_slack": self.lambda_slack,
        }


def _as_coupling(sigma, dims) -> Coupling:
    if isinstance(sigma, Coupling):
        return sigma
    mat = sigma.matrix if isinstance(sigma, SymmetricOperator) else np.asarray(sigma, float)
    return Coupling(SymmetricOperator(mat), tuple(dims))


def is_geometric(datum: Datum, sigma=None, tol: float = 1e-6) -> GeometricWitness:
    """Check the geometric conditions for the given (default identity) Sigma.

    Returns the witness on success; raises NotGeometricError naming the
    failing pushforward or eigenvalue. Sigma is used only through products,
    so rank-deficient witnesses are fine.
    """
    if not datum.scaling_ok:
        raise ValueError(
            f"scaling condition fails: {datum.scaling_lhs} != {datum.scaling_rhs}"
        )
    if sigma is None:
        sigma = np.eye(datum.total_input_dim)
    cpl = _as_coupling(sigma, datum.input_dims)
    if cpl.dim != datum.total_input_dim:
        raise ValueError("sigma dimension does not match the datum")
    s = cpl.matrix
    worst = 0.0
    for j, qj in enumerate(datum.weighted_maps):
        dev = opnorm(sym(qj @ s @ qj.T) - np.eye(datum.output_dims[j]))
        worst = max(worst, dev)
        if dev > tol:
            raise NotGeometricError(
                f"output {j + 1}: ||Q_j Sigma Q_j* - id|| = {dev:.3e} exceeds {tol:g}"
            )
    lam = np.diag(datum.exponent_diag)
    for dj, qj in zip(datum.d_float, datum.weighted_maps):
        lam = lam - dj * (qj.T @ qj)
    slack = min_eig(sym(lam))
    if slack < -tol:
        raise NotGeometricError(
            f"exponent-diagonal slack eigenvalue {slack:.3e} below -{tol:g}"
        )
    return GeometricWitness(sigma=cpl, qq_gram=float(worst), lambda_slack=float(slack))


def _check_isometries(maps, kind: str):
    out = []
    for idx, raw in enumerate(maps):
        a = np.asarray(raw, dtype=float)
        if a.ndim != 2:
            raise ValueError(f"{kind} map {idx + 1} is not a matrix")
        dev = opnorm(a @ a.T - np.eye(a.shape[0]))
        if dev > _FRAME_TOL:
            raise ValueError(
                f"{kind} map {idx + 1} is not a co-isometry: ||A A* - id|| = {dev:.3e}"
            )
        out.append(a)
    return out


def from_frames(U_maps, V_maps, c, d) -> Datum:
    """Build the geometric datum determined by frames on a common space.

    U_maps are co-isometries onto the input factors, V_maps onto the output
    factors, satisfying the frame identity sum c_i U_i* U_i = sum d_j V_j* V_j
    with the stacked U bijective. The maps are B_j = V_j S^{-1} Lambda^{-1}
    with S the stacked U block column; the result is geometric with
    Sigma = S S* (identity diagonal blocks by the isometry property).
    """
    us = _check_isometries(U_maps, "input")
    vs = _check_isometries(V_maps, "output")
    c_exact = tuple(parse_rational(x, f"c[{i + 1}]") for i, x in enumerate(c))
    d_exact = tuple(parse_rational(x, f"d[{j + 1}]") for j, x in enumerate(d))
    if len(c_exact) != len(us) or len(d_exact) != len(vs):
        raise ValueError("exponent counts do not match the map counts")
    if any(x <= 0 for x in c_exact) or any(x <= 0 for x in d_exact):
        raise ValueError("exponents must be positive")

    n_amb = us[0].shape[1]
    for a in us + vs:
        if a.shape[1] != n_amb:
            raise ValueError("all frame maps must share the ambient domain")
    gram_in = sum(float(ci) * (u.T @ u) for ci, u in zip(c_exact, us))
    gram_out = sum(float(dj) * (v.T @ v) for dj, v in zip(d_exact, vs))
    dev = opnorm(gram_in - gram_out)
    if dev > _FRAME_TOL * max(1.0, opnorm(gram_in)):
        raise ValueError(f"frame identity fails: ||sum c U*U - sum d V*V|| = {dev:.3e}")

    s = np.vstack(us)
    if s.shape[0] != s.shape[1]:
        raise ValueError(
            f"stacked input maps are {s.shape[0]}x{s.shape[1]}; a bijection needs "
            "total input dimension equal to the ambient dimension"
        )
    floor = min_eig(sym(gram_in))
    if floor <= _FRAME_TOL:
        raise ValueError(f"stacked input map is not injective (gram floor {floor:.3e})")

    s_inv = np.linalg.inv(s)
    input_dims = tuple(u.shape[0] for u in us)
    output_dims = tuple(v.shape[0] for v in vs)
    grid = []
    offset = 0
    for i, ni in enumerate(input_dims):
        row = []
        for v, dj in zip(vs, d_exact):
            qj = v @ s_inv
            row.append(qj[:, offset:offset + ni] / float(c_exact[i]))
        grid.append(tuple(row))
        offset += ni
    return Datum(
        input_dims=input_dims,
        output_dims=output_dims,
        c=c_exact,
        d=d_exact,
        B=tuple(grid),
    )


def frame_sigma(U_maps) -> np.ndarray:
    """The canonical geometric witness S S* for stacked frame maps."""
    s = np.vstack([np.asarray(u, dtype=float) for u in U_maps])
    return sym(s @ s.T)


def identity_extremizers(datum: Datum, sigma=None) -> Extremizers:
    """Identity V and U with the given (default identity) coupling.

    These are the exact extremizers of a geometric datum; couple with
    `certify` to validate constructions at tight tolerance.
    """
    if sigma is None:
        sigma = np.eye(datum.total_input_dim)
    cpl = _as_coupling(sigma, datum.input_dims)
    from .core import SpdOperator

    return Extremizers(
        V_list=tuple(SpdOperator(np.eye(n)) for n in datum.input_dims),
        U_list=tuple(SpdOperator(np.eye(m)) for m in datum.output_dims),
        Pi=cpl,
    )


def _spd_sqrt_strict(a: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root and its inverse; refuses near-singular input."""
    w, v = np.linalg.eigh(sym(a))
    if w[0] <= 1e-12 * max(1.0, w[-1]):
        raise NotGeometricError(f"{what} is numerically singular (eigenvalue {w[0]:.3e})")
    root = (v * np.sqrt(w)) @ v.T
    inv_root = (v / np.sqrt(w)) @ v.T
    return sym(root), sym(inv_root)


def geometrize(datum: Datum, ext: Extremizers, tol: float = 1e-6) -> dict:
    """Conjugate a certified datum into an equivalent geometric one.

    Output maps are C_j^{-1} B_ij C_i^{-1} with C_j the square root of the
    weighted pushforward of the coupling and C_i = V_i^{1/2}. The returned
    shift satisfies dg(original) = dg(geometric) + dg_shift, with the
    geometric value zero; Sigma' = C Pi C is the new witness. Refuses
    extremizers that do not certify.
    """
    cert = certify(datum, ext, tol)
    if cert.verdict != "CertifiedOptimal":
        raise NotGeometricError(
            f"extremizers do not certify (verdict {cert.verdict}); "
            "geometrization needs a certified optimum"
        )
    pi = ext.Pi.matrix
    c_blocks = []
    c_inv_blocks = []
    for i, v in enumerate(ext.V_list):
        root, inv_root = _spd_sqrt_strict(v.matrix, f"V[{i + 1}]")
        c_blocks.append(root)
        c_inv_blocks.append(inv_root)
    cj_list = []
    cj_inv = []
    for j, qj in enumerate(datum.weighted_maps):
        root, inv_root = _spd_sqrt_strict(qj @ pi @ qj.T, f"pushforward {j + 1}")
        cj_list.append(root)
        cj_inv.append(inv_root)

    grid = []
    for i in range(datum.k):
        row = []
        for j in range(datum.m):
            block = datum.B[i][j]
            if block is None:
                row.append(None)
            else:
                row.append(cj_inv[j] @ block @ c_inv_blocks[i])
        grid.append(tuple(row))
    geo = Datum(
        input_dims=datum.input_dims,
        output_dims=datum.output_dims,
        c=datum.c,
        d=datum.d,
        B=tuple(grid),
    )
    c_full = block_diag(c_blocks)
    sigma = sym(c_full @ pi @ c_full)
    # Residual solve error leaves the diagonal blocks a whisker off the
    # identity; a block-diagonal congruence restores them exactly and
    # preserves positivity.
    offsets = geo.input_offsets
    corr = []
    for i, n in enumerate(geo.input_dims):
        block = sigma[offsets[i]:offsets[i + 1], offsets[i]:offsets[i + 1]]
        _, inv_root = _spd_sqrt_strict(block, f"sigma block {i + 1}")
        corr.append(inv_root)
    corr_full = block_diag(corr)
    sigma = sym(corr_full @ sigma @ corr_full)
    witness = is_geometric(geo, sigma, tol=10.0 * tol)
    return {
        "datum_geometric": geo,
        "C": c_full,
        "C_j": cj_list,
        "Sigma": witness.sigma,
        "dg_shift": cert.value,
        "witness": witness,
    }


def _rationalize_exponents(values, total: Fraction):
    """Exact positive rationals close to `values` summing exactly to `total`."""
    if not values:
        if total != 0:
            raise ValueError("no appended factors to absorb the exact scaling residue")
        return []
    out = [Fraction(float(x)).limit_denominator(10**9) for x in values]
    out[-1] = total - sum(out[:-1])
    if any(x <= 0 for x in out):
        raise ValueError("rationalized exponents failed to stay positive")
    return out


def gauss_kernel_datum(Q, U_maps, V_maps, c, d) -> Datum:
    """Datum from frames plus a symmetric kernel operator on the ambient space.

    Positive eigenpairs of the kernel become appended 1-D input factors with
    the eigenvalues as exponents; negative eigenpairs become 1-D output
    factors. Exponents are rationalized with the last appended one repaired
    so the exact scaling identity carries over. The result is geometric.
    """
    q_mat = Q.matrix if isinstance(Q, SymmetricOperator) else sym(np.asarray(Q, float))
    h = q_mat.shape[0]
    us = _check_isometries(U_maps, "input")
    vs = _check_isometries(V_maps, "output")
    for a in us + vs:
        if a.shape[1] != h:
            raise ValueError("frame maps must share the kernel's ambient space")
    c_exact = [parse_rational(x, f"c[{i + 1}]") for i, x in enumerate(c)]
    d_exact = [parse_rational(x, f"d[{j + 1}]") for j, x in enumerate(d)]

    gram_in = sum(float(ci) * (u.T @ u) for ci, u in zip(c_exact, us))
    gram_out = sum(float(dj) * (v.T @ v) for dj, v in zip(d_exact, vs))
    resid = opnorm(q_mat + gram_in - gram_out)
    if resid > _FRAME_TOL * max(1.0, opnorm(gram_out)):
        raise ValueError(
            f"kernel hypothesis fails: ||Q + sum c U*U - sum d V*V|| = {resid:.3e}"
        )
    floor = min_eig(sym(gram_out))
    if floor <= 1e-10:
        raise ValueError(f"sum d V*V is not positive-definite (eigenvalue {floor:.3e})")

    w, vecs = np.linalg.eigh(q_mat)
    cut = 1e-10 * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    pos = [(float(w[t]), vecs[:, t]) for t in range(h) if w[t] > cut]
    neg = [(-float(w[t]), vecs[:, t]) for t in range(h) if w[t] < -cut]
    n_in = sum(u.shape[0] for u in us)
    if h < len(pos) + n_in:
        raise ValueError(
            f"ambient dimension {h} is below kernel positive signature {len(pos)} "
            f"plus total input dimension {n_in}"
        )

    base_in = sum(Fraction(u.shape[0]) * ci for u, ci in zip(us, c_exact))
    base_out = sum(Fraction(v.shape[0]) * dj for v, dj in zip(vs, d_exact))
    if pos and neg:
        lam_exact = [Fraction(x).limit_denominator(10**9) for x, _ in pos]
        mu_exact = _rationalize_exponents([x for x, _ in neg], base_in + sum(lam_exact) - base_out)
    elif pos:
        lam_exact = _rationalize_exponents([x for x, _ in pos], base_out - base_in)
        mu_exact = []
    elif neg:
        lam_exact = []
        mu_exact = _rationalize_exponents([x for x, _ in neg], base_in - base_out)
    else:
        if base_in != base_out:
            raise ValueError("zero kernel with exactly unbalanced exponents")
        lam_exact, mu_exact = [], []

    u_aug = list(us) + [vec.reshape(1, h) for _, vec in pos]
    v_aug = list(vs) + [vec.reshape(1, h) for _, vec in neg]
    return from_frames(
        u_aug,
        v_aug,
        list(c_exact) + lam_exact,
        list(d_exact) + mu_exact,
    )


def _random_orthogonal(rng, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def _random_rank_one_frame(rng, n: int, k: int):
    """Unit vectors q_t and exact rational c_t with sum c_t q_t q_t* = id."""
    while True:
        q, _ = np.linalg.qr(rng.standard_normal((k, n)))
        norms2 = np.sum(q * q, axis=1)
        if np.min(norms2) >= 0.05:
            break
    vecs = [q[t] / math.sqrt(norms2[t]) for t in range(k)]
    weights = _rationalize_exponents(list(norms2), Fraction(n))
    return vecs, weights


def random_geometric_datum(seed: int) -> Datum:
    """Seeded random geometric datum for duality and zero-constant tests.

    Alternates between rank-one frame data (singular canonical witness),
    rotated partition data built from orthogonal frames, and direct sums of
    the two, so both full-rank and degenerate coupling paths get exercised.
    """
    return _random_geometric(seed, allow_sum=True)


def _random_geometric(seed: int, allow_sum: bool) -> Datum:
    rng = np.random.default_rng([7, seed])
    kind = seed % 3 if allow_sum else seed % 2
    if kind == 0:
        n = int(rng.integers(2, 4))
        k = n + int(rng.integers(1, 3))
        vecs, weights = _random_rank_one_frame(rng, n, k)
        grid = tuple((vec.reshape(n, 1),) for vec in vecs)
        return Datum(
            input_dims=(1,) * k,
            output_dims=(n,),
            c=tuple(weights),
            d=(Fraction(1),),
            B=grid,
        )
    if kind == 1:
        n = int(rng.integers(2, 5))
        w_in = _random_orthogonal(rng, n)
        w_out = _random_orthogonal(rng, n)
        split = max(1, int(rng.integers(1, n)))
        v_maps = [w_out[:split], w_out[split:]]
        return from_frames([w_in], v_maps, (Fraction(1),), (Fraction(1), Fraction(1)))
    from .core import direct_sum

    a = _random_geometric(3 * seed + 1, allow_sum=False)
    b = _random_geometric(3 * seed + 2, allow_sum=False)
    return direct_sum(a, b)
