"""Closed-form attention parameters for every representable task in the library.

Each ``build_*`` returns parameters whose forward pass reproduces the
matching task oracle exactly (or, for the reduced-dimension builder,
within a certified bound).  Builders that assume a particular embedding
document it; the sinusoidal ones are expressed in the normalized
(orthonormal-row) base by default, with the raw ring convention
available for inspecting the classical coefficient values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import DenseHAParams, HFAParams, LinearSAParams
from .domain import EmbeddingBase, build_sinusoidal_2d
from .linalg import as_matrix, dtfs_analysis, dtfs_window, singular_values
from .tasks import FactorizedSpec

PROJECTED = "projected"


@dataclass(frozen=True)
class InteractionSpec:
    """Pairwise interaction table ``f`` (S x S) and per-symbol value rows ``w`` (S x d2)."""

    f: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f", as_matrix(self.f, "f"))
        object.__setattr__(self, "w", as_matrix(self.w, "w"))
        if self.f.shape[0] != self.f.shape[1] or self.f.shape[0] != self.w.shape[0]:
            raise ValueError("f must be square with one w row per symbol")

    @property
    def vocab_size(self) -> int:
        return self.f.shape[0]

    @property
    def target_dim(self) -> int:
        return self.w.shape[1]


def random_interaction_spec(vocab_size: int, target_dim: int, seed: int) -> InteractionSpec:
    rng = np.random.default_rng(seed)
    return InteractionSpec(
        f=rng.standard_normal((vocab_size, vocab_size)),
        w=rng.standard_normal((vocab_size, target_dim)),
    )


def interaction_targets(spec: InteractionSpec, tuples: np.ndarray) -> np.ndarray:
    """Aggregate pairwise-interaction targets: row i gets sum_j f(s_i, s_j) w(s_j)."""
    tuples = np.asarray(tuples, dtype=np.int64)
    out = np.empty(tuples.shape + (spec.target_dim,))
    for b in range(tuples.shape[0]):
        s = tuples[b]
        out[b] = spec.f[np.ix_(s, s)] @ spec.w[s]
    return out


def build_exact(spec: InteractionSpec, base: EmbeddingBase) -> LinearSAParams:
    """Score/value pair realizing the interaction table exactly.

    Needs a square orthonormal base (embedding dimension equal to the
    vocabulary size); then C = B^T f B and Wv = B^T w give
    x(a)^T C x(b) = f(a, b) and x(a)^T Wv = w(a).
    """
    if base.size != spec.vocab_size:
        raise ValueError("base size does not match the interaction table")
    if base.size != base.dim:
        raise ValueError("exact construction needs embedding dimension = vocabulary size")
    base.require_orthonormal()
    b = base.matrix
    return LinearSAParams(c=b.T @ spec.f @ b, wv=b.T @ spec.w)


# ---------------------------------------------------------------------------
# reduced-dimension approximate construction
# ---------------------------------------------------------------------------


@dataclass
class ApproxConstruction:
    """Reduced-dimension parameters with the certified per-token error bound.

    ``bound_per_token`` multiplies the sequence length: the max row error
    of the forward pass at length L is certified not to exceed
    ``predicted_bound(L)``.
    """

    params: LinearSAParams
    base: EmbeddingBase
    bound_per_token: float

    def predicted_bound(self, length: int) -> float:
        return self.bound_per_token * length


def _orthonormal_from(columns: list[np.ndarray], dim: int, size: int) -> np.ndarray:
    """Gram-Schmidt the candidate columns, keeping the first ``dim`` independent ones."""
    basis: list[np.ndarray] = []
    for col in columns:
        v = col.astype(np.float64).copy()
        for u in basis:
            v -= (u @ v) * u
        norm = np.linalg.norm(v)
        if norm > 1e-10:
            basis.append(v / norm)
        if len(basis) == dim:
            break
    k = 0
    while len(basis) < dim:
        v = np.zeros(size)
        v[k % size] = 1.0
        for u in basis:
            v -= (u @ v) * u
        norm = np.linalg.norm(v)
        if norm > 1e-10:
            basis.append(v / norm)
        k += 1
    return np.stack(basis, axis=1)


def _product_error(f, w, score_table, value_table) -> float:
    """Max over symbol pairs of the value-space product-table error norm."""
    err = score_table[:, :, None] * value_table[None, :, :] - f[:, :, None] * w[None, :, :]
    return float(np.sqrt((err ** 2).sum(axis=2)).max())


def build_approx(spec: InteractionSpec, dim: int) -> ApproxConstruction:
    """Best-effort rank-``dim`` realization with the spectral-tail error bound.

    The embedding subspace is assembled from the value columns plus the
    leading singular directions of the interaction table (several
    assemblies are tried; the one with the smallest worst-case product
    error wins).  The returned bound follows the spectral-tail case split:
    zeta1 * sigma_{d+1}(f) per token, plus a value tail term
    zeta2 * sqrt(sum_{i>d} sigma_i(w)^2) when d < d2.
    """
    size, d2 = spec.vocab_size, spec.target_dim
    if not 1 <= dim < size:
        raise ValueError("need 1 <= dim < vocabulary size (use build_exact at full size)")
    f, w = spec.f, spec.w
    u, s, vt = np.linalg.svd(f)
    w_cols = [w[:, k] for k in range(d2)]
    interleaved = [col for k in range(size) for col in (u[:, k], vt[k, :])]
    sym_eig = np.linalg.eigh(f @ f.T + f.T @ f)[1][:, ::-1]
    candidates = [
        w_cols + interleaved,
        interleaved,
        w_cols + [sym_eig[:, k] for k in range(size)],
        [sym_eig[:, k] for k in range(size)],
    ]
    best = None
    for cols in candidates:
        basis = _orthonormal_from(cols, dim, size)
        c = basis.T @ f @ basis
        wv = basis.T @ w
        err = _product_error(f, w, basis @ c @ basis.T, basis @ wv)
        if best is None or err < best[0]:
            best = (err, basis, c, wv)
    _, basis, c, wv = best

    score_table = basis @ c @ basis.T
    zeta1 = float(np.linalg.norm(w, axis=1).max())
    zeta2 = float(np.abs(score_table).max())
    sig_f = singular_values(f)
    bound = zeta1 * sig_f[dim]
    if dim < d2:
        sig_w = singular_values(w)
        tail_end = d2 if d2 < size else size
        tail = sig_w[dim:tail_end]
        bound += zeta2 * float(np.sqrt((tail ** 2).sum()))
    base = EmbeddingBase(PROJECTED, basis)
    return ApproxConstruction(LinearSAParams(c=c, wv=wv), base, bound)


# ---------------------------------------------------------------------------
# colliding agents
# ---------------------------------------------------------------------------


def build_collision_onehot(n: int, radius: int) -> LinearSAParams:
    """One-hot collision parameters: score 1 within wrapped distance 2R, values -1."""
    if 2 * radius >= n / 2:
        raise ValueError("need 2 * radius < n / 2")
    pos = np.arange(n)
    diff = np.abs(pos[:, None] - pos[None, :])
    c = (np.minimum(diff, n - diff) <= 2 * radius).astype(np.float64)
    return LinearSAParams(c=c, wv=-np.ones((n, 1)))


def window_score_matrix(f_values, normalized: bool = False) -> np.ndarray:
    """Score matrix reproducing a relative-position function on the sinusoidal ring.

    For the raw (unnormalized) sinusoidal rows p, the returned C satisfies
    p_i^T C p_j = f[(i - j) mod N]: the Fourier coefficients of f fill a
    block-diagonal layout with one 2x2 rotation-like block per frequency,
    which collapses to a diagonal when f is symmetric.  ``normalized``
    rescales by N/2 for use with orthonormal-row bases.
    """
    f_values = np.asarray(f_values, dtype=np.float64)
    n = f_values.shape[0]
    if n % 2 != 0:
        raise ValueError("need an even number of ring positions")
    coeffs = dtfs_analysis(f_values)
    a = 2.0 * np.real(coeffs)
    b = -2.0 * np.imag(coeffs)
    c = np.zeros((n, n))
    c[0, 0] = a[0]
    for k in range(1, n // 2):
        i, j = 2 * k - 1, 2 * k
        c[i, i] = a[k]
        c[j, j] = a[k]
        c[i, j] = b[k]
        c[j, i] = -b[k]
    c[n - 1, n - 1] = a[n // 2]
    if normalized:
        c = c * (n / 2.0)
    return c


def collision_window(n: int, radius: int) -> np.ndarray:
    """Indicator of wrapped distance <= 2R as a function of the position difference."""
    pos = np.arange(n)
    return (np.minimum(pos, n - pos) <= 2 * radius).astype(np.float64)


def build_collision_sinusoidal(n: int, radius: int, normalized: bool = True) -> LinearSAParams:
    """Sinusoidal-base collision parameters (diagonal score matrix).

    With ``normalized`` the parameters pair with the orthonormal base from
    :func:`attnlab.domain.build_sinusoidal`; without it they pair with the
    raw ring rows and expose the classical coefficient values, e.g.
    C[0, 0] = (4/N)(2R + 1/2).
    """
    if n % 2 != 0:
        raise ValueError("n must be even")
    if 2 * radius >= n / 2:
        raise ValueError("need 2 * radius < n / 2")
    coeffs = dtfs_window(n, radius)
    diag = np.empty(n)
    diag[0] = 2.0 * coeffs[0]
    for k in range(1, n // 2):
        diag[2 * k - 1] = 2.0 * coeffs[k]
        diag[2 * k] = 2.0 * coeffs[k]
    diag[n - 1] = 2.0 * coeffs[n // 2]
    c = np.diag(diag)
    wv = np.zeros((n, 1))
    wv[0, 0] = -np.sqrt(2.0)
    if normalized:
        c = c * (n / 2.0)
        wv = wv * np.sqrt(n / 2.0)
    return LinearSAParams(c=c, wv=wv)


def build_2d_kronecker(table: np.ndarray, n: int) -> LinearSAParams:
    """Torus parameters: cell embeddings are Kronecker products of ring rows.

    ``table[dx, dy]`` gives the interaction value at the wrapped coordinate
    differences.  The returned parameters pair with
    :func:`attnlab.domain.build_sinusoidal_2d` and use unit values, so the
    output row for cell i is the plain aggregate sum_j table[ri - rj].
    """
    table = as_matrix(table, "table")
    if table.shape != (n, n):
        raise ValueError("table must be n x n over coordinate differences")
    base = build_sinusoidal_2d(n)
    idx = np.arange(n)
    dx = (idx[:, None] - idx[None, :]) % n
    big = table[dx[:, None, :, None], dx[None, :, None, :]].reshape(n * n, n * n)
    bmat = base.matrix
    return LinearSAParams(c=bmat.T @ big @ bmat, wv=bmat.T @ np.ones((n * n, 1)))


# ---------------------------------------------------------------------------
# other representation examples
# ---------------------------------------------------------------------------


def build_genotype(activation: dict[int, tuple[int, ...]], length: int,
                   vocab_size: int) -> LinearSAParams:
    """One-hot activation parameters.

    Activator rows spread weight 1/m over the m activators; always-active
    rows take 1/length everywhere (which ties these parameters to the
    training length); values are all ones.
    """
    c = np.zeros((vocab_size, vocab_size))
    for sym, activators in activation.items():
        if len(activators) == 0:
            c[sym, :] = 1.0 / length
        else:
            for act in activators:
                c[sym, act] = 1.0 / len(activators)
    return LinearSAParams(c=c, wv=np.ones((vocab_size, 1)))


def build_timeseries(delays, coeffs, a_matrix, length: int) -> LinearSAParams:
    """Block parameters for the delayed-sum predictor.

    Tokens are [observation, one-hot position]; the positional block wires
    position u to position u - k with weight a_k, and the value map reads
    the observation through the transition matrix.
    """
    delays = tuple(int(k) for k in delays)
    coeffs = tuple(float(a) for a in coeffs)
    if delays and (min(delays) < 1 or max(delays) >= length):
        raise ValueError("delays must lie in [1, length)")
    a_matrix = as_matrix(np.asarray(a_matrix, dtype=np.float64), "a_matrix")
    d2 = a_matrix.shape[0]
    n_tokens = length + 1
    dim = d2 + n_tokens
    c = np.zeros((dim, dim))
    for u in range(n_tokens):
        for k, a in zip(delays, coeffs):
            if u - k >= 0:
                c[d2 + u, d2 + u - k] = a
    wv = np.zeros((dim, d2))
    wv[:d2, :] = a_matrix.T
    return LinearSAParams(c=c, wv=wv)


def build_vision(offsets, height: int, width: int) -> LinearSAParams:
    """Pattern-counting parameters over pixel tokens [blackness, one-hot position].

    The positional block attends from each pixel to the in-bounds offset
    positions; the value map reads the blackness bit, so each output row
    counts black pixels at the offsets.
    """
    n = height * width
    c = np.zeros((1 + n, 1 + n))
    for r in range(height):
        for col in range(width):
            p = r * width + col
            for dr, dc in offsets:
                rr, cc = r + dr, col + dc
                if 0 <= rr < height and 0 <= cc < width:
                    c[1 + p, 1 + rr * width + cc] = 1.0
    wv = np.zeros((1 + n, 1))
    wv[0, 0] = 1.0
    return LinearSAParams(c=c, wv=wv)


def build_hfa_factorized(spec: FactorizedSpec) -> HFAParams:
    """Coupled-score parameters for a factorized cross-feature target.

    Each score factor occupies only its (query block, key block) of the
    concatenated-feature embedding; each value factor occupies its feature
    block, so the element-wise products recover the per-factor products.
    """
    layout = spec.layout
    dim = layout.dim
    offsets = layout.offsets
    scores = []
    values = []
    for factor, value in zip(spec.factors, spec.values):
        c = np.zeros((dim, dim))
        qo, ko = offsets[factor.query_feature], offsets[factor.key_feature]
        qs, ks = layout.sizes[factor.query_feature], layout.sizes[factor.key_feature]
        c[qo:qo + qs, ko:ko + ks] = np.asarray(factor.table, dtype=np.float64)
        scores.append(c)
        wv = np.zeros((dim, 1))
        vo, vs = offsets[value.feature], layout.sizes[value.feature]
        wv[vo:vo + vs, 0] = np.asarray(value.weights, dtype=np.float64)
        values.append(wv)
    return HFAParams(scores=scores, values=values)


def build_ha_ternary(f3, w2, vocab_size: int) -> DenseHAParams:
    """Dense order-3 parameters matching the strict-pair ternary target.

    The model sums over ordered key pairs including ties, so the pair
    weights must have a zero diagonal for the strict j < k target to be
    realizable; a nonzero diagonal is rejected.
    """
    f3 = np.asarray(f3, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if f3.shape != (vocab_size,) * 3 or w2.shape != (vocab_size,) * 2:
        raise ValueError("table shapes must match the vocabulary size")
    if not np.allclose(np.diag(w2), 0.0):
        raise ValueError("pair weights must have a zero diagonal (tied key indices)")
    return DenseHAParams(c=f3, w=w2[:, :, None])
