"""Forward evaluation of every attention variant in the library.

All forwards are pure functions of (input, params).  Inputs are single
sequences (L, d) or batches (B, L, d); broadcasting handles both where
the variant allows it.  Score nonlinearities follow the linear-theory
convention: scores are used as-is, with an optional 1/sqrt(d_k) divisor
behind the ``scale_scores`` flag (off by default, since the score matrix
can absorb it).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .linalg import as_matrix, as_tensor, read_matrix_csv, write_matrix_csv

MASK_NONE = "none"
MASK_ORDERED_LEQ = "ordered_leq"
MASK_ORDERED_GEQ = "ordered_geq"

LINEAR = "linear"
SOFTMAX = "softmax"

VALUE_PRODUCT = "value_product"
SINGLE_VALUE = "single_value"

BIG_NEG = -1e30  # stands in for -inf in masked scores; portable across platforms

_EINSUM_LETTERS = "abcdefgh"


class UnsupportedConfigError(ValueError):
    """Raised when a kernel is called with a configuration it does not cover."""


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _row_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


@dataclass
class LinearSAParams:
    """Score matrix ``c`` (d x d) and value map ``wv`` (d x d2)."""

    c: np.ndarray
    wv: np.ndarray

    def __post_init__(self):
        self.c = as_matrix(self.c, "c")
        self.wv = as_matrix(self.wv, "wv")
        if self.c.shape[0] != self.c.shape[1] or self.c.shape[1] != self.wv.shape[0]:
            raise ValueError("c must be square and share its dimension with wv rows")

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def target_dim(self) -> int:
        return self.wv.shape[1]


@dataclass
class MultiheadLinearSAParams:
    """Per-head linear-attention params; heads are summed unless ``w_out`` projects a concat."""

    heads: list[LinearSAParams]
    w_out: np.ndarray | None = None

    def __post_init__(self):
        if not self.heads:
            raise ValueError("need at least one head")
        if self.w_out is not None:
            self.w_out = as_matrix(self.w_out, "w_out")


@dataclass
class TwoLayerMultiheadParams:
    """Two stacked multihead linear-attention layers (no residuals, no norms)."""

    first: MultiheadLinearSAParams
    second: MultiheadLinearSAParams


@dataclass
class HFAParams:
    """Coupled-score attention: Hadamard product of per-factor score matrices.

    ``scores[a]`` is the d x d score matrix of factor a; ``values[a]`` the
    matching d x d2 value map (one entry total for ``single_value``).
    """

    scores: list[np.ndarray]
    values: list[np.ndarray]
    variant: str = VALUE_PRODUCT
    nonlinearity: str = LINEAR
    scale_scores: bool = False

    def __post_init__(self):
        self.scores = [as_matrix(c, "score matrix") for c in self.scores]
        self.values = [as_matrix(v, "value matrix") for v in self.values]
        if self.variant not in (VALUE_PRODUCT, SINGLE_VALUE):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.nonlinearity not in (LINEAR, SOFTMAX):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.variant == VALUE_PRODUCT and len(self.values) != len(self.scores):
            raise ValueError("value_product needs one value matrix per score factor")
        if self.variant == SINGLE_VALUE and len(self.values) != 1:
            raise ValueError("single_value takes exactly one value matrix")

    @property
    def order(self) -> int:
        return len(self.scores)

    @property
    def dim(self) -> int:
        return self.scores[0].shape[0]


@dataclass
class HAParams:
    """Rank-R factorized order-n attention.

    The score tensor is C[a, z1..z_{n-1}] = sum_s Q[a,s] K1[z1,s] ... and the
    value tensor W[x1..x_{n-1}, t] = sum_s V1[x1,s] ... Vout[t,s].  With
    ``sharing`` a single key matrix and a single value matrix are reused
    across the n-1 key/value slots.
    """

    order: int
    q: np.ndarray
    keys: list[np.ndarray]
    values: list[np.ndarray]
    v_out: np.ndarray
    sharing: bool = False
    nonlinearity: str = LINEAR
    mask: str = MASK_NONE
    scale_scores: bool = False

    def __post_init__(self):
        if self.order < 2:
            raise ValueError("order must be at least 2")
        self.q = as_matrix(self.q, "q")
        self.keys = [as_matrix(k, "key matrix") for k in self.keys]
        self.values = [as_matrix(v, "value matrix") for v in self.values]
        self.v_out = as_matrix(self.v_out, "v_out")
        expected = 1 if self.sharing else self.order - 1
        if len(self.keys) != expected or len(self.values) != expected:
            raise ValueError(f"expected {expected} key and value matrices, "
                             f"got {len(self.keys)} and {len(self.values)}")
        if self.mask not in (MASK_NONE, MASK_ORDERED_LEQ, MASK_ORDERED_GEQ):
            raise ValueError(f"unknown mask {self.mask!r}")
        if self.nonlinearity not in (LINEAR, SOFTMAX):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def rank(self) -> int:
        return self.q.shape[1]

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def key_matrices(self) -> list[np.ndarray]:
        return self.keys * (self.order - 1) if self.sharing else self.keys

    def value_matrices(self) -> list[np.ndarray]:
        return self.values * (self.order - 1) if self.sharing else self.values


@dataclass
class DenseHAParams:
    """Order-n attention with explicit dense score/value tensors.

    ``c`` has shape (d,) * n with the query axis first; ``w`` has shape
    (d,) * (n-1) + (d2,).  Used by closed-form constructions and the
    explicit-gradient trainer, where exactness matters more than rank
    efficiency.
    """

    c: np.ndarray
    w: np.ndarray
    nonlinearity: str = LINEAR
    mask: str = MASK_ORDERED_LEQ

    def __post_init__(self):
        self.c = as_tensor(self.c, "c")
        self.w = as_tensor(self.w, "w")
        if self.c.ndim < 2 or len(set(self.c.shape)) != 1:
            raise ValueError("c must be a cube-shaped tensor of rank >= 2")
        if self.w.ndim != self.c.ndim or self.w.shape[:-1] != self.c.shape[1:]:
            raise ValueError("w must have shape (d,) * (n-1) + (d2,)")
        if self.mask not in (MASK_NONE, MASK_ORDERED_LEQ, MASK_ORDERED_GEQ):
            raise ValueError(f"unknown mask {self.mask!r}")
        if self.nonlinearity not in (LINEAR, SOFTMAX):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def order(self) -> int:
        return self.c.ndim

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def target_dim(self) -> int:
        return self.w.shape[-1]


# ---------------------------------------------------------------------------
# forwards
# ---------------------------------------------------------------------------


def linear_sa(x: np.ndarray, p: LinearSAParams) -> np.ndarray:
    """(X C X^T) X Wv for a single sequence (L, d) or a batch (B, L, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.dim:
        raise ValueError(f"input dim {x.shape[-1]} does not match params dim {p.dim}")
    scores = x @ p.c @ _swap(x)
    return scores @ (x @ p.wv)


def multihead_linear_sa(x: np.ndarray, p: MultiheadLinearSAParams) -> np.ndarray:
    """Sum of per-head outputs, or concat followed by the output projection."""
    outs = [linear_sa(x, head) for head in p.heads]
    if p.w_out is None:
        out = outs[0]
        for o in outs[1:]:
            out = out + o
        return out
    return np.concatenate(outs, axis=-1) @ p.w_out


def two_layer_multihead_linear_sa(x: np.ndarray, p: TwoLayerMultiheadParams) -> np.ndarray:
    return multihead_linear_sa(multihead_linear_sa(x, p.first), p.second)


def hfa(x: np.ndarray, p: HFAParams) -> np.ndarray:
    """Hadamard-coupled attention.

    scores = prod_a (X C_a X^T), optionally row-softmaxed; values are the
    element-wise product of per-factor X Wv_a (or a single X Wv).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.dim:
        raise ValueError(f"input dim {x.shape[-1]} does not match params dim {p.dim}")
    scores = None
    for c in p.scores:
        factor = x @ c @ _swap(x)
        scores = factor if scores is None else scores * factor
    if p.scale_scores:
        scores = scores / np.sqrt(p.dim)
    if p.nonlinearity == SOFTMAX:
        scores = _row_softmax(scores)
    if p.variant == SINGLE_VALUE:
        values = x @ p.values[0]
    else:
        values = None
        for v in p.values:
            term = x @ v
            values = term if values is None else values * term
    return scores @ values


def _ordered_mask(length: int, n_keys: int, mask: str) -> np.ndarray:
    """Boolean tensor over (L,) * n_keys marking the allowed key tuples."""
    if mask == MASK_NONE:
        return np.ones((length,) * n_keys, dtype=bool)
    idx = np.indices((length,) * n_keys)
    out = np.ones((length,) * n_keys, dtype=bool)
    for m in range(n_keys - 1):
        if mask == MASK_ORDERED_LEQ:
            out &= idx[m] <= idx[m + 1]
        else:
            out &= idx[m] >= idx[m + 1]
    return out


def _cp_score_value_tensors(x: np.ndarray, p: HAParams):
    length = x.shape[0]
    q = x @ p.q
    keys = [x @ k for k in p.key_matrices()]
    values = [x @ v for v in p.value_matrices()]
    n_keys = p.order - 1
    if n_keys + 1 > len(_EINSUM_LETTERS):
        raise UnsupportedConfigError("order too large for the dense score path")
    letters = _EINSUM_LETTERS[: n_keys + 1]
    sub_a = ",".join(f"{ltr}z" for ltr in letters) + "->" + letters
    a = np.einsum(sub_a, q, *keys)
    sub_v = ",".join(f"{ltr}z" for ltr in letters[1:]) + ",yz->" + letters[1:] + "y"
    v = np.einsum(sub_v, *values, p.v_out)
    return a.reshape(length, -1), v.reshape(length ** n_keys, -1)


def _dense_score_value_tensors(x: np.ndarray, p: DenseHAParams):
    length = x.shape[0]
    n_keys = p.order - 1
    if p.order > len(_EINSUM_LETTERS):
        raise UnsupportedConfigError("order too large for the dense score path")
    letters = _EINSUM_LETTERS[: p.order]
    axes = "".join(chr(ord("p") + m) for m in range(p.order))
    sub_a = axes + "," + ",".join(f"{letters[m]}{axes[m]}" for m in range(p.order))
    a = np.einsum(sub_a + "->" + letters, p.c, *([x] * p.order))
    sub_v = axes[1:] + "y," + ",".join(f"{letters[1 + m]}{axes[1 + m]}" for m in range(n_keys))
    v = np.einsum(sub_v + "->" + letters[1:] + "y", p.w, *([x] * n_keys))
    return a.reshape(length, -1), v.reshape(length ** n_keys, -1)


def _ha_order3_rowwise(x: np.ndarray, p: HAParams) -> np.ndarray:
    """Order-3 evaluation that never materializes the (L, L, L) score tensor."""
    length = x.shape[0]
    q = x @ p.q
    k1, k2 = (x @ k for k in p.key_matrices())
    v1, v2 = (x @ v for v in p.value_matrices())
    allowed = _ordered_mask(length, 2, p.mask)
    d2 = p.v_out.shape[0]
    out = np.empty((length, d2))
    # one (L, L) value plane per target column keeps memory at O(L^2)
    value_planes = [(v1 * p.v_out[t]) @ v2.T for t in range(d2)]
    scale = np.sqrt(p.rank) if p.scale_scores else 1.0
    for i in range(length):
        scores = (k1 * q[i]) @ k2.T / scale
        if p.nonlinearity == SOFTMAX:
            masked = np.where(allowed, scores, BIG_NEG)
            flat = masked.reshape(-1)
            weights = np.exp(flat - flat.max())
            weights /= weights.sum()
            weights = weights.reshape(length, length)
            for t in range(d2):
                out[i, t] = np.sum(weights * value_planes[t])
        else:
            masked_scores = np.where(allowed, scores, 0.0)
            for t in range(d2):
                out[i, t] = np.sum(masked_scores * value_planes[t])
    return out


def ha_naive(x: np.ndarray, p: HAParams | DenseHAParams) -> np.ndarray:
    """Direct order-n evaluation: sum over all key tuples allowed by the mask.

    Linear scores are summed over the allowed tuples; softmax normalizes
    jointly over the key tuple after masking disallowed scores to a large
    negative constant.  Cost is O(L^(n-1)) per query row.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("ha_naive expects a single sequence (L, d)")
    if x.shape[1] != p.dim:
        raise ValueError(f"input dim {x.shape[1]} does not match params dim {p.dim}")
    if isinstance(p, HAParams) and p.order == 3:
        return _ha_order3_rowwise(x, p)
    length = x.shape[0]
    if isinstance(p, HAParams):
        a, v = _cp_score_value_tensors(x, p)
        if p.scale_scores:
            a = a / np.sqrt(p.rank)
    else:
        a, v = _dense_score_value_tensors(x, p)
    allowed = _ordered_mask(length, p.order - 1, p.mask).reshape(-1)
    if p.nonlinearity == SOFTMAX:
        masked = np.where(allowed[None, :], a, BIG_NEG)
        weights = _row_softmax(masked)
        return weights @ v
    return a[:, allowed] @ v[allowed]


def ha_fast_linear(x: np.ndarray, p: HAParams) -> np.ndarray:
    """O(L R^2) evaluation of the unordered-sum linear kernel.

    Reorders the summations so each key position is contracted against its
    value factor first: out = Q (prod_m K_m^T V_m) Vout^T.  Must match
    :func:`ha_naive` with ``mask='none'`` and linear scores; any other
    configuration is rejected.
    """
    if not isinstance(p, HAParams):
        raise UnsupportedConfigError("fast path needs rank-factorized params")
    if p.nonlinearity != LINEAR or p.mask != MASK_NONE:
        raise UnsupportedConfigError("fast path covers only linear scores with no mask")
    x = np.asarray(x, dtype=np.float64)
    q = x @ p.q
    if p.scale_scores:
        q = q / np.sqrt(p.rank)
    crossed = None
    for km, vm in zip(p.key_matrices(), p.value_matrices()):
        g = (x @ km).T @ (x @ vm)
        crossed = g if crossed is None else crossed * g
    return q @ crossed @ p.v_out.T


def apply_attention(params, x: np.ndarray) -> np.ndarray:
    """Dispatch the forward matching the parameter type."""
    if isinstance(params, LinearSAParams):
        return linear_sa(x, params)
    if isinstance(params, MultiheadLinearSAParams):
        return multihead_linear_sa(x, params)
    if isinstance(params, TwoLayerMultiheadParams):
        return two_layer_multihead_linear_sa(x, params)
    if isinstance(params, HFAParams):
        return hfa(x, params)
    if isinstance(params, (HAParams, DenseHAParams)):
        return ha_naive(x, params)
    raise TypeError(f"unknown parameter type {type(params).__name__}")


def param_count(params) -> int:
    """Number of scalar parameters in the container."""
    if isinstance(params, LinearSAParams):
        return params.c.size + params.wv.size
    if isinstance(params, MultiheadLinearSAParams):
        total = sum(param_count(h) for h in params.heads)
        return total + (params.w_out.size if params.w_out is not None else 0)
    if isinstance(params, TwoLayerMultiheadParams):
        return param_count(params.first) + param_count(params.second)
    if isinstance(params, HFAParams):
        return sum(c.size for c in params.scores) + sum(v.size for v in params.values)
    if isinstance(params, HAParams):
        return (params.q.size + sum(k.size for k in params.keys)
                + sum(v.size for v in params.values) + params.v_out.size)
    if isinstance(params, DenseHAParams):
        return params.c.size + params.w.size
    raise TypeError(f"unknown parameter type {type(params).__name__}")


# ---------------------------------------------------------------------------
# serialization: named matrix CSVs plus a JSON manifest
# ---------------------------------------------------------------------------


def _write_named(directory: str, prefix: str, name: str, array: np.ndarray) -> str:
    fname = f"{prefix}_{name}.csv"
    write_matrix_csv(os.path.join(directory, fname), array.reshape(1, -1) if array.ndim != 2 else array)
    return fname


def save_params(params, directory: str, prefix: str = "params") -> str:
    """Write params as named matrix CSVs plus a JSON manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    manifest: dict = {"schema_version": 1}
    files: dict[str, str] = {}

    def put(name, array):
        files[name] = _write_named(directory, prefix, name, np.asarray(array, dtype=np.float64))

    if isinstance(params, LinearSAParams):
        manifest["variant"] = "linear_sa"
        put("c", params.c)
        put("wv", params.wv)
    elif isinstance(params, MultiheadLinearSAParams):
        manifest["variant"] = "multihead_linear_sa"
        manifest["n_heads"] = len(params.heads)
        manifest["has_w_out"] = params.w_out is not None
        for h, head in enumerate(params.heads):
            put(f"head{h}_c", head.c)
            put(f"head{h}_wv", head.wv)
        if params.w_out is not None:
            put("w_out", params.w_out)
    elif isinstance(params, HFAParams):
        manifest["variant"] = "hfa"
        manifest["order"] = params.order
        manifest["hfa_variant"] = params.variant
        manifest["nonlinearity"] = params.nonlinearity
        for a, c in enumerate(params.scores):
            put(f"score{a}", c)
        for a, v in enumerate(params.values):
            put(f"value{a}", v)
    elif isinstance(params, HAParams):
        manifest["variant"] = "ha"
        manifest["order"] = params.order
        manifest["rank"] = params.rank
        manifest["sharing"] = params.sharing
        manifest["nonlinearity"] = params.nonlinearity
        manifest["mask"] = params.mask
        put("q", params.q)
        for m, k in enumerate(params.keys):
            put(f"key{m}", k)
        for m, v in enumerate(params.values):
            put(f"value{m}", v)
        put("v_out", params.v_out)
    elif isinstance(params, DenseHAParams):
        manifest["variant"] = "ha_dense"
        manifest["order"] = params.order
        manifest["nonlinearity"] = params.nonlinearity
        manifest["mask"] = params.mask
        manifest["c_shape"] = list(params.c.shape)
        manifest["w_shape"] = list(params.w.shape)
        put("c", params.c.reshape(1, -1))
        put("w", params.w.reshape(1, -1))
    else:
        raise TypeError(f"cannot serialize {type(params).__name__}")

    manifest["matrices"] = files
    path = os.path.join(directory, f"{prefix}_manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_params(manifest_path: str):
    """Reconstruct a parameter container from :func:`save_params` output."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    directory = os.path.dirname(manifest_path)

    def get(name):
        return read_matrix_csv(os.path.join(directory, manifest["matrices"][name]))

    variant = manifest["variant"]
    if variant == "linear_sa":
        return LinearSAParams(get("c"), get("wv"))
    if variant == "multihead_linear_sa":
        heads = [LinearSAParams(get(f"head{h}_c"), get(f"head{h}_wv"))
                 for h in range(manifest["n_heads"])]
        w_out = get("w_out") if manifest["has_w_out"] else None
        return MultiheadLinearSAParams(heads, w_out)
    if variant == "hfa":
        scores = [get(f"score{a}") for a in range(manifest["order"])]
        n_values = manifest["order"] if manifest["hfa_variant"] == VALUE_PRODUCT else 1
        values = [get(f"value{a}") for a in range(n_values)]
        return HFAParams(scores, values, manifest["hfa_variant"], manifest["nonlinearity"])
    if variant == "ha":
        n = 1 if manifest["sharing"] else manifest["order"] - 1
        return HAParams(
            order=manifest["order"],
            q=get("q"),
            keys=[get(f"key{m}") for m in range(n)],
            values=[get(f"value{m}") for m in range(n)],
            v_out=get("v_out"),
            sharing=manifest["sharing"],
            nonlinearity=manifest["nonlinearity"],
            mask=manifest["mask"],
        )
    if variant == "ha_dense":
        c = get("c").reshape(manifest["c_shape"])
        w = get("w").reshape(manifest["w_shape"])
        return DenseHAParams(c, w, manifest["nonlinearity"], manifest["mask"])
    raise ValueError(f"unknown variant {variant!r} in manifest")
