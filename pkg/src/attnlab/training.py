"""Full-batch gradient-descent training loops with explicit gradients.

The score-matrix trainers (``train_linear_sa`` and ``train_ha3``)
implement plain Euler discretization of gradient flow from the canonical
start (zero score parameters, value entries at least ``init_bias`` in
every symbol direction), and monitor the trajectory invariant

    w_a(t)^2 = w_a(0)^2 + ||C[:, a](t)||^2

whose residual is O(step size) under the discretization.  Both exploit
that with orthonormal embeddings the whole computation collapses onto
symbol counts, which keeps desk-scale runs in the minutes; the literal
gradient formulas are kept alongside (``grad_linear_sa``, ``grad_ha3``)
and the engines are tested to step identically to them.

``train_generic`` trains the remaining variants (coupled-score and
stacked multihead models) by reverse-mode differentiation of the
explicit forward composition; :func:`finite_difference_grads` provides
the independent check.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    SINGLE_VALUE,
    DenseHAParams,
    HFAParams,
    LinearSAParams,
    MultiheadLinearSAParams,
    TwoLayerMultiheadParams,
    apply_attention,
    linear_sa,
)
from .domain import EmbeddingBase, SequenceBatch, ONE_HOT


class DivergenceError(RuntimeError):
    """Training loss blew past 10x its initial value; the step size is too large."""


@dataclass
class TrainConfig:
    """Euler discretization settings for the gradient flow.

    With ``adapt_scale`` set, the step at loss value l is
    min(step_size, adapt_scale / sqrt(l)): small steps through the
    high-gradient transient (where the Euler drift of the trajectory
    invariant accrues), ramping up to ``step_size`` as the loss decays.
    This is still a discretization of the same flow; halving both knobs
    at least halves the invariant drift.  ``adapt_scale=None`` keeps the
    step fixed.
    """

    step_size: float = 0.05
    max_steps: int = 50_000
    tolerance: float = 1e-8
    init_bias: float = 1.0
    log_period: int = 200
    seed: int = 0
    adapt_scale: float | None = None
    noise_std: float = 0.0  # optional target noise; off by default

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.init_bias <= 0:
            raise ValueError("init_bias must be positive")

    def step_at(self, loss: float) -> float:
        if self.adapt_scale is None:
            return self.step_size
        return min(self.step_size, self.adapt_scale / np.sqrt(max(loss, 1e-300)))


@dataclass
class TrainTrace:
    """Logged loss and invariant diagnostics, one row per logged step."""

    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    max_conservation: list[float] = field(default_factory=list)
    min_value: list[float] = field(default_factory=list)

    def record(self, step: int, loss: float, resid: float, min_w: float) -> None:
        self.steps.append(int(step))
        self.losses.append(float(loss))
        self.max_conservation.append(float(resid))
        self.min_value.append(float(min_w))

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("step,loss,max_conservation_residual,min_w\n")
            for row in zip(self.steps, self.losses, self.max_conservation, self.min_value):
                fh.write("%d,%.17g,%.17g,%.17g\n" % row)


@dataclass
class TrainResult:
    params: object
    trace: TrainTrace


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def mse_loss(params, batch: SequenceBatch) -> float:
    """(1/B) sum_n ||forward(X_n) - Y_n||_F^2."""
    if batch.y is None:
        raise ValueError("batch has no targets")
    if isinstance(params, (LinearSAParams, MultiheadLinearSAParams,
                           TwoLayerMultiheadParams, HFAParams)):
        out = apply_attention(params, batch.x)
        return float(np.sum((out - batch.y) ** 2) / batch.size)
    total = 0.0
    for b in range(batch.size):
        out = apply_attention(params, batch.x[b])
        total += float(np.sum((out - batch.y[b]) ** 2))
    return total / batch.size


def normalized_mse(params, batch: SequenceBatch) -> float:
    """MSE divided by the mean squared target norm."""
    denom = float(np.sum(batch.y ** 2) / batch.size)
    return mse_loss(params, batch) / denom


# ---------------------------------------------------------------------------
# literal gradients (scalar targets)
# ---------------------------------------------------------------------------


def grad_linear_sa(params: LinearSAParams, batch: SequenceBatch):
    """Explicit MSE gradients for scalar-target linear attention.

    dL/dC = (2/B) sum_n X^T D w^T X^T X and
    dL/dw = (2/B) sum_n X^T X C^T X^T D with D the residual column.
    """
    if params.target_dim != 1 or batch.y is None or batch.y.shape[2] != 1:
        raise ValueError("explicit gradients cover scalar targets (d2 = 1)")
    x = batch.x
    w = params.wv[:, 0]
    xtx = np.einsum("bli,blj->bij", x, x)
    u = np.einsum("bij,j->bi", xtx, w)
    out = np.einsum("bld,bd->bl", x, u @ params.c.T)
    resid = out - batch.y[:, :, 0]
    g = np.einsum("bld,bl->bd", x, resid)
    dc = (2.0 / batch.size) * np.einsum("bi,bj->ij", g, u)
    dw = (2.0 / batch.size) * np.einsum("bij,bj->i", xtx, g @ params.c)
    return dc, dw[:, None]


def grad_ha3(params: DenseHAParams, batch: SequenceBatch, use_gamma: bool = False):
    """Explicit MSE gradients for scalar-target dense order-3 attention.

    The key-pair sum runs over ordered pairs j <= k.  ``use_gamma``
    switches to the one-hot fast path where the pair structure collapses
    onto the pair-count table Gamma[v, s] = #{j <= k : s_j = v, s_k = s}.
    """
    if params.order != 3 or params.target_dim != 1:
        raise ValueError("explicit gradients cover dense order-3 params with d2 = 1")
    if params.mask != "ordered_leq":
        raise ValueError("explicit gradients assume the ordered (j <= k) sum")
    if batch.y is None or batch.y.shape[2] != 1:
        raise ValueError("batch must carry scalar targets")
    dim = params.dim
    dc = np.zeros((dim, dim, dim))
    dw = np.zeros((dim, dim))
    if use_gamma:
        if batch.tuples is None:
            raise ValueError("the pair-count fast path needs symbol tuples")
        c_flat = params.c.reshape(dim, dim * dim)
        w2 = params.w[:, :, 0]
        for b in range(batch.size):
            s = batch.tuples[b]
            gamma = _pair_counts(s, dim)
            v = c_flat @ (gamma * w2).reshape(-1)
            resid = v[s] - batch.y[b, :, 0]
            g = np.bincount(s, weights=resid, minlength=dim)
            dc += np.einsum("p,qr->pqr", g, gamma * w2)
            dw += gamma * np.einsum("p,pqr->qr", g, params.c)
    else:
        length = batch.length
        triu = np.triu(np.ones((length, length)))
        for b in range(batch.size):
            x = batch.x[b]
            a = np.einsum("pqr,ip,jq,kr->ijk", params.c, x, x, x)
            v = np.einsum("qr,jq,kr->jk", params.w[:, :, 0], x, x)
            out = np.einsum("ijk,jk->i", a, v * triu)
            resid = out - batch.y[b, :, 0]
            dc += np.einsum("i,ip,jq,kr,jk->pqr", resid, x, x, x, v * triu)
            dw += np.einsum("i,ijk,jq,kr,jk->qr", resid, a, x, x, triu)
    scale = 2.0 / batch.size
    return scale * dc, scale * dw[:, :, None]


def _pair_counts(symbols: np.ndarray, vocab: int) -> np.ndarray:
    """Gamma[v, s] = number of ordered index pairs j <= k with symbols (v, s)."""
    length = len(symbols)
    gamma = np.zeros((vocab, vocab))
    for j in range(length):
        for k in range(j, length):
            gamma[symbols[j], symbols[k]] += 1.0
    return gamma


# ---------------------------------------------------------------------------
# canonical initializations
# ---------------------------------------------------------------------------


def init_linear_sa(base: EmbeddingBase, bias: float = 1.0) -> LinearSAParams:
    """Zero scores; value vector b * B^T 1, so every symbol direction starts at b."""
    dim = base.dim
    wv = bias * base.matrix.T @ np.ones((base.size, 1))
    return LinearSAParams(c=np.zeros((dim, dim)), wv=wv)


def init_ha3(vocab_size: int, bias: float = 1.0) -> DenseHAParams:
    """Zero score tensor; every pair weight starts at b (one-hot coordinates)."""
    return DenseHAParams(
        c=np.zeros((vocab_size,) * 3),
        w=bias * np.ones((vocab_size, vocab_size, 1)),
    )


# ---------------------------------------------------------------------------
# count-space trainer for linear attention
# ---------------------------------------------------------------------------


def _count_representation(batch: SequenceBatch, base: EmbeddingBase):
    """Symbol counts and per-symbol residual bookkeeping for scalar targets."""
    if batch.tuples is None:
        raise ValueError("count-space training needs symbol tuples")
    if batch.y is None or batch.y.shape[2] != 1:
        raise ValueError("count-space training needs scalar targets")
    if base.size != base.dim:
        raise ValueError("training assumes a square orthonormal embedding base")
    base.require_orthonormal()
    vocab = base.size
    tuples = batch.tuples
    counts = np.zeros((batch.size, vocab))
    y_by_symbol = np.zeros((batch.size, vocab))
    y = batch.y[:, :, 0]
    for v in range(vocab):
        mask = tuples == v
        counts[:, v] = mask.sum(axis=1)
        y_by_symbol[:, v] = (mask * y).sum(axis=1)
    y_sq = float(np.sum(y ** 2))
    return counts, y_by_symbol, y_sq


def conservation_residual(params_t: LinearSAParams, params_0: LinearSAParams,
                          base: EmbeddingBase) -> np.ndarray:
    """Per-symbol residual of w_a(t)^2 = w_a(0)^2 + ||C[:, a](t)||^2.

    Both parameter sets are rotated into one-hot coordinates first, so the
    law can be checked in any orthonormal base.
    """
    base.require_orthonormal()
    b = base.matrix
    c_oh = b @ params_t.c @ b.T
    w_t = (b @ params_t.wv)[:, 0]
    w_0 = (b @ params_0.wv)[:, 0]
    return w_t ** 2 - w_0 ** 2 - np.sum(c_oh ** 2, axis=0)


def train_linear_sa(batch: SequenceBatch, base: EmbeddingBase,
                    cfg: TrainConfig) -> TrainResult:
    """Gradient descent from the canonical start until the loss tolerance.

    Internally the dynamics run in one-hot coordinates, where orthonormal
    embeddings make X^T X diagonal in the symbol counts; the update is
    exactly the explicit-gradient Euler step, and the returned parameters
    are rotated back into the supplied base.  Raises
    :class:`DivergenceError` when the loss exceeds 10x its initial value.
    """
    counts, y_by_symbol, y_sq = _count_representation(batch, base)
    if cfg.noise_std > 0:
        rng = np.random.default_rng(cfg.seed)
        noise = rng.normal(0.0, cfg.noise_std, size=y_by_symbol.shape)
        y_by_symbol = y_by_symbol + noise
    vocab = base.size
    n = batch.size
    c = np.zeros((vocab, vocab))
    w = np.full(vocab, cfg.init_bias)
    w0 = w.copy()
    trace = TrainTrace()

    def residual_stats():
        resid = w ** 2 - w0 ** 2 - np.sum(c ** 2, axis=0)
        return float(np.abs(resid).max()), float(w.min())

    initial_loss = None
    step = 0
    while True:
        u = counts * w[None, :]
        v = u @ c.T
        loss = float((np.einsum("bn,bn->", v, counts * v - 2.0 * y_by_symbol) + y_sq) / n)
        if initial_loss is None:
            initial_loss = loss
        done = loss <= cfg.tolerance or step >= cfg.max_steps
        if done or step % cfg.log_period == 0:
            resid, min_w = residual_stats()
            trace.record(step, loss, resid, min_w)
        if loss > 10.0 * max(initial_loss, 1e-300) and step > 0:
            raise DivergenceError(
                f"loss {loss:.3e} exceeded 10x initial {initial_loss:.3e} "
                f"at step {step} (step_size={cfg.step_size})")
        if done:
            break
        eta = cfg.step_at(loss)
        g = counts * v - y_by_symbol
        dc = (2.0 / n) * (g.T @ u)
        dw = (2.0 / n) * np.einsum("bn,bn->n", counts, g @ c)
        c -= eta * dc
        w -= eta * dw
        step += 1

    b = base.matrix
    params = LinearSAParams(c=b.T @ c @ b, wv=(b.T @ w[:, None]))
    return TrainResult(params=params, trace=trace)


def train_ha3(batch: SequenceBatch, base: EmbeddingBase, cfg: TrainConfig) -> TrainResult:
    """Order-3 analogue of :func:`train_linear_sa` over key-pair counts.

    The invariant monitored is w_ab(t)^2 = w_ab(0)^2 + ||C[:, a, b](t)||^2
    over symbol pairs.
    """
    counts, y_by_symbol, y_sq = _count_representation(batch, base)
    vocab = base.size
    n = batch.size
    gammas = np.empty((n, vocab * vocab))
    for b_idx in range(n):
        gammas[b_idx] = _pair_counts(batch.tuples[b_idx], vocab).reshape(-1)
    c_flat = np.zeros((vocab, vocab * vocab))
    w = np.full(vocab * vocab, cfg.init_bias)
    w0 = w.copy()
    trace = TrainTrace()

    initial_loss = None
    step = 0
    while True:
        u = gammas * w[None, :]
        v = u @ c_flat.T
        loss = float((np.einsum("bn,bn->", v, counts * v - 2.0 * y_by_symbol) + y_sq) / n)
        if initial_loss is None:
            initial_loss = loss
        done = loss <= cfg.tolerance or step >= cfg.max_steps
        if done or step % cfg.log_period == 0:
            resid = w ** 2 - w0 ** 2 - np.sum(c_flat ** 2, axis=0)
            trace.record(step, loss, float(np.abs(resid).max()), float(w.min()))
        if loss > 10.0 * max(initial_loss, 1e-300) and step > 0:
            raise DivergenceError(
                f"loss {loss:.3e} exceeded 10x initial {initial_loss:.3e} "
                f"at step {step} (step_size={cfg.step_size})")
        if done:
            break
        eta = cfg.step_at(loss)
        g = counts * v - y_by_symbol
        dc = (2.0 / n) * (g.T @ u)
        dw = (2.0 / n) * np.einsum("bp,bp->p", gammas, g @ c_flat)
        c_flat -= eta * dc
        w -= eta * dw
        step += 1

    bmat = base.matrix
    c_oh = c_flat.reshape(vocab, vocab, vocab)
    c_out = np.einsum("pqr,pa,qb,rc->abc", c_oh, bmat, bmat, bmat)
    w_out = np.einsum("qr,qb,rc->bc", w.reshape(vocab, vocab), bmat, bmat)[:, :, None]
    params = DenseHAParams(c=c_out, w=w_out)
    return TrainResult(params=params, trace=trace)


def ha3_conservation_residual(params_t: DenseHAParams, params_0: DenseHAParams) -> np.ndarray:
    """Pairwise residual of the order-3 trajectory invariant (one-hot coordinates)."""
    w_t = params_t.w[:, :, 0]
    w_0 = params_0.w[:, :, 0]
    return w_t ** 2 - w_0 ** 2 - np.sum(params_t.c ** 2, axis=0)


# ---------------------------------------------------------------------------
# generic reverse-mode trainer
# ---------------------------------------------------------------------------


def _param_arrays(params) -> list[np.ndarray]:
    """Flat list of the trainable arrays inside a parameter container."""
    if isinstance(params, LinearSAParams):
        return [params.c, params.wv]
    if isinstance(params, MultiheadLinearSAParams):
        arrays = []
        for head in params.heads:
            arrays.extend([head.c, head.wv])
        return arrays  # w_out is treated as a fixed wiring matrix
    if isinstance(params, TwoLayerMultiheadParams):
        return _param_arrays(params.first) + _param_arrays(params.second)
    if isinstance(params, HFAParams):
        return list(params.scores) + list(params.values)
    if isinstance(params, DenseHAParams):
        return [params.c, params.w]
    raise TypeError(f"no trainable arrays for {type(params).__name__}")


def _linear_sa_vjp(x, c, wv, grad_out):
    """Gradients of sum(grad_out * linear_sa(x)) plus the input gradient."""
    scores = x @ c @ np.swapaxes(x, -1, -2)
    xw = x @ wv
    d_scores = grad_out @ np.swapaxes(xw, -1, -2)
    d_xw = np.swapaxes(scores, -1, -2) @ grad_out
    dc = np.einsum("bli,blm,bmj->ij", x, d_scores, x)
    dwv = np.einsum("bli,blk->ik", x, d_xw)
    dx = (d_scores @ x @ c.T
          + np.swapaxes(d_scores, -1, -2) @ x @ c
          + d_xw @ wv.T)
    return dc, dwv, dx


def _multihead_vjp(x, params: MultiheadLinearSAParams, grad_out):
    grads: list[np.ndarray] = []
    dx = np.zeros_like(x)
    if params.w_out is None:
        per_head = [grad_out] * len(params.heads)
    else:
        back = grad_out @ params.w_out.T
        per_head = []
        offset = 0
        for head in params.heads:
            width = head.wv.shape[1]
            per_head.append(back[..., offset:offset + width])
            offset += width
    for head, g in zip(params.heads, per_head):
        dc, dwv, dxh = _linear_sa_vjp(x, head.c, head.wv, g)
        grads.extend([dc, dwv])
        dx += dxh
    return grads, dx


def _hfa_forward_backward(params: HFAParams, x, y, n):
    if params.nonlinearity != "linear":
        raise ValueError("the generic trainer covers linear score products")
    score_factors = [x @ c @ np.swapaxes(x, -1, -2) for c in params.scores]
    scores = np.multiply.reduce(score_factors)
    if params.variant == SINGLE_VALUE:
        value_factors = [x @ params.values[0]]
        values = value_factors[0]
    else:
        value_factors = [x @ v for v in params.values]
        values = np.multiply.reduce(value_factors)
    out = scores @ values
    resid = out - y
    loss = float(np.sum(resid ** 2) / n)
    grad_out = (2.0 / n) * resid

    d_scores = grad_out @ np.swapaxes(values, -1, -2)
    d_values = np.swapaxes(scores, -1, -2) @ grad_out
    grads_c = []
    for a in range(len(params.scores)):
        others = [score_factors[b] for b in range(len(score_factors)) if b != a]
        partial = d_scores if not others else d_scores * np.multiply.reduce(others)
        grads_c.append(np.einsum("bli,blm,bmj->ij", x, partial, x))
    grads_v = []
    if params.variant == SINGLE_VALUE:
        grads_v.append(np.einsum("bli,blk->ik", x, d_values))
    else:
        for a in range(len(params.values)):
            others = [value_factors[b] for b in range(len(value_factors)) if b != a]
            partial = d_values if not others else d_values * np.multiply.reduce(others)
            grads_v.append(np.einsum("bli,blk->ik", x, partial))
    return loss, grads_c + grads_v


def _loss_and_grads(params, batch: SequenceBatch):
    """Loss plus gradients aligned with :func:`_param_arrays`."""
    x, y, n = batch.x, batch.y, batch.size
    if isinstance(params, HFAParams):
        return _hfa_forward_backward(params, x, y, n)
    if isinstance(params, LinearSAParams):
        out = linear_sa(x, params)
        resid = out - y
        grad_out = (2.0 / n) * resid
        dc, dwv, _ = _linear_sa_vjp(x, params.c, params.wv, grad_out)
        return float(np.sum(resid ** 2) / n), [dc, dwv]
    if isinstance(params, MultiheadLinearSAParams):
        out = apply_attention(params, x)
        resid = out - y
        grads, _ = _multihead_vjp(x, params, (2.0 / n) * resid)
        return float(np.sum(resid ** 2) / n), grads
    if isinstance(params, TwoLayerMultiheadParams):
        hidden = apply_attention(params.first, x)
        out = apply_attention(params.second, hidden)
        resid = out - y
        grad_out = (2.0 / n) * resid
        grads2, d_hidden = _multihead_vjp(hidden, params.second, grad_out)
        grads1, _ = _multihead_vjp(x, params.first, d_hidden)
        return float(np.sum(resid ** 2) / n), grads1 + grads2
    raise TypeError(f"generic trainer does not cover {type(params).__name__}")


def finite_difference_grads(params, batch: SequenceBatch, h: float = 1e-6):
    """Central-difference gradients of :func:`mse_loss`, matching _param_arrays order."""
    grads = []
    for array in _param_arrays(params):
        g = np.zeros_like(array)
        flat = array.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = mse_loss(params, batch)
            flat[i] = orig - h
            down = mse_loss(params, batch)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def train_generic(params0, batch: SequenceBatch, cfg: TrainConfig) -> TrainResult:
    """Full-batch gradient descent on any reverse-mode-differentiable variant.

    The caller supplies the initial parameters (so trajectories can be
    compared across model classes); the container is deep-copied, never
    mutated.  No trajectory invariant applies here, so the conservation
    column of the trace is NaN.
    """
    params = copy.deepcopy(params0)
    arrays = _param_arrays(params)
    trace = TrainTrace()
    initial_loss = None
    step = 0
    while True:
        loss, grads = _loss_and_grads(params, batch)
        if initial_loss is None:
            initial_loss = loss
        done = loss <= cfg.tolerance or step >= cfg.max_steps
        if done or step % cfg.log_period == 0:
            trace.record(step, loss, float("nan"), float("nan"))
        if loss > 10.0 * max(initial_loss, 1e-300) and step > 0:
            raise DivergenceError(
                f"loss {loss:.3e} exceeded 10x initial {initial_loss:.3e} "
                f"at step {step} (step_size={cfg.step_size})")
        if done:
            break
        eta = cfg.step_at(loss)
        for array, grad in zip(arrays, grads):
            array -= eta * grad
        step += 1
    return TrainResult(params=params, trace=trace)
