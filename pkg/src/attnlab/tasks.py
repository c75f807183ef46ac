"""Synthetic task generators with ground-truth oracles.

Each task defines (a) an exact target map used to label generated data
and (b) enough structure for a closed-form attention construction to
reproduce those labels.  Generators are deterministic functions of
(config, seed); per-sample randomness comes from counter-split RNG
streams (see :func:`attnlab.domain.sample_rng`), so batch contents do
not depend on generation order.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .domain import (
    EmbeddingBase,
    SequenceBatch,
    build_one_hot,
    embed_batch,
    sample_rng,
)
from .linalg import read_matrix_csv, write_matrix_csv


# ---------------------------------------------------------------------------
# colliding agents on a cylindrical grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CollisionConfig:
    """Agents of radius ``radius`` on an ``n`` x ``n`` grid with wrap-around.

    ``dims`` selects the 1-D task (positions are wrapped y-coordinates;
    this is the desk-scale default) or the 2-D variant where both
    coordinates enter the penalty.  ``r2`` is the close-range threshold of
    the 2-D variant (defaults to 2 * radius).
    """

    n: int = 32
    radius: int = 2
    agents: int = 20
    dims: int = 1
    wrap: tuple[bool, ...] = ()
    r2: int | None = None

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise ValueError("dims must be 1 or 2")
        if 2 * self.radius >= self.n / 2:
            raise ValueError("need 2 * radius < n / 2")
        if self.agents < 2:
            raise ValueError("need at least 2 agents")
        if not self.wrap:
            object.__setattr__(self, "wrap", (True,) * self.dims)
        if len(self.wrap) != self.dims:
            raise ValueError("wrap must give one flag per dimension")
        if self.r2 is None:
            object.__setattr__(self, "r2", 2 * self.radius)

    @property
    def vocab_size(self) -> int:
        return self.n ** self.dims


def wrap_distance(a, b, n: int, wrap: bool = True):
    """Shortest distance between coordinates on a ring of ``n`` cells (or a line)."""
    diff = np.abs(np.asarray(a) - np.asarray(b))
    if wrap:
        return np.minimum(diff, n - diff)
    return diff


def collision_interaction_table(cfg: CollisionConfig) -> np.ndarray:
    """Pairwise penalty table over position symbols.

    1-D: entry (m, n) is -1 when the wrapped distance is within 2R.
    2-D: cells are indexed x * n + y, and a within-range pair costs -1,
    or -10 when the (wrapped) Euclidean separation is at most ``r2``.
    """
    if cfg.dims == 1:
        pos = np.arange(cfg.n)
        near = wrap_distance(pos[:, None], pos[None, :], cfg.n, cfg.wrap[0]) <= 2 * cfg.radius
        return -near.astype(np.float64)
    pos = np.arange(cfg.n)
    dx = wrap_distance(pos[:, None], pos[None, :], cfg.n, cfg.wrap[0])
    dy = wrap_distance(pos[:, None], pos[None, :], cfg.n, cfg.wrap[1])
    collide_y = (dy <= 2 * cfg.radius).astype(np.float64)
    dist2 = dx[:, None, :, None] ** 2 + dy[None, :, None, :] ** 2
    close = (dist2 <= cfg.r2 ** 2).astype(np.float64)
    table = -(collide_y[None, :, None, :] * (1.0 + 9.0 * close))
    return table.reshape(cfg.vocab_size, cfg.vocab_size)


def positions_to_symbols(cfg: CollisionConfig, positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.int64)
    if cfg.dims == 1:
        return positions
    return positions[..., 0] * cfg.n + positions[..., 1]


def collision_value_oracle(cfg: CollisionConfig, positions) -> np.ndarray:
    """Per-agent value: summed pairwise penalties over the other agents (j != i)."""
    symbols = positions_to_symbols(cfg, positions)
    if symbols.ndim != 1:
        raise ValueError("collision_value_oracle expects one configuration at a time")
    table = collision_interaction_table(cfg)
    pair = table[np.ix_(symbols, symbols)]
    return pair.sum(axis=1) - np.diag(pair)


def collision_targets(cfg: CollisionConfig, symbols: np.ndarray) -> np.ndarray:
    """Training targets: the value oracle plus the constant self-overlap term.

    A single score/value pair cannot realize the strict j != i sum at
    every sequence length, so the supervised target folds in the j = i
    term (a constant: -1 in 1-D, -10 in 2-D).  One parameter set then
    serves every length.
    """
    table = collision_interaction_table(cfg)
    if symbols.ndim == 1:
        symbols = symbols[None, :]
    out = np.empty(symbols.shape + (1,))
    for b in range(symbols.shape[0]):
        s = symbols[b]
        out[b, :, 0] = table[np.ix_(s, s)].sum(axis=1)
    return out


def rollout_collisions(cfg: CollisionConfig, x_positions, y_positions) -> np.ndarray:
    """Explicit move-right rollout; counts each colliding pair once.

    Agents advance one step right per tick until they hit the wall; a pair
    collides when the Euclidean distance (with wrapped y) is within 2R at
    any tick.  Returns -1 times the number of distinct partners each agent
    ever collided with.
    """
    if cfg.dims != 1:
        raise ValueError("the rollout simulator covers the 1-D value function")
    x = np.asarray(x_positions, dtype=np.int64).copy()
    y = np.asarray(y_positions, dtype=np.int64)
    n_agents = len(x)
    collided = np.zeros((n_agents, n_agents), dtype=bool)

    def record(xs):
        dx = xs[:, None] - xs[None, :]
        dy = wrap_distance(y[:, None], y[None, :], cfg.n, cfg.wrap[0])
        hit = dx.astype(np.float64) ** 2 + dy.astype(np.float64) ** 2 <= (2 * cfg.radius) ** 2
        collided[:] |= hit

    record(x)
    while (x < cfg.n - 1).any():
        x = np.minimum(x + 1, cfg.n - 1)
        record(x)
    np.fill_diagonal(collided, False)
    return -collided.sum(axis=1).astype(np.float64)


def sample_collision_batch(
    cfg: CollisionConfig,
    batch_size: int,
    seed: int,
    base: EmbeddingBase | None = None,
    length: int | None = None,
) -> SequenceBatch:
    """Uniform random agent positions with exact value-function targets."""
    if base is None:
        base = build_one_hot(cfg.vocab_size)
    length = cfg.agents if length is None else length
    tuples = np.empty((batch_size, length), dtype=np.int64)
    for b in range(batch_size):
        rng = sample_rng(seed, b)
        tuples[b] = rng.integers(0, cfg.vocab_size, size=length)
    batch = embed_batch(base, tuples)
    batch.y = collision_targets(cfg, tuples)
    return batch


# ---------------------------------------------------------------------------
# genotype -> activation mapping
# ---------------------------------------------------------------------------


def genotype_targets(activation: dict[int, tuple[int, ...]], tuples: np.ndarray) -> np.ndarray:
    """Activation level per position.

    An allele with an empty activator list is always active (level 1).
    An allele with activators reaches the fraction of its activators
    present in the sequence; absent alleles stay at 0.  The fractional
    convention matches the closed-form score matrix, whose activator rows
    carry weight 1/m.
    """
    tuples = np.asarray(tuples, dtype=np.int64)
    out = np.zeros(tuples.shape + (1,))
    for b in range(tuples.shape[0]):
        present = set(int(s) for s in tuples[b])
        for i, sym in enumerate(tuples[b]):
            entry = activation.get(int(sym))
            if entry is None:
                continue
            if len(entry) == 0:
                out[b, i, 0] = 1.0
            else:
                hits = sum(1 for act in entry if act in present)
                out[b, i, 0] = hits / len(entry)
    return out


def random_activation_dict(vocab_size: int, seed: int,
                           always_frac: float = 0.2,
                           inactive_frac: float = 0.2,
                           max_activators: int = 3) -> dict[int, tuple[int, ...]]:
    """Random activation relations: some always-on alleles, some inert, rest activated."""
    rng = np.random.default_rng(seed)
    activation: dict[int, tuple[int, ...]] = {}
    for sym in range(vocab_size):
        u = rng.random()
        if u < inactive_frac:
            continue
        if u < inactive_frac + always_frac:
            activation[sym] = ()
            continue
        others = [s for s in range(vocab_size) if s != sym]
        m = int(rng.integers(1, max_activators + 1))
        activation[sym] = tuple(int(s) for s in rng.choice(others, size=m, replace=False))
    return activation


def sample_genotype_batch(
    activation: dict[int, tuple[int, ...]],
    vocab_size: int,
    length: int,
    batch_size: int,
    seed: int,
    base: EmbeddingBase | None = None,
) -> SequenceBatch:
    """Sequences of distinct alleles (each appears at most once) with activation targets."""
    if length > vocab_size:
        raise ValueError("distinct-allele sequences need length <= vocab_size")
    if base is None:
        base = build_one_hot(vocab_size)
    tuples = np.empty((batch_size, length), dtype=np.int64)
    for b in range(batch_size):
        rng = sample_rng(seed, b)
        tuples[b] = rng.permutation(vocab_size)[:length]
    batch = embed_batch(base, tuples)
    batch.y = genotype_targets(activation, tuples)
    return batch


# ---------------------------------------------------------------------------
# factorized cross-feature interactions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureLayout:
    """Tokens composed of discrete features, embedded as concatenated one-hots."""

    sizes: tuple[int, ...]

    @property
    def n_features(self) -> int:
        return len(self.sizes)

    @property
    def dim(self) -> int:
        return int(sum(self.sizes))

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))

    @property
    def vocab_size(self) -> int:
        return int(np.prod(self.sizes))

    def encode(self, features: np.ndarray) -> np.ndarray:
        """Mixed-radix flattening of feature tuples to dense symbol indices."""
        features = np.asarray(features, dtype=np.int64)
        out = np.zeros(features.shape[:-1], dtype=np.int64)
        for m, size in enumerate(self.sizes):
            out = out * size + features[..., m]
        return out

    def decode(self, symbols: np.ndarray) -> np.ndarray:
        symbols = np.asarray(symbols, dtype=np.int64)
        feats = np.empty(symbols.shape + (self.n_features,), dtype=np.int64)
        rem = symbols.copy()
        for m in range(self.n_features - 1, -1, -1):
            feats[..., m] = rem % self.sizes[m]
            rem //= self.sizes[m]
        return feats

    def embed(self, features: np.ndarray) -> np.ndarray:
        """Concatenated one-hot embedding of feature tuples."""
        features = np.asarray(features, dtype=np.int64)
        out = np.zeros(features.shape[:-1] + (self.dim,))
        for m, off in enumerate(self.offsets):
            idx = features[..., m] + off
            np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
        return out


@dataclass(frozen=True)
class Factor:
    """One score factor: table[q_value, k_value] over a query/key feature pair."""

    query_feature: int
    key_feature: int
    table: np.ndarray


@dataclass(frozen=True)
class ValueFactor:
    """One value factor: weight per value of the chosen key feature."""

    feature: int
    weights: np.ndarray


@dataclass(frozen=True)
class FactorizedSpec:
    """Target of the form sum_j prod_a f_a(.,.) * prod_a w_a(.)."""

    layout: FeatureLayout
    factors: tuple[Factor, ...]
    values: tuple[ValueFactor, ...]

    def __post_init__(self):
        if len(self.factors) != len(self.values):
            raise ValueError("need one value factor per score factor")

    @property
    def order(self) -> int:
        return len(self.factors)


def factorized_targets(spec: FactorizedSpec, features: np.ndarray) -> np.ndarray:
    """Direct evaluation of the factorized interaction sum."""
    features = np.asarray(features, dtype=np.int64)
    batch, length = features.shape[:2]
    out = np.empty((batch, length, 1))
    for b in range(batch):
        scores = np.ones((length, length))
        for f in spec.factors:
            scores *= np.asarray(f.table)[np.ix_(features[b, :, f.query_feature],
                                                 features[b, :, f.key_feature])]
        weights = np.ones(length)
        for v in spec.values:
            weights *= np.asarray(v.weights)[features[b, :, v.feature]]
        out[b, :, 0] = scores @ weights
    return out


def sample_factorized_batch(spec: FactorizedSpec, length: int, batch_size: int,
                            seed: int) -> SequenceBatch:
    """Uniform feature tuples embedded as concatenated one-hots with exact targets."""
    feats = np.empty((batch_size, length, spec.layout.n_features), dtype=np.int64)
    for b in range(batch_size):
        rng = sample_rng(seed, b)
        for m, size in enumerate(spec.layout.sizes):
            feats[b, :, m] = rng.integers(0, size, size=length)
    return SequenceBatch(
        x=spec.layout.embed(feats),
        y=factorized_targets(spec, feats),
        tuples=spec.layout.encode(feats),
    )


def orthogonal_factor_instance(sizes: tuple[int, int], seed: int) -> FactorizedSpec:
    """Two-feature instance with Frobenius-orthogonal factor tables and unit weights.

    The second table is zero-mean and orthogonalized against the first, so
    the product target has no additive cross-feature shortcut.
    """
    rng = np.random.default_rng(seed)
    f1 = rng.standard_normal((sizes[0], sizes[0]))
    f2 = rng.standard_normal((sizes[1], sizes[1]))
    if sizes[0] == sizes[1]:
        f1 = f1 - f1.mean()
        f2 = f2 - f2.mean()
        f2 = f2 - (np.sum(f1 * f2) / np.sum(f1 * f1)) * f1
    layout = FeatureLayout(tuple(sizes))
    return FactorizedSpec(
        layout=layout,
        factors=(Factor(0, 0, f1), Factor(1, 1, f2)),
        values=(ValueFactor(0, np.ones(sizes[0])), ValueFactor(1, np.ones(sizes[1]))),
    )


# ---------------------------------------------------------------------------
# ternary synergies
# ---------------------------------------------------------------------------


def ternary_targets(f3: np.ndarray, w2: np.ndarray, tuples: np.ndarray) -> np.ndarray:
    """Targets sum_{j < k} f3[s_i, s_j, s_k] * w2[s_j, s_k] for every row i."""
    f3 = np.asarray(f3, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    tuples = np.asarray(tuples, dtype=np.int64)
    batch, length = tuples.shape
    vocab = f3.shape[0]
    out = np.empty((batch, length, 1))
    f3_flat = f3.reshape(vocab, vocab * vocab)
    for b in range(batch):
        s = tuples[b]
        gamma = np.zeros((vocab, vocab))
        for j in range(length):
            for k in range(j + 1, length):
                gamma[s[j], s[k]] += 1.0
        pair_weight = (gamma * w2).reshape(-1)
        out[b, :, 0] = f3_flat[s] @ pair_weight
    return out


def random_ternary_tables(vocab_size: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random synergy and pair-weight tables; the pair weights have a zero diagonal.

    Zeroing w[b, b] keeps the strict j < k target inside the model class
    whose ordered sum includes tied key indices.
    """
    rng = np.random.default_rng(seed)
    f3 = rng.standard_normal((vocab_size,) * 3)
    w2 = rng.standard_normal((vocab_size, vocab_size))
    np.fill_diagonal(w2, 0.0)
    return f3, w2


def sample_ternary_batch(f3, w2, vocab_size: int, length: int, batch_size: int,
                         seed: int, base: EmbeddingBase | None = None) -> SequenceBatch:
    if base is None:
        base = build_one_hot(vocab_size)
    tuples = np.empty((batch_size, length), dtype=np.int64)
    for b in range(batch_size):
        rng = sample_rng(seed, b)
        tuples[b] = rng.integers(0, vocab_size, size=length)
    batch = embed_batch(base, tuples)
    batch.y = ternary_targets(f3, w2, tuples)
    return batch


# ---------------------------------------------------------------------------
# delayed-sum time series
# ---------------------------------------------------------------------------


def simulate_series(delays: tuple[int, ...], coeffs: tuple[float, ...],
                    a_matrix: np.ndarray, length: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Series m[0..length] with a random initial segment and the delayed recursion after."""
    a_matrix = np.asarray(a_matrix, dtype=np.float64)
    d2 = a_matrix.shape[0]
    t0 = max(delays)
    m = np.zeros((length + 1, d2))
    m[:t0] = rng.standard_normal((t0, d2))
    for t in range(t0, length + 1):
        for k, a in zip(delays, coeffs):
            m[t] += a * (a_matrix @ m[t - k])
    return m


def timeseries_targets(delays, coeffs, a_matrix, observed: np.ndarray) -> np.ndarray:
    """Row-wise delayed sums over the observed tokens.

    Row u (u = 0..L, including the length-L query row) is
    sum_{k in D, u-k >= 0} a_k A m[u-k]; the query row therefore equals
    the next series value whenever all delays reach back into the window.
    """
    a_matrix = np.asarray(a_matrix, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    length = observed.shape[0]
    out = np.zeros((length + 1, a_matrix.shape[0]))
    for u in range(length + 1):
        for k, a in zip(delays, coeffs):
            if u - k >= 0:
                out[u] += a * (a_matrix @ observed[u - k])
    return out


def sample_timeseries_batch(delays, coeffs, a_matrix, length: int, batch_size: int,
                            seed: int) -> SequenceBatch:
    """Tokens [m_t, position] for t < L plus a zero-valued query token at position L."""
    delays = tuple(int(k) for k in delays)
    coeffs = tuple(float(a) for a in coeffs)
    if min(delays) < 1 or max(delays) >= length:
        raise ValueError("delays must lie in [1, length)")
    a_matrix = np.asarray(a_matrix, dtype=np.float64)
    d2 = a_matrix.shape[0]
    n_tokens = length + 1
    x = np.zeros((batch_size, n_tokens, d2 + n_tokens))
    y = np.zeros((batch_size, n_tokens, d2))
    positions = np.arange(n_tokens)
    for b in range(batch_size):
        rng = sample_rng(seed, b)
        m = simulate_series(delays, coeffs, a_matrix, length, rng)
        x[b, :length, :d2] = m[:length]
        x[b, positions, d2 + positions] = 1.0
        y[b] = timeseries_targets(delays, coeffs, a_matrix, m[:length])
    tuples = np.tile(positions, (batch_size, 1))
    return SequenceBatch(x=x, y=y, tuples=tuples)


# ---------------------------------------------------------------------------
# pixel-pattern counting
# ---------------------------------------------------------------------------


def random_image(height: int, width: int, seed: int, p_black: float = 0.4) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.random((height, width)) < p_black).astype(np.float64)


def image_tokens(image: np.ndarray) -> np.ndarray:
    """One token per pixel: [blackness bit, one-hot position]."""
    image = np.asarray(image, dtype=np.float64)
    height, width = image.shape
    n = height * width
    x = np.zeros((n, 1 + n))
    x[:, 0] = image.reshape(-1)
    x[np.arange(n), 1 + np.arange(n)] = 1.0
    return x


def pattern_count_targets(image: np.ndarray, offsets) -> np.ndarray:
    """Per-pixel count of black pixels at the given (dy, dx) offsets (no wrap)."""
    image = np.asarray(image, dtype=np.float64)
    height, width = image.shape
    out = np.zeros((height * width, 1))
    for i, (r, c) in enumerate((r, c) for r in range(height) for c in range(width)):
        total = 0.0
        for dr, dc in offsets:
            rr, cc = r + dr, c + dc
            if 0 <= rr < height and 0 <= cc < width:
                total += image[rr, cc]
        out[i, 0] = total
    return out


# ---------------------------------------------------------------------------
# batch serialization: tuples as JSON, numeric payloads as matrix CSVs
# ---------------------------------------------------------------------------

BATCH_SCHEMA_VERSION = 1


def save_batch(batch: SequenceBatch, directory: str, prefix: str = "batch") -> str:
    """Write a batch as JSON metadata (with tuples) plus x/y matrix CSVs."""
    os.makedirs(directory, exist_ok=True)
    meta = {
        "schema_version": BATCH_SCHEMA_VERSION,
        "batch": batch.size,
        "length": batch.length,
        "dim": batch.dim,
        "target_dim": batch.y.shape[2] if batch.y is not None else None,
        "tuples": batch.tuples.tolist() if batch.tuples is not None else None,
    }
    write_matrix_csv(os.path.join(directory, f"{prefix}_x.csv"),
                     batch.x.reshape(batch.size * batch.length, batch.dim))
    if batch.y is not None:
        write_matrix_csv(os.path.join(directory, f"{prefix}_y.csv"),
                         batch.y.reshape(batch.size * batch.length, -1))
    path = os.path.join(directory, f"{prefix}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    return path


def load_batch(meta_path: str, prefix: str = "batch") -> SequenceBatch:
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    directory = os.path.dirname(meta_path)
    x = read_matrix_csv(os.path.join(directory, f"{prefix}_x.csv"))
    x = x.reshape(meta["batch"], meta["length"], meta["dim"])
    y = None
    if meta["target_dim"] is not None:
        y = read_matrix_csv(os.path.join(directory, f"{prefix}_y.csv"))
        y = y.reshape(meta["batch"], meta["length"], meta["target_dim"])
    tuples = np.asarray(meta["tuples"], dtype=np.int64) if meta["tuples"] is not None else None
    return SequenceBatch(x=x, y=y, tuples=tuples)
