"""Vocabularies, embeddings, sequence batches, and data-versatility diagnostics.

Symbols are dense integer indices 0..size-1 throughout; human-readable
names belong in config files.  Embedding bases are stored with
orthonormal rows (the sinusoidal base folds its natural sqrt(N/2) row
norm into the matrix), which keeps every downstream identity free of
stray scale factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import as_matrix, column_rank, singular_values

ONE_HOT = "one_hot"
SINUSOIDAL = "sinusoidal"
SINUSOIDAL_KRON = "sinusoidal_kron"
RANDOM_ORTHONORMAL = "random_orthonormal"

_ORTHONORMAL_KINDS = (ONE_HOT, SINUSOIDAL, SINUSOIDAL_KRON, RANDOM_ORTHONORMAL)


@dataclass(frozen=True)
class Vocabulary:
    """Finite symbol set; symbols are the integers 0..size-1."""

    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("vocabulary must contain at least one symbol")


@dataclass(frozen=True)
class EmbeddingBase:
    """Embedding matrix with one row per symbol.

    ``matrix`` has shape (size, dim).  For the orthonormal kinds the rows
    form an orthonormal set, so for square bases B @ B.T = I.
    """

    kind: str
    matrix: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "matrix", as_matrix(self.matrix, "embedding matrix"))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row(self, symbol: int) -> np.ndarray:
        return self.matrix[symbol]

    def is_orthonormal(self, tol: float = 1e-10) -> bool:
        gram = self.matrix @ self.matrix.T
        return bool(np.allclose(gram, np.eye(self.size), atol=tol))

    def require_orthonormal(self) -> None:
        if not self.is_orthonormal():
            raise ValueError(f"embedding base of kind {self.kind!r} does not have orthonormal rows")


def build_one_hot(vocab: Vocabulary | int) -> EmbeddingBase:
    """Standard-basis embedding: row of symbol a is e_a, so B = I."""
    size = vocab.size if isinstance(vocab, Vocabulary) else int(vocab)
    return EmbeddingBase(ONE_HOT, np.eye(size))


def sinusoidal_rows(n_points: int, normalized: bool = True) -> np.ndarray:
    """Sinusoidal position embedding rows for positions 0..N-1 on a ring.

    Row n is [1/sqrt2, sin(2 pi n / N), cos(2 pi n / N), ...,
    sin(2 pi (N/2-1) n / N), cos(2 pi (N/2-1) n / N), (1/sqrt2) cos(pi n)],
    which gives p_m . p_n = (N/2) delta_{mn}.  With ``normalized`` the rows
    are scaled by sqrt(2/N) so they are orthonormal.
    """
    if n_points % 2 != 0:
        raise ValueError("n_points must be even")
    n = np.arange(n_points)[:, None]
    out = np.empty((n_points, n_points))
    out[:, 0] = 1.0 / np.sqrt(2.0)
    for k in range(1, n_points // 2):
        angle = 2.0 * np.pi * k * n[:, 0] / n_points
        out[:, 2 * k - 1] = np.sin(angle)
        out[:, 2 * k] = np.cos(angle)
    out[:, n_points - 1] = np.cos(np.pi * n[:, 0]) / np.sqrt(2.0)
    if normalized:
        out *= np.sqrt(2.0 / n_points)
    return out


def build_sinusoidal(n_points: int) -> EmbeddingBase:
    """Orthonormal sinusoidal base for a ring of ``n_points`` positions."""
    return EmbeddingBase(SINUSOIDAL, sinusoidal_rows(n_points, normalized=True))


def build_sinusoidal_2d(n_points: int) -> EmbeddingBase:
    """Orthonormal base for an N x N torus: row of cell (x, y) is p_x (x) p_y.

    Cells are indexed x * N + y.  Kronecker products of orthonormal rows
    are orthonormal, so the base inherits all single-axis identities.
    """
    rows_1d = sinusoidal_rows(n_points, normalized=True)
    return EmbeddingBase(SINUSOIDAL_KRON, np.kron(rows_1d, rows_1d))


def build_random_orthonormal(size: int, seed: int) -> EmbeddingBase:
    """QR of a seeded Gaussian matrix, sign-fixed so the result is reproducible."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    q = q * np.sign(np.diag(r))
    return EmbeddingBase(RANDOM_ORTHONORMAL, q, seed=seed)


@dataclass
class SequenceBatch:
    """A batch of fixed-length sequences: embeddings ``x`` and optional targets ``y``.

    ``tuples`` holds the raw symbol indices (batch, length) when the task
    is symbol-valued; tasks with continuous token content (e.g. time
    series) may leave it as positional bookkeeping or None.
    """

    x: np.ndarray
    y: np.ndarray | None = None
    tuples: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        if self.x.ndim != 3:
            raise ValueError("x must have shape (batch, length, dim)")
        if self.y is not None:
            self.y = np.ascontiguousarray(self.y, dtype=np.float64)
            if self.y.shape[:2] != self.x.shape[:2]:
                raise ValueError("y must match x in batch and length")
        if self.tuples is not None:
            self.tuples = np.ascontiguousarray(self.tuples, dtype=np.int64)
            if self.tuples.shape != self.x.shape[:2]:
                raise ValueError("tuples must have shape (batch, length)")

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @property
    def length(self) -> int:
        return self.x.shape[1]

    @property
    def dim(self) -> int:
        return self.x.shape[2]

    @property
    def target_dim(self) -> int:
        if self.y is None:
            raise ValueError("batch has no targets")
        return self.y.shape[2]


def embed_batch(base: EmbeddingBase, tuples) -> SequenceBatch:
    """Stack embedding rows of each symbol tuple into (batch, length, dim) inputs."""
    tuples = np.ascontiguousarray(tuples, dtype=np.int64)
    if tuples.ndim != 2:
        raise ValueError("tuples must have shape (batch, length)")
    if tuples.min(initial=0) < 0 or tuples.max(initial=0) >= base.size:
        raise IndexError("symbol index out of range for the embedding base")
    return SequenceBatch(x=base.matrix[tuples], tuples=tuples)


@dataclass
class DataMatrixSet:
    """Per-sample symbol counts with per-symbol row selections.

    ``counts[n, v]`` is the multiplicity of symbol v in tuple n; each row
    sums to the sequence length.  ``for_symbol(mu)`` returns the count
    rows of the samples whose tuple contains mu.
    """

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.ascontiguousarray(self.counts, dtype=np.float64)

    @property
    def vocab_size(self) -> int:
        return self.counts.shape[1]

    def for_symbol(self, symbol: int) -> np.ndarray:
        return self.counts[self.counts[:, symbol] > 0]


def count_matrix(tuples, vocab: Vocabulary | int) -> DataMatrixSet:
    """Count symbol occurrences per tuple."""
    size = vocab.size if isinstance(vocab, Vocabulary) else int(vocab)
    tuples = np.ascontiguousarray(tuples, dtype=np.int64)
    batch = tuples.shape[0]
    counts = np.zeros((batch, size))
    for v in range(size):
        counts[:, v] = np.sum(tuples == v, axis=1)
    return DataMatrixSet(counts)


@dataclass(frozen=True)
class SymbolRankReport:
    symbol: int
    n_rows: int
    rank: int
    full_rank: bool
    sigma_min: float


def versatility_check(dms: DataMatrixSet, rel_tol: float | None = None) -> list[SymbolRankReport]:
    """Column rank of each per-symbol count matrix.

    A symbol's matrix is full rank when its rank equals the vocabulary
    size; sigma_min is reported for diagnosing near-deficiency (e.g. the
    all-ones column forced by unique-element sampling).
    """
    reports = []
    for symbol in range(dms.vocab_size):
        rows = dms.for_symbol(symbol)
        if rows.shape[0] == 0:
            reports.append(SymbolRankReport(symbol, 0, 0, False, 0.0))
            continue
        rank = column_rank(rows, rel_tol)
        svals = singular_values(rows)
        sigma_min = float(svals[min(dms.vocab_size, len(svals)) - 1]) if len(svals) else 0.0
        reports.append(
            SymbolRankReport(symbol, rows.shape[0], rank, rank == dms.vocab_size, sigma_min)
        )
    return reports


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Per-sample RNG stream: default_rng(SeedSequence(seed, spawn_key=(index,))).

    Counter-based splitting keeps sample ``index`` independent of batch
    chunking or generation order, so batches are reproducible even if
    samples are drawn in parallel.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
