"""Post-training evaluation: generalization, parameter equivalence, reports.

Functionally equivalent score/value pairs are compared through the
symbol-space transform T[a, k] = sum_v (x(a)^T C x(v)) (x(v)^T W[:, k]);
training and closed-form construction land on different raw parameters,
but their transforms agree for any pair that generalizes across lengths.
The full product table (before the v-sum) is exposed alongside as a
finer diagnostic.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .attention import LinearSAParams, apply_attention
from .domain import EmbeddingBase, SequenceBatch
from .training import mse_loss

REPORT_SCHEMA_VERSION = 1


def _tables(params: LinearSAParams, base: EmbeddingBase):
    base.require_orthonormal()
    b = base.matrix
    return b @ params.c @ b.T, b @ params.wv


def t_transform(params: LinearSAParams, base: EmbeddingBase) -> np.ndarray:
    """Symbol-space transform (vocab x d2); equal transforms mark equivalent blocks.

    In the one-hot base this is simply C @ Wv.
    """
    score_table, value_table = _tables(params, base)
    return score_table @ value_table


def product_table(params: LinearSAParams, base: EmbeddingBase) -> np.ndarray:
    """Per-pair products score[a, v] * value[v, k] (vocab x vocab x d2)."""
    score_table, value_table = _tables(params, base)
    return score_table[:, :, None] * value_table[None, :, :]


def rescaled_equivalent_params(params: LinearSAParams, scales) -> LinearSAParams:
    """One-hot-base rescaling C diag(s), diag(1/s) W that leaves the block's function unchanged."""
    scales = np.asarray(scales, dtype=np.float64)
    if np.any(scales == 0.0):
        raise ValueError("scales must be nonzero")
    return LinearSAParams(c=params.c * scales[None, :], wv=params.wv / scales[:, None])


@dataclass
class EquivalenceReport:
    t_learned: np.ndarray
    t_reference: np.ndarray
    mse_distance: float
    max_distance: float

    def to_dict(self) -> dict:
        return {
            "mse_distance": self.mse_distance,
            "max_distance": self.max_distance,
        }


def compare_transforms(learned: LinearSAParams, reference: LinearSAParams,
                       base: EmbeddingBase) -> EquivalenceReport:
    """Entry-wise distance between the two parameter transforms."""
    t_learned = t_transform(learned, base)
    t_reference = t_transform(reference, base)
    diff = t_learned - t_reference
    return EquivalenceReport(
        t_learned=t_learned,
        t_reference=t_reference,
        mse_distance=float(np.mean(diff ** 2)),
        max_distance=float(np.abs(diff).max()),
    )


def eval_generalization(params, sampler, length: int, n_samples: int, seed: int) -> float:
    """Mean squared residual norm on freshly sampled data of the given length.

    ``sampler(length, n_samples, seed)`` must return a labeled batch; the
    metric matches the training loss convention (per-sample squared
    Frobenius norm).
    """
    batch = sampler(length, n_samples, seed)
    return mse_loss(params, batch)


def generalization_table(params, sampler, lengths, n_samples: int, seed: int) -> list[dict]:
    rows = []
    for i, length in enumerate(lengths):
        mse = eval_generalization(params, sampler, int(length), n_samples, seed + i)
        rows.append({"length": int(length), "n_samples": int(n_samples), "mse": float(mse)})
    return rows


@dataclass
class LengthBiasProbe:
    """Fitted additive length bias a (L* - L)/(L* - 1) and the fit residual."""

    slope: float
    residual: float
    deviations: dict[int, float]


def length_bias_probe(params, reference: LinearSAParams, base: EmbeddingBase,
                      l_star: int, lengths, n_samples: int, seed: int,
                      distinct: bool = False) -> LengthBiasProbe:
    """Fit the per-length mean output deviation to the affine-in-length bias model.

    A parameter pair that agrees on length-L* data but deviates by a on
    the diagonal of the product table (balanced by -a/(L*-1) off it)
    shifts outputs by exactly a (L*-L)/(L*-1) at other lengths; the fitted
    slope recovers a, and near-zero slope certifies length transfer.
    ``distinct`` samples tuples without symbol repeats, matching the
    balanced-deviation setup exactly.
    """
    rng = np.random.default_rng(seed)
    vocab = base.size
    deviations: dict[int, float] = {}
    for length in lengths:
        length = int(length)
        diffs = []
        for _ in range(n_samples):
            if distinct:
                if length > vocab:
                    raise ValueError("distinct probes need length <= vocabulary size")
                tup = rng.permutation(vocab)[:length]
            else:
                tup = rng.integers(0, vocab, size=length)
            x = base.matrix[tup]
            diffs.append(np.mean(apply_attention(params, x) - apply_attention(reference, x)))
        deviations[length] = float(np.mean(diffs))
    g = np.array([(l_star - length) / (l_star - 1.0) for length in deviations])
    d = np.array(list(deviations.values()))
    denom = float(g @ g)
    slope = float(g @ d / denom) if denom > 0 else 0.0
    residual = float(np.sqrt(np.mean((d - slope * g) ** 2)))
    return LengthBiasProbe(slope=slope, residual=residual, deviations=deviations)


# ---------------------------------------------------------------------------
# experiment reports
# ---------------------------------------------------------------------------


def assemble_report(config: dict, seed: int,
                    training: dict | None = None,
                    generalization: list[dict] | None = None,
                    equivalence: dict | None = None,
                    rank_diagnostics: dict | None = None) -> dict:
    """Gather experiment outputs into the versioned report structure."""
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "seed": int(seed),
        "config": config,
        "training": training,
        "generalization": generalization,
        "equivalence": equivalence,
        "rank_diagnostics": rank_diagnostics,
    }


def write_report(report: dict, directory: str, metadata: dict | None = None) -> str:
    """Write report.json deterministically; volatile info goes to metadata.json.

    The report file contains only experiment outputs, so identical
    (config, seed, build) runs produce byte-identical bytes; timestamps
    and environment versions live in the separate metadata file.
    """
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, "report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if metadata is not None:
        with open(os.path.join(directory, "metadata.json"), "w", encoding="utf-8") as fh:
            json.dump(metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return path


def write_generalization_csv(rows: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("length,n_samples,mse\n")
        for row in rows:
            fh.write("%d,%d,%.17g\n" % (row["length"], row["n_samples"], row["mse"]))
