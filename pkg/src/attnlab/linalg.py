"""Dense linear-algebra and tensor helpers shared by every other module.

All numeric carriers are plain ``numpy.ndarray`` objects in float64,
row-major order.  ``as_matrix``/``as_tensor`` coerce and validate inputs
(shape, dtype, finiteness) at module boundaries; internal code assumes
validated arrays.  Everything here is a pure function over immutable
inputs, so values can be shared freely across threads.
"""

from __future__ import annotations

import csv

import numpy as np

__all__ = [
    "DimensionError",
    "as_matrix",
    "as_tensor",
    "matmul",
    "hadamard",
    "kronecker",
    "singular_values",
    "column_rank",
    "dtfs_window",
    "dtfs_analysis",
    "dtfs_synthesis",
    "write_matrix_csv",
    "read_matrix_csv",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def _check_finite(a: np.ndarray, name: str) -> None:
    if a.size and not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite entries")


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a C-contiguous float64 rank-2 array with finite entries."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise DimensionError(f"{name} must be rank 2, got shape {out.shape}")
    _check_finite(out, name)
    return out


def as_tensor(a, name: str = "tensor") -> np.ndarray:
    """Coerce ``a`` to a C-contiguous float64 array of any rank with finite entries."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    _check_finite(out, name)
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def hadamard(a, b) -> np.ndarray:
    """Element-wise product of two same-shape matrices."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    return a * b


def kronecker(a, b) -> np.ndarray:
    """Kronecker product: block (i, j) of the result is a[i, j] * b."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    return np.kron(a, b)


def singular_values(a) -> np.ndarray:
    """Singular values of ``a`` in descending order (empty array for an empty matrix)."""
    a = as_matrix(a)
    if a.size == 0:
        return np.zeros(0)
    return np.linalg.svd(a, compute_uv=False)


def column_rank(a, rel_tol: float | None = None) -> int:
    """Numerical rank: count of singular values above ``rel_tol`` x largest.

    Default tolerance is 1e-8 * max(rows, cols), the usual numerical-rank
    convention.  A zero (or empty) matrix has rank 0.
    """
    a = as_matrix(a)
    if a.size == 0:
        return 0
    if rel_tol is None:
        rel_tol = 1e-8 * max(a.shape)
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    s = singular_values(a)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def dtfs_window(n_points: int, radius: int) -> np.ndarray:
    """Fourier-series coefficients of the periodic window indicator 1[|m| <= 2R].

    Uses the 1/N analysis convention, so synthesis is
    f[m] = sum_k F[k] exp(+2i pi k m / N).  Closed form:

        F[0] = (2/N) (2R + 1/2)
        F[k] = (1/N) sin[(2 pi / N)(2R + 1/2) k] / sin[(2 pi / N) k / 2]

    Requires even ``n_points`` and 0 <= 2 * radius < n_points / 2 so the
    window is well formed on the circle.
    """
    if n_points % 2 != 0:
        raise ValueError("n_points must be even")
    if radius < 0 or 2 * radius >= n_points / 2:
        raise ValueError("need 0 <= 2 * radius < n_points / 2")
    k = np.arange(1, n_points)
    half_width = 2 * radius + 0.5
    coeffs = np.empty(n_points)
    coeffs[0] = (2.0 / n_points) * half_width
    coeffs[1:] = (
        np.sin((2 * np.pi / n_points) * half_width * k)
        / np.sin((2 * np.pi / n_points) * 0.5 * k)
        / n_points
    )
    return coeffs


def dtfs_analysis(values) -> np.ndarray:
    """Complex Fourier-series coefficients F[k] = (1/N) sum_n f[n] e^{-2i pi k n / N}."""
    values = np.asarray(values, dtype=np.float64)
    return np.fft.fft(values) / values.shape[0]


def dtfs_synthesis(coeffs) -> np.ndarray:
    """Inverse of :func:`dtfs_analysis`: f[n] = sum_k F[k] e^{+2i pi k n / N}, real part."""
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    return np.real(np.fft.ifft(coeffs) * coeffs.shape[0])


def write_matrix_csv(path, a) -> None:
    """Write a matrix as CSV: header line ``rows,cols``, then one row per line.

    Entries use %.17g so float64 values round-trip exactly.
    """
    a = as_matrix(a)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"{a.shape[0]},{a.shape[1]}\n")
        for row in a:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    """Read a matrix written by :func:`write_matrix_csv`."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows, cols = int(header[0]), int(header[1])
        data = [[float(v) for v in line] for line in reader if line]
    out = np.array(data, dtype=np.float64)
    if out.size == 0:
        out = out.reshape(rows, cols)
    if out.shape != (rows, cols):
        raise ValueError(f"CSV payload {out.shape} does not match header ({rows}, {cols})")
    return out
