import os

import numpy as np
import pytest

from rowsplit import CscMatrix

DATA_DIR = os.path.join(os.path.dirname(__file__), "..", "data")


def data_path(name):
    return os.path.join(DATA_DIR, name)


def require_matrix(name):
    path = data_path(name)
    if not os.path.exists(path):
        pytest.skip(f"{name} not present; run scripts/fetch_matrices.py to download it")
    return path


def laauchli(eps):
    """Stacked identity-perturbation test matrix: [1 1; eps 0; 0 eps]."""
    return np.array([[1.0, 1.0], [eps, 0.0], [0.0, eps]])


def random_sparse(rng, m, n, density=0.5, strengthen=0.0):
    """Random sparse test matrix with no zero columns.

    strengthen > 0 adds that multiple of the identity pattern on the top
    block, which keeps the leading square submatrix comfortably
    invertible.
    """
    a = rng.standard_normal((m, n)) * (rng.random((m, n)) < density)
    if strengthen:
        a[np.arange(n), np.arange(n)] += strengthen
    for j in range(n):
        if not a[:, j].any():
            a[rng.integers(0, m), j] = rng.standard_normal() + 0.5
    return a


def well_conditioned_split(rng, n, s):
    """Stacked (n + s) x n matrix whose leading block is near-identity."""
    top = np.eye(n) + 0.3 * rng.standard_normal((n, n)) / np.sqrt(n)
    bottom = 0.5 * rng.standard_normal((s, n)) / np.sqrt(n)
    return np.vstack([top, bottom])


def csc(a):
    return CscMatrix.from_dense(np.asarray(a, dtype=float))


def rel_err(got, want):
    want = np.asarray(want, dtype=float)
    scale = np.linalg.norm(want)
    return np.linalg.norm(np.asarray(got) - want) / (scale if scale else 1.0)
