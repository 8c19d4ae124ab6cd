import numpy as np


def row_norms(x: np.array) -> np.array:
    """
    Euclidean norm of every row of a 2-D array.
    """
    return np.linalg.norm(np.asarray(x, dtype=np.float64), axis=1)


def zero_rows(x: np.array, tol: float = 0.0) -> np.array:
    """Indices of rows whose norm is <= tol."""
    return np.flatnonzero(row_norms(x) <= tol)


def cosine_matrix(queries: np.array, gallery: np.array) -> np.array:
    """
    Pairwise cosine similarities, entry (i, j) = cos(queries_i, gallery_j).
    Computed in float64 and clipped to [-1, 1].

    Parameters
    ----------
    queries: (Bq, D) array
    gallery: (Bg, D) array

    Returns
    -------
    sims: (Bq, Bg) array
    """
    q = np.asarray(queries, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    q = q / row_norms(q)[:, None]
    g = g / row_norms(g)[:, None]
    return np.clip(q @ g.T, -1.0, 1.0)
