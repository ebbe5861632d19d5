"""Log-Euclidean geometry on Hermitian positive semidefinite covariances."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import DataError, DomainError

DEFAULT_EIG_FLOOR = 1e-10

_HERMITIAN_TOL = 1e-8


def hermitian_log(C, eig_floor: float = DEFAULT_EIG_FLOOR) -> np.ndarray:
    """Matrix logarithm of a Hermitian PSD matrix via its eigendecomposition.

    Eigenvalues below ``eig_floor * trace(C) / n`` are raised to that floor
    first, so rank-deficient covariances have a finite logarithm.
    """
    C = np.asarray(C)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {C.shape}")
    scale = max(np.abs(C).max(initial=0.0), np.finfo(float).tiny)
    if np.abs(C - C.conj().T).max(initial=0.0) > _HERMITIAN_TOL * scale:
        raise DomainError("matrix is not Hermitian")
    tr = np.trace(C).real
    if tr <= 0:
        raise DomainError("matrix has non-positive trace")
    lam, u = np.linalg.eigh(0.5 * (C + C.conj().T))
    lam = np.maximum(lam, eig_floor * tr / C.shape[0])
    out = (u * np.log(lam)) @ u.conj().T
    return 0.5 * (out + out.conj().T)


def log_euclidean_distance(Cm, Cn, eig_floor: float = DEFAULT_EIG_FLOOR) -> float:
    return float(np.linalg.norm(hermitian_log(Cm, eig_floor) - hermitian_log(Cn, eig_floor)))


def dissimilarity_matrix(samples, eig_floor: float = DEFAULT_EIG_FLOOR) -> np.ndarray:
    """Pairwise Log-Euclidean distances between sample covariances.

    ``samples`` holds ``CsiSample`` objects or bare matrices. The N matrix
    logs are computed once and flattened to real vectors whose Euclidean
    norm equals the Frobenius norm, then handed to ``pdist``.
    """
    mats = [getattr(s, "covariance", s) for s in samples]
    n = len(mats)
    if n < 2:
        raise DomainError("need at least two samples")
    vecs = np.stack([_hermitian_to_real(hermitian_log(m, eig_floor)) for m in mats])
    return squareform(pdist(vecs))


def _hermitian_to_real(L: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(L.shape[0], 1)
    up = L[iu] * np.sqrt(2.0)
    return np.concatenate([np.diag(L).real, up.real, up.imag])


_MAGIC = b"CLDISS01"


def save_dissimilarity(D: np.ndarray, path, tag: bytes = b"") -> None:
    """Binary: magic, uint64 N, uint32 tag length, tag bytes, strict upper triangle."""
    n = D.shape[0]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QI", n, len(tag)))
        fh.write(tag)
        fh.write(np.ascontiguousarray(D[np.triu_indices(n, 1)], dtype="<f8").tobytes())


def load_dissimilarity(path) -> tuple[np.ndarray, bytes]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise DataError(f"{path}: not a dissimilarity file")
    n, tlen = struct.unpack_from("<QI", raw, 8)
    off = 8 + 12
    tag = raw[off:off + tlen]
    vals = np.frombuffer(raw, dtype="<f8", offset=off + tlen)
    if len(vals) != n * (n - 1) // 2:
        raise DataError(f"{path}: truncated dissimilarity matrix")
    D = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    D[iu] = vals
    D.T[iu] = vals
    return D, tag
