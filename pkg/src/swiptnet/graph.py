"""Complete interference graph and Laplacian positional encodings."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .numerics import CDTYPE

CLUSTER_TOL = 1e-8
SIGN_TOL = 1e-12


@dataclass(frozen=True)
class LaplacianBasis:
    eigenvalues: np.ndarray  # ascending
    U: np.ndarray  # eigenvectors as columns


def adjacency(n: int) -> np.ndarray:
    return np.ones((n, n)) - np.eye(n)


def laplacian(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("graph needs at least one node")
    A = adjacency(n)
    return np.diag(A.sum(1)) - A


def _canonical_cluster(V: np.ndarray) -> np.ndarray:
    # Project the standard basis onto span(V) and Gram-Schmidt it; the result
    # depends only on the subspace, not on which basis the solver returned.
    n, k = V.shape
    P = V @ V.T
    out = []
    for j in range(n):
        x = P[:, j].copy()
        for q in out:
            x -= (q @ x) * q
        for q in out:  # second pass for numerical orthogonality
            x -= (q @ x) * q
        nrm = np.linalg.norm(x)
        if nrm > 1e-6:
            out.append(x / nrm)
        if len(out) == k:
            break
    return np.stack(out, axis=1)


def eigendecompose(L: np.ndarray) -> LaplacianBasis:
    """Symmetric eigendecomposition with a deterministic basis for repeated eigenvalues."""
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {L.shape}")
    if not np.allclose(L, L.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(L).max())):
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(L)
    cols = []
    start = 0
    n = len(vals)
    while start < n:
        stop = start + 1
        while stop < n and abs(vals[stop] - vals[start]) <= CLUSTER_TOL * max(1.0, abs(vals[start])):
            stop += 1
        cols.append(_canonical_cluster(vecs[:, start:stop]))
        start = stop
    U = np.concatenate(cols, axis=1)
    for j in range(n):
        nz = np.flatnonzero(np.abs(U[:, j]) > SIGN_TOL)
        if nz.size and U[nz[0], j] < 0:
            U[:, j] = -U[:, j]
    return LaplacianBasis(vals, U)


@lru_cache(maxsize=64)
def _basis_for(n: int) -> LaplacianBasis:
    return eigendecompose(laplacian(n))


def complete_graph_basis(n: int) -> LaplacianBasis:
    return _basis_for(n)


def positional_encoding(n: int, l_pe: int) -> np.ndarray:
    """(n, l_pe) complex block: row i is column i of U as U + iU, zero-padded."""
    if n > l_pe:
        raise ValueError(f"UE count {n} exceeds configured positional-encoding width {l_pe}")
    U = complete_graph_basis(n).U
    pe = np.zeros((n, l_pe), dtype=np.complex128)
    pe[:, :n] = U.T + 1j * U.T
    return pe


def enhance_features(H, l_pe: int, basis: LaplacianBasis | None = None):
    """Concatenate each node's CSI with its Laplacian encoding.

    ``H`` has shape (..., N, N_T); numpy in gives numpy out, torch gives torch.
    """
    is_torch = isinstance(H, torch.Tensor)
    n = H.shape[-2]
    if basis is None:
        pe = positional_encoding(n, l_pe)
    else:
        if n > l_pe:
            raise ValueError(f"UE count {n} exceeds configured positional-encoding width {l_pe}")
        pe = np.zeros((n, l_pe), dtype=np.complex128)
        pe[:, :n] = basis.U.T + 1j * basis.U.T
    if is_torch:
        pe_t = torch.as_tensor(pe, dtype=CDTYPE).expand(*H.shape[:-1], l_pe)
        return torch.cat([H, pe_t], dim=-1)
    return np.concatenate([H, np.broadcast_to(pe, (*H.shape[:-1], l_pe))], axis=-1)
