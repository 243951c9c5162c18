"""Small dense linear-algebra helpers shared across modules."""

from __future__ import annotations

import numpy as np


def gauge(v: np.ndarray) -> np.ndarray:
    """Scale ``v`` so its largest-magnitude entry is real positive and ``|v|_inf = 1``."""
    v = np.asarray(v, dtype=complex)
    i = int(np.argmax(np.abs(v)))
    return v / v[i]


def tangent_basis(s: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the complement of ``s``, shape (d, d-1).

    Gram-Schmidt on the standard basis with the axis most aligned with ``s``
    dropped.
    """
    s = np.asarray(s, dtype=float)
    s = s / np.linalg.norm(s)
    d = s.size
    drop = int(np.argmax(np.abs(s)))
    basis = [s]
    for m in range(d):
        if m == drop:
            continue
        e = np.zeros(d)
        e[m] = 1.0
        for b in basis:
            e = e - (b @ e) * b
        e = e / np.linalg.norm(e)
        basis.append(e)
    return np.array(basis[1:]).T.reshape(d, d - 1)


def projected_det(m: np.ndarray, s: np.ndarray) -> float:
    """``det(B^T m B)`` for an orthonormal basis ``B`` of the complement of ``s``."""
    b = tangent_basis(s)
    if b.shape[1] == 0:
        return 1.0
    return float(np.linalg.det(b.T @ m @ b))


def wrap_angle(k: np.ndarray) -> np.ndarray:
    """Map each component to ``(-pi, pi]``."""
    k = np.asarray(k, dtype=float)
    w = np.mod(k + np.pi, 2 * np.pi) - np.pi
    w = np.where(np.isclose(w, -np.pi, atol=1e-13), np.pi, w)
    return w


def torus_distance(k: np.ndarray, k0: np.ndarray) -> np.ndarray:
    """Euclidean distance modulo ``2 pi Z^d``; ``k`` may be batched."""
    dk = np.mod(np.asarray(k) - np.asarray(k0) + np.pi, 2 * np.pi) - np.pi
    return np.linalg.norm(dk, axis=-1)


def smallest_singular(mats: np.ndarray) -> np.ndarray:
    """Smallest singular value of each matrix in a batch."""
    n = mats.shape[-1]
    if n == 1:
        return np.abs(mats[..., 0, 0])
    return np.linalg.svd(mats, compute_uv=False)[..., -1]


def simple_eigen_hessian(mat, d1, d2, right, left, mu):
    """Exact Hessian of a simple eigenvalue ``mu`` of a matrix family.

    Second-order perturbation theory with the reduced resolvent, applied
    through a bordered solve so that other (possibly degenerate) eigenvalues
    need no diagonalization.

    Parameters
    ----------
    mat : ndarray, shape (N, N)
    d1 : ndarray, shape (d, N, N)
        First partials of the family.
    d2 : ndarray, shape (d, d, N, N)
        Second partials.
    right, left : ndarray, shape (N,)
        Right and left eigenvectors of ``mu``.

    Returns
    -------
    hess : ndarray, shape (d, d), complex
    err : float
        Relative residual of the bordered solves.
    """
    n = mat.shape[0]
    d = d1.shape[0]
    F = left.conj() @ right
    border = np.zeros((n + 1, n + 1), dtype=complex)
    border[:n, :n] = mu * np.eye(n) - mat
    border[:n, n] = right
    border[n, :n] = left.conj()
    q = np.einsum("mij,j->mi", d1, right)
    q = q - np.outer(q @ left.conj(), right) / F
    rhs = np.vstack([q.T, np.zeros((1, d))])
    sol = np.linalg.solve(border, rhs)
    y = sol[:n].T
    err = float(np.max(np.abs(border @ sol - rhs)) / max(np.max(np.abs(rhs)), 1e-300))
    first = np.einsum("i,mnij,j->mn", left.conj(), d2, right)
    cross = np.einsum("i,mij,nj->mn", left.conj(), d1, y)
    hess = (first + cross + cross.T) / F
    return 0.5 * (hess + hess.T), err
