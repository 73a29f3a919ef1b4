"""Sparse LDL' factorization of symmetric quasi-definite matrices.

Up-looking factorization driven by the elimination tree, for matrices
given as the upper triangle in CSC form (diagonal entries structurally
present).  No pivoting: quasi-definiteness (positive diagonal block,
negative Schur block, both regularized) guarantees a factorization for
any symmetric permutation.  Compiled with numba; these routines only
run on the accelerated path (the numpy fallback solver factors with
scipy instead).
"""

from __future__ import annotations

import numpy as np

from .accel import njit


@njit
def etree(n, Ap, Ai):
    """Elimination tree and per-column L counts of an upper CSC pattern.

    Returns (parent, Lnz, ok); ok=False when the pattern is not upper
    triangular with structural diagonal.
    """
    parent = np.full(n, -1, dtype=np.int64)
    Lnz = np.zeros(n, dtype=np.int64)
    work = np.full(n, -1, dtype=np.int64)
    ok = True
    for j in range(n):
        work[j] = j
        has_diag = False
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            if i > j:
                ok = False
            if i == j:
                has_diag = True
                continue
            while work[i] != j:
                if parent[i] == -1:
                    parent[i] = j
                Lnz[i] += 1  # L[j, i] becomes structurally nonzero
                work[i] = j
                i = parent[i]
        if not has_diag:
            ok = False
    return parent, Lnz, ok


@njit
def factor(n, Ap, Ai, Ax, parent, Lnz):
    """Numeric LDL' of the upper CSC matrix (Ap, Ai, Ax).

    Returns (Lp, Li, Lx, D, Dinv, ok): L strictly lower triangular in
    CSC with unit diagonal implied; ok=False on a zero pivot.
    """
    Lp = np.empty(n + 1, dtype=np.int64)
    Lp[0] = 0
    for j in range(n):
        Lp[j + 1] = Lp[j] + Lnz[j]
    Li = np.empty(Lp[n], dtype=np.int64)
    Lx = np.empty(Lp[n])
    D = np.zeros(n)
    Dinv = np.zeros(n)
    next_free = Lp[:n].copy()

    y_vals = np.zeros(n)
    y_markers = np.full(n, -1, dtype=np.int64)
    y_idx = np.empty(n, dtype=np.int64)
    elim_buffer = np.empty(n, dtype=np.int64)

    ok = True
    for k in range(n):
        nnz_y = 0
        diag = 0.0
        for p in range(Ap[k], Ap[k + 1]):
            b = Ai[p]
            if b == k:
                diag = Ax[p]
                continue
            y_vals[b] = Ax[p]
            # walk up the elimination tree, buffering unvisited nodes
            node = b
            if y_markers[node] != k:
                y_markers[node] = k
                elim_buffer[0] = node
                n_buf = 1
                node = parent[node]
                while node != -1 and node < k:
                    if y_markers[node] == k:
                        break
                    y_markers[node] = k
                    elim_buffer[n_buf] = node
                    n_buf += 1
                    node = parent[node]
                # push the path onto the stack in reverse
                while n_buf > 0:
                    n_buf -= 1
                    y_idx[nnz_y] = elim_buffer[n_buf]
                    nnz_y += 1
        D[k] = diag
        # process the stack: sparse triangular solve for row k of L
        while nnz_y > 0:
            nnz_y -= 1
            c = y_idx[nnz_y]
            yv = y_vals[c]
            for p in range(Lp[c], next_free[c]):
                y_vals[Li[p]] -= Lx[p] * yv
            lv = yv * Dinv[c]
            Li[next_free[c]] = k
            Lx[next_free[c]] = lv
            D[k] -= yv * lv
            next_free[c] += 1
            y_vals[c] = 0.0
        if D[k] == 0.0:
            ok = False
            Dinv[k] = 0.0
        else:
            Dinv[k] = 1.0 / D[k]
    return Lp, Li, Lx, D, Dinv, ok


@njit
def solve(Lp, Li, Lx, Dinv, b):
    """In-place solve of L D L' x = b (b overwritten with x)."""
    n = b.shape[0]
    for j in range(n):
        xj = b[j]
        if xj != 0.0:
            for p in range(Lp[j], Lp[j + 1]):
                b[Li[p]] -= Lx[p] * xj
    for j in range(n):
        b[j] *= Dinv[j]
    for j in range(n - 1, -1, -1):
        s = b[j]
        for p in range(Lp[j], Lp[j + 1]):
            s -= Lx[p] * b[Li[p]]
        b[j] = s
