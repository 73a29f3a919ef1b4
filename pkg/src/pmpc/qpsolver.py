"""Sparse convex QP solver: operator-splitting (ADMM) with an LDL' KKT factorization.

Solves

    minimize    0.5 x'Px + q'x
    subject to  lb <= Ax <= ub      (equality rows where lb == ub)

with fixed penalty ``rho=0.1`` (equality rows boosted 1000x),
over-relaxation ``alpha=1.6``, diagonal regularization ``sigma=1e-6``,
and Ruiz equilibration.  The quasi-definite KKT matrix is factorized
once per solve — LDL' (:mod:`pmpc._qdldl`) under a fill-reducing
permutation on the accelerated path, scipy ``splu`` on the numpy
fallback path — and reused across all iterations.  Termination and the
primal-infeasibility certificate use unscaled residuals.

Sparsity patterns repeat heavily across solves (one pattern per plan
structure), so pattern-dependent work — KKT assembly maps, permutation
choice, symbolic factorization — is cached keyed by pattern digest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu

from . import _qdldl, accel
from .accel import njit

_STATUS_NAMES = {1: "solved", 2: "max_iter", 3: "infeasible"}


@dataclass
class SparseQP:
    """Convex QP data; P is symmetrized on construction, matrices CSC."""

    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        P = sp.csc_matrix(self.P)
        # explicit zeros are kept: callers rely on value-independent
        # sparsity patterns so factorization workspaces can be reused
        self.P = ((P + P.T) * 0.5).tocsc()
        self.P.sort_indices()
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise ValueError("P/q dimension mismatch")
        if self.A is None:
            self.A = sp.csc_matrix((0, n))
        self.A = sp.csc_matrix(self.A)
        self.A.sort_indices()
        if self.A.shape[1] != n:
            raise ValueError("A column count must match len(q)")
        k = self.A.shape[0]
        self.lb = (
            np.full(k, -np.inf) if self.lb is None
            else np.asarray(self.lb, dtype=float).ravel()
        )
        self.ub = (
            np.full(k, np.inf) if self.ub is None
            else np.asarray(self.ub, dtype=float).ravel()
        )
        if self.lb.shape != (k,) or self.ub.shape != (k,):
            raise ValueError("bound length must match A row count")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValueError("bounds must not be NaN")
        if np.any(self.lb > self.ub):
            raise ValueError("bounds must satisfy lb <= ub")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def k(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.P @ x) + self.q @ x)


@dataclass
class QPSolution:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    primal_res: float
    dual_res: float


def kkt_residuals(qp: SparseQP, sol: QPSolution):
    """(primal, dual) infinity-norm KKT residuals of a candidate solution."""
    x = np.asarray(sol.x, dtype=float)
    y = np.asarray(sol.y, dtype=float)
    dual = qp.P @ x + qp.q + qp.A.T @ y
    dual_res = float(np.abs(dual).max()) if dual.size else 0.0
    if qp.k == 0:
        return 0.0, dual_res
    ax = qp.A @ x
    primal = ax - np.clip(ax, qp.lb, qp.ub)
    return float(np.abs(primal).max()), dual_res


def dump_qp(qp: SparseQP, path):
    """Write the QP to a plain-text triplet file for offline inspection."""
    with open(path, "w") as fh:
        fh.write(f"%%qp n={qp.n} k={qp.k}\n")
        coo = qp.P.tocoo()
        fh.write(f"P {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
        fh.write("q\n")
        for v in qp.q:
            fh.write(f"{v:.17g}\n")
        coo = qp.A.tocoo()
        fh.write(f"A {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
        fh.write("bounds\n")
        for lo, hi in zip(qp.lb, qp.ub):
            fh.write(f"{lo:.17g} {hi:.17g}\n")


# ---------------------------------------------------------------------------
# Ruiz equilibration (modifies data copies in place, returns D, E, c)
# ---------------------------------------------------------------------------

@njit
def _ruiz_nb(Pd, Pi, Pp, Ad, Ai, Ap, q, l, u, n, k, iters):
    D = np.ones(n)
    E = np.ones(k)
    c = 1.0
    dn = np.empty(n)
    de = np.empty(k)
    for _ in range(iters):
        for j in range(n):
            m = 0.0
            for p in range(Pp[j], Pp[j + 1]):
                v = abs(Pd[p])
                if v > m:
                    m = v
            for p in range(Ap[j], Ap[j + 1]):
                v = abs(Ad[p])
                if v > m:
                    m = v
            dn[j] = 1.0 / np.sqrt(m) if m > 0.0 else 1.0
        for r in range(k):
            de[r] = 0.0
        for j in range(n):
            for p in range(Ap[j], Ap[j + 1]):
                v = abs(Ad[p])
                if v > de[Ai[p]]:
                    de[Ai[p]] = v
        for r in range(k):
            de[r] = 1.0 / np.sqrt(de[r]) if de[r] > 0.0 else 1.0
        for j in range(n):
            for p in range(Pp[j], Pp[j + 1]):
                Pd[p] *= dn[Pi[p]] * dn[j]
            for p in range(Ap[j], Ap[j + 1]):
                Ad[p] *= de[Ai[p]] * dn[j]
            q[j] *= dn[j]
            D[j] *= dn[j]
        for r in range(k):
            l[r] *= de[r]
            u[r] *= de[r]
            E[r] *= de[r]
        # cost scaling toward unit-mean P column norms
        s = 0.0
        for j in range(n):
            m = 0.0
            for p in range(Pp[j], Pp[j + 1]):
                v = abs(Pd[p])
                if v > m:
                    m = v
            s += m
        mean_pn = s / n if n > 0 else 0.0
        qn = 0.0
        for j in range(n):
            v = abs(q[j])
            if v > qn:
                qn = v
        den = mean_pn if mean_pn > qn else qn
        g = 1.0 / den if den > 0.0 else 1.0
        for p in range(Pd.shape[0]):
            Pd[p] *= g
        for j in range(n):
            q[j] *= g
        c *= g
    return D, E, c


def _seg_max(absdata, indptr):
    """Per-segment max of |data| for a CSC-like indptr (0 for empty)."""
    counts = np.diff(indptr)
    if absdata.size == 0:
        return np.zeros(len(counts))
    starts = np.minimum(indptr[:-1], absdata.size - 1)
    out = np.maximum.reduceat(absdata, starts)
    return np.where(counts > 0, out, 0.0)


def _ruiz_np(Pd, Pi, Pp, Pcol, Ad, Ai, Ap, Acol, csr_src, Acsr_p,
             q, l, u, n, k, iters):
    D = np.ones(n)
    E = np.ones(k)
    c = 1.0
    for _ in range(iters):
        pn = _seg_max(np.abs(Pd), Pp)
        an_col = _seg_max(np.abs(Ad), Ap)
        m = np.maximum(pn, an_col)
        dn = np.where(m > 0, 1.0 / np.sqrt(m), 1.0)
        row_m = _seg_max(np.abs(Ad[csr_src]), Acsr_p)
        de = np.where(row_m > 0, 1.0 / np.sqrt(row_m), 1.0)
        Pd *= dn[Pi] * dn[Pcol]
        Ad *= de[Ai] * dn[Acol]
        q *= dn
        l *= de
        u *= de
        D *= dn
        E *= de
        pn2 = _seg_max(np.abs(Pd), Pp)
        mean_pn = pn2.mean() if n > 0 else 0.0
        qn = np.abs(q).max() if n > 0 else 0.0
        den = max(mean_pn, qn)
        g = 1.0 / den if den > 0 else 1.0
        Pd *= g
        q *= g
        c *= g
    return D, E, c


# ---------------------------------------------------------------------------
# ADMM iteration loops
# ---------------------------------------------------------------------------

@njit
def _admm_nb(Pp, Pi, Px, q, Ap, Ai, Ax, l, u, rho, sigma, alpha,
             Lp, Li, Lx, Dinv, perm, Dsc, Esc, cost_sc,
             eps_abs, eps_rel, eps_pinf, max_iter, check_every,
             x, y, z):
    n = q.shape[0]
    k = l.shape[0]
    ndim = n + k
    rhs = np.empty(ndim)
    tmp = np.empty(ndim)
    px = np.empty(n)
    aty = np.empty(n)
    ax = np.empty(k)
    y_prev = np.empty(k)
    status = 2
    iters = 0
    rp = np.inf
    rd = np.inf
    inv_c = 1.0 / cost_sc
    for it in range(1, max_iter + 1):
        iters = it
        check = (it % check_every == 0) or (it == max_iter)
        if check:
            for r in range(k):
                y_prev[r] = y[r]
        for i in range(n):
            rhs[i] = sigma * x[i] - q[i]
        for r in range(k):
            rhs[n + r] = z[r] - y[r] / rho[r]
        for i in range(ndim):
            tmp[i] = rhs[perm[i]]
        _qdldl.solve(Lp, Li, Lx, Dinv, tmp)
        for i in range(ndim):
            rhs[perm[i]] = tmp[i]
        for i in range(n):
            x[i] = alpha * rhs[i] + (1.0 - alpha) * x[i]
        for r in range(k):
            nu = rhs[n + r]
            zt = z[r] + (nu - y[r]) / rho[r]
            zr = alpha * zt + (1.0 - alpha) * z[r]
            znew = zr + y[r] / rho[r]
            if znew < l[r]:
                znew = l[r]
            elif znew > u[r]:
                znew = u[r]
            y[r] = y[r] + rho[r] * (zr - znew)
            z[r] = znew
        if not check:
            continue
        # unscaled residuals
        for i in range(n):
            px[i] = 0.0
            aty[i] = 0.0
        for r in range(k):
            ax[r] = 0.0
        for j in range(n):
            xj = x[j]
            for p in range(Pp[j], Pp[j + 1]):
                px[Pi[p]] += Px[p] * xj
            s = 0.0
            for p in range(Ap[j], Ap[j + 1]):
                ax[Ai[p]] += Ax[p] * xj
                s += Ax[p] * y[Ai[p]]
            aty[j] = s
        rp = 0.0
        ax_n = 0.0
        z_n = 0.0
        for r in range(k):
            e = Esc[r]
            v = abs(ax[r] - z[r]) / e
            if v > rp:
                rp = v
            v = abs(ax[r]) / e
            if v > ax_n:
                ax_n = v
            v = abs(z[r]) / e
            if v > z_n:
                z_n = v
        rd = 0.0
        px_n = 0.0
        q_n = 0.0
        aty_n = 0.0
        for i in range(n):
            d = Dsc[i]
            v = abs(px[i] + q[i] + aty[i]) / d * inv_c
            if v > rd:
                rd = v
            v = abs(px[i]) / d * inv_c
            if v > px_n:
                px_n = v
            v = abs(q[i]) / d * inv_c
            if v > q_n:
                q_n = v
            v = abs(aty[i]) / d * inv_c
            if v > aty_n:
                aty_n = v
        eps_pri = eps_abs + eps_rel * (ax_n if ax_n > z_n else z_n)
        m1 = px_n if px_n > q_n else q_n
        m2 = m1 if m1 > aty_n else aty_n
        eps_dua = eps_abs + eps_rel * m2
        if rp <= eps_pri and rd <= eps_dua:
            status = 1
            break
        # primal infeasibility certificate on the last dual step
        dy_norm = 0.0
        for r in range(k):
            v = abs(Esc[r] * (y[r] - y_prev[r])) * inv_c
            if v > dy_norm:
                dy_norm = v
        if dy_norm > 1e-14:
            lim = eps_pinf * dy_norm
            atd_max = 0.0
            for j in range(n):
                s = 0.0
                for p in range(Ap[j], Ap[j + 1]):
                    r = Ai[p]
                    s += Ax[p] * (y[r] - y_prev[r])
                v = abs(s) / Dsc[j] * inv_c
                if v > atd_max:
                    atd_max = v
            if atd_max <= lim:
                support = 0.0
                valid = True
                for r in range(k):
                    dyr = Esc[r] * (y[r] - y_prev[r]) * inv_c
                    if dyr > 0.0:
                        ur = u[r] / Esc[r]
                        if ur == np.inf:
                            valid = False
                            break
                        support += ur * dyr
                    elif dyr < 0.0:
                        lr = l[r] / Esc[r]
                        if lr == -np.inf:
                            valid = False
                            break
                        support += lr * dyr
                if valid and support <= -lim:
                    status = 3
                    break
    return status, iters, rp, rd


def _admm_np(Psc, q, Asc, l, u, rho, sigma, alpha, lu, perm, Dsc, Esc,
             cost_sc, eps_abs, eps_rel, eps_pinf, max_iter, check_every,
             x, y, z):
    n = q.shape[0]
    k = l.shape[0]
    status = 2
    iters = 0
    rp = np.inf
    rd = np.inf
    inv_c = 1.0 / cost_sc
    inv_E = 1.0 / Esc
    inv_D = 1.0 / Dsc
    for it in range(1, max_iter + 1):
        iters = it
        check = (it % check_every == 0) or (it == max_iter)
        y_prev = y.copy() if check else None
        rhs = np.concatenate((sigma * x - q, z - y / rho))
        sol = np.empty(n + k)
        sol[perm] = lu.solve(rhs[perm])
        x[:] = alpha * sol[:n] + (1.0 - alpha) * x
        zt = z + (sol[n:] - y) / rho
        zr = alpha * zt + (1.0 - alpha) * z
        znew = np.clip(zr + y / rho, l, u)
        y += rho * (zr - znew)
        z[:] = znew
        if not check:
            continue
        px = Psc @ x
        ax = Asc @ x
        aty = Asc.T @ y
        if k:
            rp = float(np.abs((ax - z) * inv_E).max())
            ax_n = float(np.abs(ax * inv_E).max())
            z_n = float(np.abs(z * inv_E).max())
        else:
            rp = ax_n = z_n = 0.0
        rd = float((np.abs(px + q + aty) * inv_D).max() * inv_c)
        eps_pri = eps_abs + eps_rel * max(ax_n, z_n)
        eps_dua = eps_abs + eps_rel * inv_c * max(
            float(np.abs(px * inv_D).max()),
            float(np.abs(q * inv_D).max()),
            float(np.abs(aty * inv_D).max()) if k else 0.0,
        )
        if rp <= eps_pri and rd <= eps_dua:
            status = 1
            break
        if k:
            dy = (y - y_prev) * Esc * inv_c
            dy_norm = float(np.abs(dy).max())
            if dy_norm > 1e-14:
                lim = eps_pinf * dy_norm
                atd = np.abs(Asc.T @ (y - y_prev) * inv_D).max() * inv_c
                if atd <= lim:
                    u_un = u * inv_E
                    l_un = l * inv_E
                    pos = dy > 0
                    neg = dy < 0
                    if not (np.any(pos & np.isinf(u_un))
                            or np.any(neg & np.isinf(l_un))):
                        support = float(u_un[pos] @ dy[pos] + l_un[neg] @ dy[neg])
                        if support <= -lim:
                            status = 3
                            break
    return status, iters, rp, rd


# ---------------------------------------------------------------------------
# Pattern workspace (assembly maps, ordering, symbolic factorization)
# ---------------------------------------------------------------------------

class _Workspace:
    def __init__(self, qp: SparseQP):
        P, A = qp.P, qp.A
        n, k = qp.n, qp.k
        self.n, self.k = n, k
        ndim = n + k
        self.Pp = P.indptr.astype(np.int64)
        self.Pi = P.indices.astype(np.int64)
        self.Pcol = np.repeat(np.arange(n, dtype=np.int64), np.diff(P.indptr))
        self.Ap = A.indptr.astype(np.int64)
        self.Ai = A.indices.astype(np.int64)
        self.Acol = np.repeat(np.arange(n, dtype=np.int64), np.diff(A.indptr))
        # CSR mirror of A for row norms in the numpy Ruiz path
        marker = A.copy()
        marker.data = np.arange(A.nnz, dtype=np.int64).astype(float)
        csr = marker.tocsr()
        self.csr_src = csr.data.astype(np.int64)
        self.Acsr_p = csr.indptr.astype(np.int64)

        # --- upper-triangle KKT entry list (unpermuted) ---
        upper = self.Pi <= self.Pcol
        p_rows = self.Pi[upper]
        p_cols = self.Pcol[upper]
        self.srcP = np.nonzero(upper)[0].astype(np.int64)
        diag_mask = p_rows == p_cols
        has_diag = np.zeros(n, dtype=bool)
        has_diag[p_cols[diag_mask]] = True
        missing = np.nonzero(~has_diag)[0].astype(np.int64)
        rows = [p_rows, missing, self.Acol, np.arange(n, n + k, dtype=np.int64)]
        cols = [p_cols, missing, n + self.Ai, np.arange(n, n + k, dtype=np.int64)]
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        nP = len(p_rows)
        nMiss = len(missing)
        nA = A.nnz
        # entry index ranges: [P | missing-diag | A | rho-diag]
        self.entP = np.arange(0, nP, dtype=np.int64)
        sigma_ids = np.concatenate(
            [self.entP[diag_mask], np.arange(nP, nP + nMiss, dtype=np.int64)]
        )
        # order sigma targets by variable index for reproducibility
        sigma_cols = np.concatenate([p_cols[diag_mask], missing])
        self.sigma_ids = sigma_ids[np.argsort(sigma_cols, kind="stable")]
        self.entA = np.arange(nP + nMiss, nP + nMiss + nA, dtype=np.int64)
        self.entRho = np.arange(nP + nMiss + nA, nP + nMiss + nA + k,
                                dtype=np.int64)
        self._rows = rows
        self._cols = cols
        self.ndim = ndim
        self.perm = np.arange(ndim, dtype=np.int64)
        self._mapped = False
        self._symbolic = False

    def _apply_perm(self, perm):
        """Finalize CSC layout of the permuted upper KKT and entry maps."""
        iperm = np.empty(self.ndim, dtype=np.int64)
        iperm[perm] = np.arange(self.ndim, dtype=np.int64)
        ri = iperm[self._rows]
        ci = iperm[self._cols]
        swap = ri > ci
        ri2 = np.where(swap, ci, ri)
        ci2 = np.where(swap, ri, ci)
        order = np.lexsort((ri2, ci2))
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order), dtype=np.int64)
        self.perm = perm.astype(np.int64)
        self.K_indices = ri2[order]
        counts = np.bincount(ci2, minlength=self.ndim)
        self.K_indptr = np.concatenate(
            ([0], np.cumsum(counts))
        ).astype(np.int64)
        self.posP = rank[self.entP]
        self.posSigma = rank[self.sigma_ids]
        self.posA = rank[self.entA]
        self.posRho = rank[self.entRho]
        self.nnzK = len(order)
        self._mapped = True

    @staticmethod
    def _pattern_of(perm, rows, cols, ndim):
        iperm = np.empty(ndim, dtype=np.int64)
        iperm[perm] = np.arange(ndim, dtype=np.int64)
        ri = iperm[rows]
        ci = iperm[cols]
        swap = ri > ci
        ri2 = np.where(swap, ci, ri)
        ci2 = np.where(swap, ri, ci)
        order = np.lexsort((ri2, ci2))
        counts = np.bincount(ci2, minlength=ndim)
        indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        return indptr, ri2[order].astype(np.int64)

    def choose_ordering(self, Pd, Ad, rho_vec, sigma):
        """Pick the fill-minimizing permutation among cheap candidates."""
        self._apply_perm(np.arange(self.ndim, dtype=np.int64))
        candidates = [np.arange(self.ndim, dtype=np.int64)]
        Kfull = self._full_kkt(self.kkt_data(Pd, Ad, rho_vec, sigma))
        try:
            rcm = reverse_cuthill_mckee(Kfull.tocsr(), symmetric_mode=True)
            candidates.append(rcm.astype(np.int64))
        except Exception:
            pass
        try:
            lu = splu(Kfull.tocsc())
            candidates.append(lu.perm_c.astype(np.int64))
        except Exception:
            pass
        best, best_flops = None, None
        for perm in candidates:
            indptr, indices = self._pattern_of(
                perm, self._rows, self._cols, self.ndim
            )
            parent, Lnz, ok = _qdldl.etree(self.ndim, indptr, indices)
            if not ok:
                continue
            flops = float(((Lnz + 1).astype(float) ** 2).sum())
            if best_flops is None or flops < best_flops:
                best, best_flops = perm, flops
        self._apply_perm(best)
        parent, Lnz, ok = _qdldl.etree(self.ndim, self.K_indptr, self.K_indices)
        if not ok:
            raise RuntimeError("KKT pattern is not factorizable")
        self.parent = parent
        self.Lnz = Lnz
        self._symbolic = True

    def ensure_layout(self, Pd, Ad, rho_vec, sigma, want_symbolic: bool):
        if want_symbolic and not self._symbolic:
            self.choose_ordering(Pd, Ad, rho_vec, sigma)
        elif not self._mapped:
            self._apply_perm(np.arange(self.ndim, dtype=np.int64))

    def kkt_data(self, Pd, Ad, rho_vec, sigma):
        kdata = np.zeros(self.nnzK)
        kdata[self.posP] = Pd[self.srcP]
        kdata[self.posSigma] += sigma
        kdata[self.posA] = Ad
        kdata[self.posRho] = -1.0 / rho_vec
        return kdata

    def _full_kkt(self, kdata):
        U = sp.csc_matrix(
            (kdata, self.K_indices, self.K_indptr),
            shape=(self.ndim, self.ndim),
        )
        return (U + U.T - sp.diags(U.diagonal())).tocsc()


_WORKSPACES: dict[bytes, _Workspace] = {}


def _workspace(qp: SparseQP) -> _Workspace:
    h = hashlib.blake2b(digest_size=16)
    for arr in (qp.P.indptr, qp.P.indices, qp.A.indptr, qp.A.indices):
        h.update(arr.tobytes())
    h.update(np.int64(qp.n).tobytes())
    h.update(np.int64(qp.k).tobytes())
    key = h.digest()
    ws = _WORKSPACES.get(key)
    if ws is None:
        ws = _Workspace(qp)
        _WORKSPACES[key] = ws
    return ws


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def solve_qp(qp: SparseQP, eps_abs: float = 1e-6, eps_rel: float = 1e-6,
             max_iter: int = 20000, x0=None, y0=None, *, rho: float = 0.1,
             sigma: float = 1e-6, alpha: float = 1.6, check_every: int = 25,
             eps_pinf: float = 1e-8, ruiz_iters: int = 10) -> QPSolution:
    """Solve the QP; optional (x0, y0) warm-start the iteration."""
    n, k = qp.n, qp.k
    ws = _workspace(qp)
    use_nb = accel.numba_active()

    Pd = qp.P.data.copy()
    Ad = qp.A.data.copy()
    q = qp.q.copy()
    l = qp.lb.copy()
    u = qp.ub.copy()
    eq = qp.lb == qp.ub
    if use_nb:
        Dsc, Esc, cost_sc = _ruiz_nb(
            Pd, ws.Pi, ws.Pp, Ad, ws.Ai, ws.Ap, q, l, u, n, k, ruiz_iters
        )
    else:
        Dsc, Esc, cost_sc = _ruiz_np(
            Pd, ws.Pi, ws.Pp, ws.Pcol, Ad, ws.Ai, ws.Ap, ws.Acol,
            ws.csr_src, ws.Acsr_p, q, l, u, n, k, ruiz_iters,
        )
    rho_vec = np.where(eq, 1e3 * rho, rho)

    ws.ensure_layout(Pd, Ad, rho_vec, sigma, want_symbolic=use_nb)
    kdata = ws.kkt_data(Pd, Ad, rho_vec, sigma)

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / Dsc
    y = (np.zeros(k) if y0 is None
         else np.asarray(y0, dtype=float) * cost_sc / Esc)
    if x0 is None:
        z = np.zeros(k)
    else:
        Asc = sp.csc_matrix((Ad, qp.A.indices, qp.A.indptr), shape=(k, n))
        z = Asc @ x

    if use_nb:
        Lp, Li, Lx, D, Dinv, ok = _qdldl.factor(
            ws.ndim, ws.K_indptr, ws.K_indices, kdata, ws.parent, ws.Lnz
        )
        if not ok:
            raise RuntimeError("KKT factorization hit a zero pivot")
        status, iters, rp, rd = _admm_nb(
            ws.Pp, ws.Pi, Pd, q, ws.Ap, ws.Ai, Ad, l, u, rho_vec,
            sigma, alpha, Lp, Li, Lx, Dinv, ws.perm, Dsc, Esc, cost_sc,
            eps_abs, eps_rel, eps_pinf, max_iter, check_every, x, y, z,
        )
    else:
        lu = splu(ws._full_kkt(kdata))
        Psc = sp.csc_matrix((Pd, qp.P.indices, qp.P.indptr), shape=(n, n))
        Asc = sp.csc_matrix((Ad, qp.A.indices, qp.A.indptr), shape=(k, n))
        status, iters, rp, rd = _admm_np(
            Psc, q, Asc, l, u, rho_vec, sigma, alpha, lu, ws.perm,
            Dsc, Esc, cost_sc, eps_abs, eps_rel, eps_pinf, max_iter,
            check_every, x, y, z,
        )
    return QPSolution(
        x=x * Dsc,
        y=y * Esc / cost_sc,
        status=_STATUS_NAMES[status],
        iterations=int(iters),
        primal_res=float(rp),
        dual_res=float(rd),
    )
