"""Sparse inverse Cholesky factors from nearest-neighbor DAGs.

For a DAG over reference locations, row i of the factor G holds
-h_i / sqrt(r_i) at the parent columns and 1 / sqrt(r_i) at column i, where
h_i solves rho(parents) h_i = rho(parents, i) and
r_i = rho(i, i) - h_i . rho(parents, i). Then G G^T is the precision of the
DAG-implied Gaussian process at the reference set, and with m = n - 1 the
factor equals the inverse of the dense lower Cholesky factor of rho(S).

Rows live in DAG-order space; whiten/unwhiten accept and return vectors in
the original location indexing so that per-outcome factors built over the
same set always align row-wise.
"""

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import NumericalError, ValidationError
from .kernels import corr_matrix, matern

JITTER0 = 1e-10
JITTER_TRIES = 3


def _forward_solve(indptr, indices, data, b):
    """Solve G z = b for lower-triangular csr arrays, b of shape (n,) or (n, r)."""
    z = np.empty_like(b, dtype=float)
    for i in range(len(indptr) - 1):
        s, e = indptr[i], indptr[i + 1]
        if e - s == 1:
            z[i] = b[i] / data[e - 1]
        else:
            z[i] = (b[i] - data[s:e - 1] @ z[indices[s:e - 1]]) / data[e - 1]
    return z


def _backward_solve_t(indptr_c, indices_c, data_c, diag, b):
    """Solve G^T x = b using csc arrays of G (columns scanned bottom-up)."""
    n = len(diag)
    x = np.array(b, dtype=float)
    for i in range(n - 1, -1, -1):
        s, e = indptr_c[i], indptr_c[i + 1]
        rows = indices_c[s:e]
        vals = data_c[s:e]
        above = rows > i
        if above.any():
            x[i] = x[i] - vals[above] @ x[rows[above]]
        x[i] = x[i] / diag[i]
    return x


class SparseInvChol:
    """Sparse lower-triangular factor G = L^{-1} of a Vecchia process at S."""

    is_sparse = True

    def __init__(self, dag, gamma, diag, params):
        self.dag = dag
        self.order = dag.order
        self.inv_order = dag.inv_order
        self.gamma = gamma      # csr, DAG-order space
        self.diag = diag        # 1/sqrt(r) per position
        self.params = params
        self._csc = None

    @property
    def n(self):
        return self.gamma.shape[0]

    @property
    def nnz(self):
        return self.gamma.nnz

    @property
    def csc(self):
        if self._csc is None:
            self._csc = self.gamma.tocsc()
        return self._csc

    def whiten(self, y):
        y = np.asarray(y, dtype=float)
        out = np.empty_like(y)
        out[self.order] = self.gamma @ y[self.order]
        return out

    def unwhiten(self, v):
        v = np.asarray(v, dtype=float)
        out = np.empty_like(v)
        out[self.order] = _forward_solve(
            self.gamma.indptr, self.gamma.indices, self.gamma.data, v[self.order]
        )
        return out

    def solve_gamma_t(self, b):
        """x with G^T x = b, both in DAG-order space."""
        c = self.csc
        return _backward_solve_t(c.indptr, c.indices, c.data, self.diag, b)

    def sum_log_diag(self):
        return float(np.log(self.diag).sum())

    def dense_gamma_original(self):
        """G mapped back to original indexing (dense, for validation only)."""
        A = self.gamma.toarray()
        out = np.zeros_like(A)
        out[np.ix_(self.order, self.order)] = A
        return out


class DenseChol:
    """Dense lower Cholesky factor of rho(S) and its inverse (exact path)."""

    is_sparse = False

    def __init__(self, L, Linv, params):
        self.L = L
        self.Linv = Linv
        self.params = params

    @property
    def n(self):
        return self.L.shape[0]

    def whiten(self, y):
        return self.Linv @ np.asarray(y, dtype=float)

    def unwhiten(self, v):
        return self.L @ np.asarray(v, dtype=float)

    def sum_log_diag(self):
        return float(np.log(np.diag(self.Linv)).sum())


def whiten(G, y):
    """v = L^{-1} y for a built factor (sparse or dense)."""
    return G.whiten(y)


def unwhiten(G, v):
    """y with L^{-1} y = v; inverse of :func:`whiten`."""
    return G.unwhiten(v)


def dense_chol_factor(S, p, cap=4000):
    """Dense lower Cholesky factor of rho(S) under ``p`` plus its inverse.

    Guarded to n <= cap; jitter is added to the diagonal and the
    factorization retried on failure.
    """
    if S.n > cap:
        raise ValidationError(f"dense path limited to n <= {cap}, got n = {S.n}")
    R = corr_matrix(S, S, p)
    jitter = 0.0
    for attempt in range(JITTER_TRIES + 1):
        try:
            L = np.linalg.cholesky(R + jitter * np.eye(S.n))
            break
        except np.linalg.LinAlgError:
            jitter = JITTER0 * 10 ** attempt
    else:
        raise NumericalError("dense Cholesky failed after jitter retries")
    Linv = sla.solve_triangular(L, np.eye(S.n), lower=True)
    return DenseChol(L, Linv, p)


class VecchiaWorkspace:
    """Distance structure of a DAG, precomputed once so factors can be rebuilt
    cheaply for many kernel parameter proposals.

    All pairwise distances appearing in any parent block are deduplicated, so
    one rebuild evaluates the correlation function once per unique distance;
    rows with fewer than m parents are zero-padded so the whole factor comes
    out of a single batched solve (the padding is exact: padded blocks are
    block-diagonal with an identity tail and zero right-hand side).
    """

    def __init__(self, dag):
        self.dag = dag
        coords = dag.S.coords[dag.order]
        n = dag.n
        kmax = max((len(par) for par in dag.parents), default=0)
        self.kmax = kmax
        counts = np.array([len(dag.parents[pos]) + 1 for pos in range(n)])
        indptr = np.concatenate([[0], np.cumsum(counts)])
        nnz = int(indptr[-1])
        indices = np.empty(nnz, dtype=np.int32)
        for pos in range(n):
            s = indptr[pos]
            kpar = len(dag.parents[pos])
            indices[s:s + kpar] = dag.parents[pos]
            indices[s + kpar] = pos
        self.indptr = indptr
        self.indices = indices

        if kmax == 0:
            self.d_unique = np.empty(0)
            return

        # padded parent array; pad slots point at the node itself (distance 0
        # never queried: their gather entries route to the appended zero)
        par = np.full((n, kmax), -1, dtype=np.int64)
        kvec = np.empty(n, dtype=np.int64)
        for pos in range(n):
            kp = len(dag.parents[pos])
            kvec[pos] = kp
            par[pos, :kp] = dag.parents[pos]
        self.kvec = kvec
        pmask = np.arange(kmax)[None, :] < kvec[:, None]          # (n, kmax)
        C = coords[np.where(par >= 0, par, 0)]                    # (n, kmax, d)
        Dpp = np.sqrt(((C[:, :, None, :] - C[:, None, :, :]) ** 2).sum(-1))
        Dps = np.sqrt(((C - coords[:, None, :]) ** 2).sum(-1))

        valid_pp = pmask[:, :, None] & pmask[:, None, :]
        valid_pp &= ~np.eye(kmax, dtype=bool)[None, :, :]
        valid_ps = pmask
        cat = np.concatenate([Dpp[valid_pp], Dps[valid_ps]])
        self.d_unique, inv = np.unique(cat, return_inverse=True)
        zero_slot = self.d_unique.size  # appended 0.0 at build time

        self.pp_idx = np.full((n, kmax, kmax), zero_slot, dtype=np.int64)
        self.pp_idx[valid_pp] = inv[:valid_pp.sum()]
        self.ps_idx = np.full((n, kmax), zero_slot, dtype=np.int64)
        self.ps_idx[valid_ps] = inv[valid_pp.sum():]

        # scatter map for -h/sqrt(r): pad slots write to a scratch tail cell
        dest = np.full((n, kmax), nnz, dtype=np.int64)
        cols = np.arange(kmax)[None, :]
        real = cols < kvec[:, None]
        dest[real] = (indptr[:-1, None] + cols)[real]
        self.dest_par = dest
        self.dest_self = indptr[:-1] + kvec

    def build(self, p):
        """Assemble the factor for kernel params ``p``."""
        dag = self.dag
        n = dag.n
        one = 1.0 + p.tau2
        nnz = int(self.indptr[-1])
        data = np.empty(nnz + 1)
        if self.kmax == 0:
            r_all = np.full(n, one)
            data[:nnz] = 1.0 / np.sqrt(r_all)
            gamma = sp.csr_matrix((data[:nnz], self.indices, self.indptr),
                                  shape=(n, n), copy=False)
            return SparseInvChol(dag, gamma, 1.0 / np.sqrt(r_all), p)
        rho = np.concatenate([matern(self.d_unique, p), [0.0]])
        Rpp = rho[self.pp_idx]
        k = self.kmax
        Rpp[:, np.arange(k), np.arange(k)] = one
        rps = rho[self.ps_idx]
        with np.errstate(all="ignore"):
            try:
                h = np.linalg.solve(Rpp, rps[..., None])[..., 0]
            except np.linalg.LinAlgError:
                h = np.full((n, k), np.nan)
        r = one - np.einsum("nk,nk->n", h, rps)
        bad = ~np.isfinite(r) | (r <= 0) | ~np.isfinite(h).all(axis=1)
        if bad.any():
            for b in np.flatnonzero(bad):
                h[b], r[b] = self._retry_row(Rpp[b], rps[b], one, b)
        sq = np.sqrt(r)
        data[self.dest_par.ravel()] = (-h / sq[:, None]).ravel()
        data[self.dest_self] = 1.0 / sq
        gamma = sp.csr_matrix((data[:nnz], self.indices, self.indptr),
                              shape=(n, n), copy=False)
        return SparseInvChol(dag, gamma, 1.0 / np.sqrt(r), p)

    def _retry_row(self, Rpp, rps, one, pos):
        for attempt in range(JITTER_TRIES):
            jit = JITTER0 * 10 ** attempt
            try:
                h = np.linalg.solve(Rpp + jit * np.eye(len(rps)), rps)
            except np.linalg.LinAlgError:
                continue
            r = one - h @ rps
            if np.isfinite(r) and r > 0 and np.all(np.isfinite(h)):
                return h, r
        orig = self.dag.order[pos]
        raise NumericalError(
            f"Vecchia factor row for location {orig} is singular (r <= 0 after jitter)"
        )


def build_sparse_inv_chol(dag, S, p, workspace=None):
    """Build the sparse inverse Cholesky factor of the DAG process at S under ``p``.

    Passing a :class:`VecchiaWorkspace` (built once per DAG) amortizes the
    distance computations across repeated rebuilds.
    """
    if dag.S is not S and dag.S.n != S.n:
        raise ValidationError("dag was not built over this location set")
    ws = workspace if workspace is not None else VecchiaWorkspace(dag)
    return ws.build(p)
