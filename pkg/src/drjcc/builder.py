"""Incremental assembly of :class:`~drjcc.qp.StandardQP` instances."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .qp import StandardQP


class Expr:
    """A batch of ``k`` affine expressions ``row_r = sum coef * x[idx] + const_r``.

    Terms are appended with :meth:`add`; ``rows`` selects which expression
    each (index, coefficient) pair contributes to, defaulting to one term per
    row.
    """

    def __init__(self, k: int):
        self.k = k
        self._rows, self._cols, self._vals = [], [], []
        self.const = np.zeros(k)

    def add(self, idx, coef=1.0, rows=None) -> "Expr":
        idx = np.asarray(idx, dtype=np.int64).ravel()
        rows = np.arange(self.k) if rows is None else np.asarray(rows, dtype=np.int64).ravel()
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape).ravel()
        if rows.shape != idx.shape:
            rows = np.broadcast_to(rows, idx.shape)
        keep = (idx >= 0) & (coef != 0)
        self._rows.append(rows[keep])
        self._cols.append(idx[keep])
        self._vals.append(coef[keep])
        return self

    def add_const(self, c, rows=None) -> "Expr":
        if rows is None:
            self.const = self.const + c
        else:
            np.add.at(self.const, np.asarray(rows).ravel(), np.broadcast_to(c, np.shape(rows)).ravel())
        return self

    def matrix(self, n: int) -> sp.csr_matrix:
        if not self._rows:
            return sp.csr_matrix((self.k, n))
        r = np.concatenate(self._rows)
        c = np.concatenate(self._cols)
        v = np.concatenate(self._vals)
        return sp.csr_matrix((v, (r, c)), shape=(self.k, n))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.matrix(len(x)) @ x + self.const


class QpBuilder:
    def __init__(self):
        self.n = 0
        self.names: dict = {}
        self._quad_idx, self._quad_val = [], []
        self._lin_idx, self._lin_val = [], []
        self.r = 0.0
        self._eq: list = []
        self._le: list = []

    def var(self, name: str, shape, lb=None, ub=None) -> np.ndarray:
        size = int(np.prod(shape))
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        if name in self.names:
            raise KeyError(f"duplicate variable name {name!r}")
        self.names[name] = idx
        if lb is not None or ub is not None:
            self.bounds(idx, lb, ub)
        return idx

    def bounds(self, idx, lb=None, ub=None) -> None:
        idx = np.asarray(idx).ravel()
        k = len(idx)
        lo = None if lb is None else np.broadcast_to(np.asarray(lb, dtype=float), (k,)).ravel()
        hi = None if ub is None else np.broadcast_to(np.asarray(ub, dtype=float), (k,)).ravel()
        if lo is not None and hi is not None:
            if np.any(lo > hi):
                raise ValueError("lower bound exceeds upper bound")
            fixed = lo == hi
            if np.any(fixed):
                self.eq(Expr(int(fixed.sum())).add(idx[fixed]).add_const(-lo[fixed]))
            idx, lo, hi = idx[~fixed], lo[~fixed], hi[~fixed]
        if hi is not None:
            finite = np.isfinite(hi)
            if np.any(finite):
                self.le(Expr(int(finite.sum())).add(idx[finite]).add_const(-hi[finite]))
        if lo is not None:
            finite = np.isfinite(lo)
            if np.any(finite):
                self.le(Expr(int(finite.sum())).add(idx[finite], -1.0).add_const(lo[finite]))

    def square(self, idx, weight) -> None:
        """Add ``weight * x_i^2`` for each index."""
        idx = np.asarray(idx).ravel()
        self._quad_idx.append(idx)
        self._quad_val.append(np.broadcast_to(2.0 * np.asarray(weight, dtype=float), idx.shape).ravel())

    def linear(self, idx, coef) -> None:
        idx = np.asarray(idx).ravel()
        self._lin_idx.append(idx)
        self._lin_val.append(np.broadcast_to(np.asarray(coef, dtype=float), idx.shape).ravel())

    def linear_expr(self, expr: Expr) -> None:
        """Add the sum of all rows of ``expr`` to the objective."""
        M = expr.matrix(self.n).tocoo()
        self.linear(M.col, M.data)
        self.r += float(expr.const.sum())

    def eq(self, expr: Expr) -> None:
        self._eq.append(expr)

    def le(self, expr: Expr) -> None:
        self._le.append(expr)

    def _stack(self, exprs):
        if not exprs:
            return sp.csr_matrix((0, self.n)), np.zeros(0)
        A = sp.vstack([e.matrix(self.n) for e in exprs], format="csr")
        b = -np.concatenate([e.const for e in exprs])
        return A, b

    def build(self) -> StandardQP:
        n = self.n
        if self._quad_idx:
            qi = np.concatenate(self._quad_idx)
            P = sp.csc_matrix((np.concatenate(self._quad_val), (qi, qi)), shape=(n, n))
        else:
            P = sp.csc_matrix((n, n))
        q = np.zeros(n)
        if self._lin_idx:
            np.add.at(q, np.concatenate(self._lin_idx), np.concatenate(self._lin_val))
        A_eq, b_eq = self._stack(self._eq)
        A_in, b_in = self._stack(self._le)
        return StandardQP(P, q, self.r, A_eq, b_eq, A_in, b_in, dict(self.names))
