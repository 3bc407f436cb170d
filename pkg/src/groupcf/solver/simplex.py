"""Bounded-variable revised simplex on a sparse LU basis factorization.

The engine works on the equality form ``A x + s = b`` with one implicit slack
column per row (never materialized) and handles variable bounds (including the
0/1 boxes of binary variables) implicitly.  That makes branch-and-bound warm
starts cheap: changing a bound never touches the matrix, and the current basis
stays dual-feasible, so child nodes re-solve with the dual method from
wherever the engine currently is.

The basis inverse is a scipy sparse LU factorization plus a chain of
product-form eta vectors, refreshed periodically.  Pivoting is deterministic:
Dantzig pricing with lowest-index tie-breaking and a Bland fallback once a
degeneracy-stall heuristic fires.
"""

from __future__ import annotations

import math
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import (
    CapacityExceeded,
    MipModel,
    NumericalBreakdown,
    SolverParams,
)

NB_LOWER, NB_UPPER, BASIC, NB_FIXED = 0, 1, 2, 3

OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"


class TimeLimitReached(Exception):
    """Raised inside a solve when the caller's deadline expires."""


class DualStall(Exception):
    """Dual warm solve failed to converge; caller should re-solve from scratch."""


class _Factor:
    """Sparse LU of the current basis plus pending product-form eta updates."""

    def __init__(self, max_etas: int):
        self.max_etas = max_etas
        self.lu = None
        self.etas: list[tuple[int, np.ndarray]] = []

    def refresh(self, bmat: sp.csc_matrix) -> None:
        try:
            self.lu = spla.splu(bmat, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise NumericalBreakdown(f"singular basis: {exc}") from exc
        self.etas = []

    @property
    def full(self) -> bool:
        return len(self.etas) >= self.max_etas

    def ftran(self, v: np.ndarray) -> np.ndarray:
        x = self.lu.solve(v)
        for r, t in self.etas:
            xr = x[r] / t[r]
            x -= xr * t
            x[r] = xr
        return x

    def btran(self, w: np.ndarray) -> np.ndarray:
        u = np.array(w, dtype=float, copy=True)
        for r, t in reversed(self.etas):
            u[r] -= (u @ t - u[r]) / t[r]
        return self.lu.solve(u, trans="T")

    def push(self, r: int, t: np.ndarray) -> None:
        self.etas.append((r, t.copy()))


class SimplexEngine:
    """One engine instance per MipModel; bounds may be re-set between solves.

    Column layout: ``[0, n)`` structural variables, ``[n, n+m)`` slacks (one
    +1 unit column per row), ``[n+m, ...)`` phase-one artificials (signed unit
    columns, pinned to zero after phase one).
    """

    def __init__(self, model: MipModel, params: SolverParams | None = None):
        self.params = params or SolverParams()
        self.model = model
        self._minimize = model.sense == "min"

        n = model.n_vars
        m = model.n_constrs
        self.n_struct = n
        self.m = m
        nnz = sum(len(row.cols) for row in model.constraints)
        if nnz + 24 * m + 8 * n > self.params.max_dense_entries:
            raise CapacityExceeded(
                f"model too large: nnz={nnz}, rows={m} "
                f"(cap {self.params.max_dense_entries:.2e})"
            )

        rows_idx, cols_idx, vals = [], [], []
        b = np.empty(m)
        slack_lo = np.empty(m)
        slack_up = np.empty(m)
        for i, row in enumerate(model.constraints):
            rows_idx.extend([i] * len(row.cols))
            cols_idx.extend(row.cols.tolist())
            vals.extend(row.vals.tolist())
            b[i] = row.rhs
            if row.sense == "<=":
                slack_lo[i], slack_up[i] = 0.0, math.inf
            elif row.sense == ">=":
                slack_lo[i], slack_up[i] = -math.inf, 0.0
            else:
                slack_lo[i], slack_up[i] = 0.0, 0.0
        self.a_csc = sp.csc_matrix(
            (vals, (rows_idx, cols_idx)), shape=(m, n), dtype=float
        )
        self.a_csr = self.a_csc.tocsr()
        self.at_csr = self.a_csc.T.tocsr()  # (n, m) for fast y @ A
        self.b = b

        self.n_total = n + m
        sign = 1.0 if self._minimize else -1.0
        self.c = np.zeros(self.n_total)
        for vid, coeff in model.objective.items():
            self.c[vid] = sign * coeff

        self.base_lo = np.concatenate(
            [np.array([v.lb for v in model.variables]), slack_lo]
        )
        self.base_up = np.concatenate(
            [np.array([v.ub for v in model.variables]), slack_up]
        )
        self.lo = self.base_lo.copy()
        self.up = self.base_up.copy()

        self.n_art = 0
        self._art_row = np.zeros(0, dtype=np.int64)
        self.art_sign = np.zeros(0)
        self.status = np.full(self.n_total, NB_LOWER, dtype=np.int8)
        self.basis = np.empty(m, dtype=np.int64)
        self.xb = np.empty(m)
        self.d = np.empty(self.n_total)
        self._phase_costs: np.ndarray | None = None

        max_etas = max(12, min(self.params.refresh_every, 64, int(2e7 / max(m, 1))))
        self.factor = _Factor(max_etas)
        self.iterations = 0
        self._solve_iterations = 0
        self._solved = False

    # -- bounds ------------------------------------------------------------

    def set_struct_bounds(self, lo: np.ndarray, up: np.ndarray) -> None:
        """Override structural variable bounds (used by branch-and-bound nodes)."""
        self.lo[: self.n_struct] = lo
        self.up[: self.n_struct] = up

    def reset_bounds(self) -> None:
        self.lo[: self.n_total] = self.base_lo
        self.up[: self.n_total] = self.base_up
        # entries past n_total are artificials and stay pinned at zero

    # -- linear algebra helpers ---------------------------------------------

    @property
    def n_cols(self) -> int:
        return self.n_total + self.n_art

    def _nb_value(self, j: int) -> float:
        return self.up[j] if self.status[j] == NB_UPPER else self.lo[j]

    def _nonbasic_vector(self) -> np.ndarray:
        x = np.where(self.status == NB_UPPER, self.up, self.lo)
        x[~np.isfinite(x)] = 0.0
        x[self.basis] = 0.0
        return x

    def _rhs_minus_nonbasic(self) -> np.ndarray:
        x = self._nonbasic_vector()
        r = self.b - self.a_csr @ x[: self.n_struct]
        r -= x[self.n_struct : self.n_total]  # slack columns are +e_i
        if self.n_art:
            r[self._art_row] -= self.art_sign * x[self.n_total :]
        return r

    def _row_combination(self, y: np.ndarray) -> np.ndarray:
        """y @ A over all columns: structural, slack, artificial."""
        out = np.empty(self.n_cols)
        out[: self.n_struct] = self.at_csr @ y
        out[self.n_struct : self.n_total] = y
        if self.n_art:
            out[self.n_total :] = self.art_sign * y[self._art_row]
        return out

    def _column(self, j: int) -> np.ndarray:
        col = np.zeros(self.m)
        if j < self.n_struct:
            sl = slice(self.a_csc.indptr[j], self.a_csc.indptr[j + 1])
            col[self.a_csc.indices[sl]] = self.a_csc.data[sl]
        elif j < self.n_total:
            col[j - self.n_struct] = 1.0
        else:
            i = j - self.n_total
            col[self._art_row[i]] = self.art_sign[i]
        return col

    def _basis_matrix(self) -> sp.csc_matrix:
        struct_pos = np.flatnonzero(self.basis < self.n_struct)
        unit_pos = np.flatnonzero(self.basis >= self.n_struct)
        rows_parts, cols_parts, vals_parts = [], [], []
        if struct_pos.size:
            sub = self.a_csc[:, self.basis[struct_pos]].tocoo()
            rows_parts.append(sub.row)
            cols_parts.append(struct_pos[sub.col])
            vals_parts.append(sub.data)
        if unit_pos.size:
            ids = self.basis[unit_pos]
            slack = ids < self.n_total
            rows_parts.append(ids[slack] - self.n_struct)
            cols_parts.append(unit_pos[slack])
            vals_parts.append(np.ones(int(slack.sum())))
            art = ~slack
            if art.any():
                art_ids = ids[art] - self.n_total
                rows_parts.append(self._art_row[art_ids])
                cols_parts.append(unit_pos[art])
                vals_parts.append(self.art_sign[art_ids])
        return sp.csc_matrix(
            (
                np.concatenate(vals_parts),
                (np.concatenate(rows_parts), np.concatenate(cols_parts)),
            ),
            shape=(self.m, self.m),
        )

    def _recompute_xb(self) -> None:
        self.xb = self.factor.ftran(self._rhs_minus_nonbasic())

    def _costs(self) -> np.ndarray:
        return self._phase_costs if self._phase_costs is not None else self.c

    def _refresh_d(self) -> None:
        y = self.factor.btran(self._costs()[self.basis])
        self.d = self._costs() - self._row_combination(y)
        self.d[self.basis] = 0.0

    def _refactorize(self) -> None:
        self.factor.refresh(self._basis_matrix())
        self._recompute_xb()
        self._refresh_d()

    def _pivot(self, r: int, q: int, t: np.ndarray, br: np.ndarray | None = None) -> None:
        """Replace basis row ``r`` by column ``q``; ``t`` is B^-1 A[:,q]."""
        piv = t[r]
        if abs(piv) < self.params.pivot_tol:
            raise NumericalBreakdown(f"pivot element {piv:.3e} below tolerance")
        if br is None:
            e = np.zeros(self.m)
            e[r] = 1.0
            br = self.factor.btran(e)
        alpha_r = self._row_combination(br) / piv
        dq = self.d[q]
        self.d -= dq * alpha_r
        self.d[q] = 0.0
        self.factor.push(r, t)
        self.basis[r] = q
        if self.factor.full:
            self._refactorize()

    def _tick(self, deadline: float | None) -> None:
        self.iterations += 1
        self._solve_iterations += 1
        if self._solve_iterations > self.params.max_iterations:
            raise NumericalBreakdown(
                f"simplex exceeded {self.params.max_iterations} iterations in one solve"
            )
        if deadline is not None and self.iterations % 64 == 0:
            if time.monotonic() > deadline:
                raise TimeLimitReached()

    # -- primal simplex ----------------------------------------------------

    def solve_primal(self, deadline: float | None = None) -> str:
        """Two-phase solve from scratch under the current bounds."""
        self._solve_iterations = 0
        self._start_basis()
        if self._phase_costs is not None:
            status = self._primal_loop(deadline, phase_one=True)
            if status != OPTIMAL:
                raise NumericalBreakdown(f"phase one ended with status {status}")
            art_rows = np.flatnonzero(self.basis >= self.n_total)
            infeas = float(np.abs(self.xb[art_rows]).sum()) if art_rows.size else 0.0
            if infeas > self.params.tol_feas:
                self._solved = False
                return INFEASIBLE
            self._drive_out_artificials()
            self._phase_costs = None
            self._refresh_d()
        status = self._primal_loop(deadline, phase_one=False)
        self._solved = status == OPTIMAL
        return status

    def _start_basis(self) -> None:
        n, m = self.n_struct, self.m
        lo, up = self.lo[: self.n_total], self.up[: self.n_total]
        status = np.full(self.n_total, NB_LOWER, dtype=np.int8)
        status[lo >= up] = NB_FIXED
        inf_lo = ~np.isfinite(lo)
        status[inf_lo & np.isfinite(up)] = NB_UPPER
        both = np.isfinite(lo) & np.isfinite(up) & (lo < up)
        status[both & (np.abs(up) < np.abs(lo))] = NB_UPPER

        xn = np.where(status == NB_UPPER, up, lo)
        xn[~np.isfinite(xn)] = 0.0
        xn[n:] = 0.0  # slacks start at zero for the residual test
        resid = self.b - self.a_csr @ xn[:n]

        art_rows: list[int] = []
        art_signs: list[float] = []
        basis = np.empty(m, dtype=np.int64)
        tol = 1e-11
        for i in range(m):
            r = resid[i]
            if lo[n + i] - tol <= r <= up[n + i] + tol:
                basis[i] = n + i
            else:
                basis[i] = self.n_total + len(art_rows)
                art_rows.append(i)
                art_signs.append(1.0 if r >= 0 else -1.0)

        self.n_art = len(art_rows)
        self._art_row = np.array(art_rows, dtype=np.int64)
        self.art_sign = np.array(art_signs)
        self.lo = np.concatenate([lo, np.zeros(self.n_art)])
        self.up = np.concatenate([up, np.full(self.n_art, math.inf)])
        self.status = np.concatenate(
            [status, np.full(self.n_art, BASIC, dtype=np.int8)]
        )
        self.basis = basis
        self.status[basis] = BASIC
        self.c = np.concatenate([self.c[: self.n_total], np.zeros(self.n_art)])
        if self.n_art:
            self._phase_costs = np.zeros(self.n_cols)
            self._phase_costs[self.n_total :] = 1.0
        else:
            self._phase_costs = None
        self._refactorize()

    def _drive_out_artificials(self) -> None:
        """Pivot basic artificials (all at ~0) out, or pin redundant rows."""
        for r in range(self.m):
            j = self.basis[r]
            if j < self.n_total:
                continue
            e = np.zeros(self.m)
            e[r] = 1.0
            br = self.factor.btran(e)
            alpha = self._row_combination(br)
            movable = (
                (self.status == NB_LOWER) | (self.status == NB_UPPER)
            ) & (np.abs(alpha) > 1e-7)
            movable[self.n_total :] = False
            cand = np.flatnonzero(movable)
            if cand.size == 0:
                continue  # dependent row; artificial stays basic at zero
            q = int(cand[0])
            t = self.factor.ftran(self._column(q))
            val = self._nb_value(q)
            self.status[j] = NB_FIXED
            self.status[q] = BASIC
            self._pivot(r, q, t, br)
            self.xb[r] = val
        # pin every artificial so it can never re-enter
        self.lo[self.n_total :] = 0.0
        self.up[self.n_total :] = 0.0
        nb_art = (np.arange(self.n_cols) >= self.n_total) & (self.status != BASIC)
        self.status[nb_art] = NB_FIXED

    def _primal_loop(self, deadline: float | None, phase_one: bool) -> str:
        params = self.params
        bland = False
        degen_run = 0
        while True:
            self._tick(deadline)
            d = self.d
            at_lower = self.status == NB_LOWER
            at_upper = self.status == NB_UPPER
            viol = np.where(at_lower, -d, np.where(at_upper, d, -math.inf))
            viol[self.lo >= self.up] = -math.inf  # fixed vars never enter
            if bland:
                elig = np.flatnonzero(viol > params.dj_tol)
                if elig.size == 0:
                    return OPTIMAL
                q = int(elig[0])
            else:
                q = int(viol.argmax())
                if viol[q] <= params.dj_tol:
                    return OPTIMAL
            t = self.factor.ftran(self._column(q))
            if abs(self.d[q]) > params.dj_tol and np.abs(t).max() < params.pivot_tol:
                self._refactorize()
                continue
            delta = 1.0 if self.status[q] == NB_LOWER else -1.0
            rate = delta * t

            theta_flip = self.up[q] - self.lo[q]
            lo_b = self.lo[self.basis]
            up_b = self.up[self.basis]
            lim = np.full(self.m, math.inf)
            pos = rate > params.pivot_tol
            lim[pos] = (self.xb[pos] - lo_b[pos]) / rate[pos]
            neg = rate < -params.pivot_tol
            lim[neg] = (self.xb[neg] - up_b[neg]) / rate[neg]
            lim[~np.isfinite(lim)] = math.inf
            np.maximum(lim, 0.0, out=lim)
            rmin = float(lim.min()) if self.m else math.inf

            if theta_flip <= rmin:
                if not math.isfinite(theta_flip):
                    if phase_one:
                        raise NumericalBreakdown("unbounded ray in phase one")
                    return UNBOUNDED
                self.xb -= theta_flip * rate
                self.status[q] = NB_UPPER if self.status[q] == NB_LOWER else NB_LOWER
                degen_run = 0
                continue

            ties = np.flatnonzero(lim <= rmin + 1e-9)
            r = int(ties[np.argmin(self.basis[ties])])
            theta = float(lim[r])
            leaving = int(self.basis[r])
            leave_upper = rate[r] < 0

            self.xb -= theta * rate
            newval = self._nb_value(q) + delta * theta
            self.status[leaving] = NB_UPPER if leave_upper else NB_LOWER
            if self.lo[leaving] >= self.up[leaving]:
                self.status[leaving] = NB_FIXED
            self.status[q] = BASIC
            self._pivot(r, q, t)
            self.xb[r] = newval

            if theta <= 1e-12:
                degen_run += 1
                if degen_run > params.stall_limit:
                    bland = True
            else:
                degen_run = 0
                bland = False

    # -- dual simplex (warm starts) -----------------------------------------

    def warm_solve(self, deadline: float | None = None) -> str:
        """Re-optimize after bound changes, starting from the current basis.

        The current basis stays dual-feasible for any bounds (reduced costs do
        not depend on them), so only primal feasibility must be restored.
        Raises DualStall if the dual method fails to make progress.
        """
        if not self._solved:
            return self.solve_primal(deadline)
        self._solve_iterations = 0
        self._phase_costs = None
        nb = self.status != BASIC
        fixed_now = nb & (self.lo >= self.up)
        was_fixed = nb & (self.status == NB_FIXED) & ~fixed_now
        self.status[fixed_now] = NB_FIXED
        self.status[was_fixed & (self.d >= 0)] = NB_LOWER
        self.status[was_fixed & (self.d < 0)] = NB_UPPER
        bad_up = (self.status == NB_UPPER) & ~np.isfinite(self.up)
        self.status[bad_up] = NB_LOWER
        try:
            self._recompute_xb()
            status = self._dual_loop(deadline)
        except NumericalBreakdown:
            return self.solve_primal(deadline)
        self._solved = status == OPTIMAL
        return status

    def _dual_loop(self, deadline: float | None) -> str:
        params = self.params
        feas_tol = params.tol_feas
        bland = False
        degen_run = 0
        dual_iters = 0
        refresh_retries = 0
        max_dual = max(200, self.m // 2)
        while True:
            self._tick(deadline)
            dual_iters += 1
            if dual_iters > max_dual:
                raise DualStall()
            lo_b = self.lo[self.basis]
            up_b = self.up[self.basis]
            below = lo_b - self.xb
            above = self.xb - up_b
            viol = np.maximum(below, above)
            viol[~np.isfinite(viol)] = -math.inf
            if bland:
                rows = np.flatnonzero(viol > feas_tol)
                if rows.size == 0:
                    if self.factor.etas:
                        self._refactorize()
                        continue
                    return OPTIMAL
                r = int(rows[np.argmin(self.basis[rows])])
            else:
                r = int(viol.argmax())
                if viol[r] <= feas_tol:
                    if self.factor.etas:
                        self._refactorize()
                        continue
                    return OPTIMAL
            going_up = below[r] >= above[r]  # basic value below its lower bound
            target = lo_b[r] if going_up else up_b[r]

            e = np.zeros(self.m)
            e[r] = 1.0
            br = self.factor.btran(e)
            alpha = self._row_combination(br)
            at_lower = self.status == NB_LOWER
            at_upper = self.status == NB_UPPER
            movable = (at_lower | at_upper) & (self.lo < self.up)
            if going_up:
                elig = movable & (
                    (at_lower & (alpha < -params.pivot_tol))
                    | (at_upper & (alpha > params.pivot_tol))
                )
            else:
                elig = movable & (
                    (at_lower & (alpha > params.pivot_tol))
                    | (at_upper & (alpha < -params.pivot_tol))
                )
            idx = np.flatnonzero(elig)
            if idx.size == 0:
                if self.factor.etas:
                    self._refactorize()
                    continue
                return INFEASIBLE
            sign = np.where(at_lower[idx], 1.0, -1.0)
            slack = np.maximum(sign * self.d[idx], 0.0)
            absalpha = np.abs(alpha[idx])
            ratios = slack / absalpha
            if bland:
                rmin = ratios.min()
                q = int(idx[ratios <= rmin + 1e-12].min())
            else:
                # bound-flipping ratio test: walk candidates in ratio order,
                # flipping finite-range ones whose whole range still leaves the
                # leaving variable infeasible; the crossing candidate enters
                need = float(viol[r])
                caps = (self.up[idx] - self.lo[idx]) * absalpha
                order = np.lexsort((idx, ratios))
                q = -1
                flips: list[int] = []
                for pos in order:
                    cap = caps[pos]
                    if math.isfinite(cap) and cap < need - 1e-12:
                        flips.append(pos)
                        need -= cap
                    else:
                        q = int(idx[pos])
                        break
                if q < 0:
                    if self.factor.etas:
                        self._refactorize()
                        continue
                    return INFEASIBLE  # every candidate flipped and still short

            t = self.factor.ftran(self._column(q))
            drift = abs(t[r] - alpha[q]) > 1e-6 * (1.0 + abs(alpha[q]))
            if abs(t[r]) < 1e-8 or drift:
                # FTRAN and BTRAN disagree on the pivot: refresh and retry
                # (no state was changed yet, so a plain retry is safe)
                refresh_retries += 1
                if refresh_retries > 3:
                    raise DualStall()
                self._refactorize()
                continue
            refresh_retries = 0
            if not bland and flips:
                acc = np.zeros(self.m)
                for pos in flips:
                    j = int(idx[pos])
                    rng = self.up[j] - self.lo[j]
                    dx = rng if self.status[j] == NB_LOWER else -rng
                    if j < self.n_struct:
                        sl = slice(self.a_csc.indptr[j], self.a_csc.indptr[j + 1])
                        acc[self.a_csc.indices[sl]] += dx * self.a_csc.data[sl]
                    elif j < self.n_total:
                        acc[j - self.n_struct] += dx
                    self.status[j] = (
                        NB_UPPER if self.status[j] == NB_LOWER else NB_LOWER
                    )
                self.xb -= self.factor.ftran(acc)
            step = (self.xb[r] - target) / t[r]
            leaving = int(self.basis[r])
            newval = self._nb_value(q) + step
            self.xb -= step * t
            self.status[leaving] = (
                NB_FIXED
                if self.lo[leaving] >= self.up[leaving]
                else (NB_LOWER if going_up else NB_UPPER)
            )
            self.status[q] = BASIC
            self._pivot(r, q, t, br)
            self.xb[r] = newval

            if abs(step) <= 1e-12:
                degen_run += 1
                if degen_run > params.stall_limit:
                    bland = True
            else:
                degen_run = 0

    # -- extraction ----------------------------------------------------------

    def full_x(self) -> np.ndarray:
        x = np.where(self.status == NB_UPPER, self.up, self.lo)
        x[~np.isfinite(x)] = 0.0
        x[self.basis] = self.xb
        return x

    def struct_x(self) -> np.ndarray:
        return self.full_x()[: self.n_struct]

    def objective_value(self) -> float:
        val = float(self.c @ self.full_x()[: len(self.c)])
        return val if self._minimize else -val

    def row_duals(self) -> np.ndarray:
        y = self.factor.btran(self._costs()[self.basis])
        return y if self._minimize else -y

    def struct_reduced_costs(self) -> np.ndarray:
        d = self.d[: self.n_struct]
        return d if self._minimize else -d

    def max_bound_violation(self) -> float:
        lo_b = self.lo[self.basis]
        up_b = self.up[self.basis]
        v = np.maximum(lo_b - self.xb, self.xb - up_b)
        v = v[np.isfinite(v)]
        return float(v.max()) if v.size else 0.0
