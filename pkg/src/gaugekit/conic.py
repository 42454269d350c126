"""Solver-agnostic conic programs and an embedded first-order solver.

Programs are stored in the standard form

    minimize    c'x
    subject to  A x + s = b,   s in K,

where K is a product of zero, nonnegative, second-order, and small PSD cones
(in row order). The solver runs a homogeneous self-dual embedding with
over-relaxed alternating projections; the single linear system per iteration
is solved through one cached factorization. PSD blocks are vectorized with
sqrt(2)-scaled off-diagonals so every cone is self-dual under the Euclidean
inner product.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, ParameterError

ZERO = "zero"
NONNEG = "nonneg"
SOC = "soc"
PSD = "psd"

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class Cone:
    """One cone block. For psd, dim is the matrix side (rows = side(side+1)/2)."""

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in (ZERO, NONNEG, SOC, PSD):
            raise ParameterError(f"unknown cone kind {self.kind!r}")
        if self.dim < 1:
            raise ParameterError(f"cone dimension must be positive, got {self.dim}")
        if self.kind == PSD and self.dim > 10:
            raise ParameterError(f"psd side limited to 10, got {self.dim}")

    @property
    def rows(self) -> int:
        if self.kind == PSD:
            return self.dim * (self.dim + 1) // 2
        return self.dim


@dataclass(frozen=True)
class ConicProgram:
    c: np.ndarray
    a_rows: np.ndarray
    a_cols: np.ndarray
    a_vals: np.ndarray
    b: np.ndarray
    cones: tuple
    names: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        rows = np.asarray(self.a_rows, dtype=int).ravel()
        cols = np.asarray(self.a_cols, dtype=int).ravel()
        vals = np.asarray(self.a_vals, dtype=float).ravel()
        if not (len(rows) == len(cols) == len(vals)):
            raise DimensionError("triplet arrays must have equal length")
        m = sum(cone.rows for cone in self.cones)
        if m != len(b):
            raise DimensionError(f"cones cover {m} rows but b has {len(b)}")
        if len(rows) and (rows.min() < 0 or rows.max() >= len(b)):
            raise DimensionError("triplet row index out of range")
        if len(cols) and (cols.min() < 0 or cols.max() >= len(c)):
            raise DimensionError("triplet col index out of range")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b)) and np.all(np.isfinite(vals))):
            raise ParameterError("program data must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a_rows", rows)
        object.__setattr__(self, "a_cols", cols)
        object.__setattr__(self, "a_vals", vals)
        object.__setattr__(self, "cones", tuple(self.cones))

    @property
    def num_vars(self) -> int:
        return len(self.c)

    @property
    def num_rows(self) -> int:
        return len(self.b)

    def dense_matrix(self) -> np.ndarray:
        a = np.zeros((self.num_rows, self.num_vars))
        np.add.at(a, (self.a_rows, self.a_cols), self.a_vals)
        return a


@dataclass(frozen=True)
class SolveSettings:
    tol: float = 1e-8
    max_iter: int = 100_000
    seed: int = 0
    over_relax: float = 1.5
    infeas_tol: float = 1e-7
    check_every: int = 25
    polish: bool = True


@dataclass(frozen=True)
class Solution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: str
    value: float
    residuals: tuple


# ---------------------------------------------------------------------------
# svec / cone projections


def svec_indices(side: int):
    """Row-major upper-triangle (i <= j) index pairs for svec of a side x side matrix."""
    return [(i, j) for i in range(side) for j in range(i, side)]


def svec(mat: np.ndarray) -> np.ndarray:
    side = mat.shape[0]
    out = np.empty(side * (side + 1) // 2)
    k = 0
    for i in range(side):
        for j in range(i, side):
            out[k] = mat[i, j] if i == j else _SQRT2 * mat[i, j]
            k += 1
    return out


def unsvec(vec: np.ndarray, side: int) -> np.ndarray:
    mat = np.empty((side, side))
    k = 0
    for i in range(side):
        for j in range(i, side):
            if i == j:
                mat[i, i] = vec[k]
            else:
                mat[i, j] = mat[j, i] = vec[k] / _SQRT2
            k += 1
    return mat


def jacobi_eigh(sym: np.ndarray, tol: float = 1e-13, max_sweeps: int = 60):
    """Cyclic Jacobi eigendecomposition of a small symmetric matrix.

    Returns (eigenvalues, eigenvectors) with columns as eigenvectors.
    """
    a = np.array(sym, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale = 1.0 + float(np.max(np.abs(a.diagonal()), initial=0.0))
    for _ in range(max_sweeps):
        off = np.sqrt(sum(a[p, q] ** 2 for p in range(n) for q in range(p + 1, n)))
        if off <= tol * scale:
            break
        for p in range(n):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(1.0, theta)) if theta != 0 else 1.0
                cth = 1.0 / np.hypot(1.0, t)
                sth = t * cth
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = cth
                rot[p, q] = sth
                rot[q, p] = -sth
                a = rot.T @ a @ rot
                v = v @ rot
    return a.diagonal().copy(), v


def _project_soc(z: np.ndarray) -> np.ndarray:
    t, rest = z[0], z[1:]
    nr = np.linalg.norm(rest)
    if nr <= t:
        return z
    if nr <= -t:
        return np.zeros_like(z)
    coef = (t + nr) / 2.0
    out = np.empty_like(z)
    out[0] = coef
    out[1:] = rest * (coef / nr)
    return out


def _project_psd(z: np.ndarray, side: int) -> np.ndarray:
    mat = unsvec(z, side)
    vals, vecs = jacobi_eigh(mat)
    pos = np.clip(vals, 0.0, None)
    return svec((vecs * pos) @ vecs.T)


def project_cone(z: np.ndarray, cones, dual: bool) -> np.ndarray:
    """Project onto K (dual=False) or onto K* (dual=True), blockwise.

    The dual of the zero cone is the free space; every other cone here is
    self-dual, so only the zero block distinguishes the two cases.
    """
    out = np.empty_like(z)
    at = 0
    for cone in cones:
        r = cone.rows
        blk = z[at:at + r]
        if cone.kind == ZERO:
            out[at:at + r] = blk if dual else 0.0
        elif cone.kind == NONNEG:
            out[at:at + r] = np.clip(blk, 0.0, None)
        elif cone.kind == SOC:
            out[at:at + r] = _project_soc(blk)
        else:
            out[at:at + r] = _project_psd(blk, cone.dim)
        at += r
    return out


# ---------------------------------------------------------------------------
# scaling


def _block_uniform(row_norms: np.ndarray, cones) -> np.ndarray:
    """Force one shared row scale inside each soc/psd block (cone invariance)."""
    out = row_norms.copy()
    at = 0
    for cone in cones:
        r = cone.rows
        if cone.kind in (SOC, PSD):
            out[at:at + r] = np.max(row_norms[at:at + r])
        at += r
    return out


def _ruiz_equilibrate(a: np.ndarray, cones, b=None, iters: int = 10):
    """Iterative row/column scaling toward unit max-norms.

    When given, the right-hand side joins the row norms, so a single huge
    entry there cannot leave the scaled data badly conditioned.
    """
    m, n = a.shape
    d = np.ones(m)
    e = np.ones(n)
    work = a.copy()
    bw = None if b is None else np.asarray(b, dtype=float).copy()
    for _ in range(iters):
        rn = np.max(np.abs(work), axis=1) if n else np.ones(m)
        if bw is not None:
            rn = np.maximum(rn, np.abs(bw))
        rn = _block_uniform(rn, cones)
        rn[rn == 0] = 1.0
        cn = np.max(np.abs(work), axis=0) if m else np.ones(n)
        cn[cn == 0] = 1.0
        dr = 1.0 / np.sqrt(rn)
        dc = 1.0 / np.sqrt(cn)
        work = work * dr[:, None] * dc[None, :]
        d *= dr
        e *= dc
        if bw is not None:
            bw = bw * dr
    return work, d, e


# ---------------------------------------------------------------------------
# solver


class _KktSolver:
    """Cached solve of M z = g with M = [[I, A'], [-A, I]].

    Reduces to the normal-equation system on the smaller side, factorized once
    with a dense Cholesky (the matrix is symmetric positive definite).
    """

    def __init__(self, a: np.ndarray):
        self.a = a
        m, n = a.shape
        if n <= m:
            self.side = "n"
            self.factor = sla.cho_factor(np.eye(n) + a.T @ a, check_finite=False)
        else:
            self.side = "m"
            self.factor = sla.cho_factor(np.eye(m) + a @ a.T, check_finite=False)

    def solve(self, gx: np.ndarray, gy: np.ndarray):
        a = self.a
        if self.side == "n":
            zx = sla.cho_solve(self.factor, gx - a.T @ gy, check_finite=False)
            zy = gy + a @ zx
        else:
            zy = sla.cho_solve(self.factor, gy + a @ gx, check_finite=False)
            zx = gx - a.T @ zy
        return zx, zy


def residuals(program: ConicProgram, sol: Solution):
    """Recompute (primal, dual, gap) residuals from the raw program data."""
    a = program.dense_matrix()
    x, y, s = sol.x, sol.y, sol.s
    if len(x) != program.num_vars or len(y) != program.num_rows or len(s) != program.num_rows:
        raise DimensionError("solution dimensions do not match the program")
    rp = float(np.linalg.norm(a @ x + s - program.b))
    rd = float(np.linalg.norm(a.T @ y + program.c))
    gap = float(abs(program.c @ x + program.b @ y))
    return rp, rd, gap


def _polish_lp(program: ConicProgram, a: np.ndarray, x, y, s, tol):
    """Active-set least-squares refinement for zero/nonneg-cone programs."""
    m, n = a.shape
    active = np.zeros(m, dtype=bool)
    at = 0
    for cone in program.cones:
        r = cone.rows
        if cone.kind == ZERO:
            active[at:at + r] = True
        elif cone.kind == NONNEG:
            blk = slice(at, at + r)
            thresh = np.sqrt(max(tol, 1e-16)) * (1.0 + np.abs(program.b[blk]))
            active[blk] = s[blk] <= thresh
        else:
            return None
        at += r
    aact = a[active]
    k = aact.shape[0]
    # unknowns: x (n) and active duals (k)
    top = np.hstack([aact, np.zeros((k, k))])
    bot = np.hstack([np.zeros((n, n)), aact.T])
    lhs = np.vstack([top, bot])
    rhs = np.concatenate([program.b[active], -program.c])
    try:
        zz, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    except np.linalg.LinAlgError:
        return None
    xp = zz[:n]
    yp = np.zeros(m)
    yp[active] = zz[n:]
    sp = program.b - a @ xp
    # clean tiny negatives on inactive inequality slacks
    at = 0
    ok = True
    for cone in program.cones:
        r = cone.rows
        blk = slice(at, at + r)
        if cone.kind == ZERO:
            sp[blk] = 0.0
        else:
            if np.min(sp[blk]) < -1e-9 * (1.0 + np.max(np.abs(program.b))):
                ok = False
            sp[blk] = np.clip(sp[blk], 0.0, None)
            if np.min(yp[blk]) < -1e-9 * (1.0 + np.max(np.abs(program.c), initial=0.0)):
                ok = False
            yp[blk] = np.clip(yp[blk], 0.0, None)
        at += r
    if not ok:
        return None
    return xp, yp, sp


def solve(program: ConicProgram, settings: SolveSettings | None = None) -> Solution:
    """Solve the program; returns a KKT-approximate solution or a certificate.

    Deterministic for fixed settings. Infeasibility and unboundedness are
    detected through ray certificates of the homogeneous embedding.
    """
    st = settings or SolveSettings()
    a_raw = program.dense_matrix()
    m, n = a_raw.shape
    b_raw, c_raw = program.b, program.c

    # fold the rhs into the equilibration only when its entries sit far
    # outside the matrix scale; on well-ranged data the plain matrix scaling
    # conditions better
    a_big = max(1.0, float(np.max(np.abs(a_raw))) if a_raw.size else 1.0)
    b_in = b_raw if b_raw.size and float(np.max(np.abs(b_raw))) > 1e3 * a_big else None
    a, d, e = _ruiz_equilibrate(a_raw, program.cones, b_in)
    b = d * b_raw
    c = e * c_raw
    beta = 1.0 / (1.0 + np.linalg.norm(b))
    gamma = 1.0 / (1.0 + np.linalg.norm(c))
    b = beta * b
    c = gamma * c

    kkt = _KktSolver(a)
    h = np.concatenate([c, b])
    mh_x, mh_y = kkt.solve(h[:n], h[n:])
    mh = np.concatenate([mh_x, mh_y])
    denom = 1.0 + float(h @ mh)

    u = np.zeros(n + m + 1)
    v = np.zeros(n + m + 1)
    u[-1] = 1.0
    v[-1] = 1.0
    alpha = st.over_relax

    bnorm1 = 1.0 + np.linalg.norm(b_raw)
    cnorm1 = 1.0 + np.linalg.norm(c_raw)

    best = None

    def _candidate(tau):
        x = e * (u[:n] / tau) / beta
        y = d * (u[n:n + m] / tau) / gamma
        s_scaled = v[n:n + m] / tau
        s = s_scaled / (d * beta)
        return x, y, s

    status = "max_iter"
    for k in range(st.max_iter):
        w = u + v
        gx = w[:n] - w[-1] * c
        gy = w[n:n + m] - w[-1] * b
        px, py = kkt.solve(gx, gy)
        p = np.concatenate([px, py])
        p -= mh * ((h @ p) / denom)
        ut_xy = p
        ut_tau = w[-1] + float(h @ p)

        ox = np.empty_like(u)
        ox[:n + m] = alpha * ut_xy + (1.0 - alpha) * u[:n + m]
        ox[-1] = alpha * ut_tau + (1.0 - alpha) * u[-1]

        z = ox - v
        u_new = np.empty_like(u)
        u_new[:n] = z[:n]
        u_new[n:n + m] = project_cone(z[n:n + m], program.cones, dual=True)
        u_new[-1] = max(z[-1], 0.0)
        v += u_new - ox
        u = u_new

        if (k + 1) % st.check_every == 0 or k == st.max_iter - 1:
            tau = u[-1]
            unorm = np.linalg.norm(u[:n + m])
            if tau > 1e-11 * max(1.0, unorm):
                x, y, s = _candidate(tau)
                rp = np.linalg.norm(a_raw @ x + s - b_raw) / bnorm1
                rd = np.linalg.norm(a_raw.T @ y + c_raw) / cnorm1
                pobj = float(c_raw @ x)
                dobj = float(-b_raw @ y)
                gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
                score = max(rp, rd, gap)
                if np.isfinite(score) and (best is None or score < best[0]):
                    best = (score, (x, y, s))
                if rp <= st.tol and rd <= st.tol and gap <= st.tol:
                    status = "optimal"
                    break
            # certificate tests on the homogeneous ray
            ux, uy = u[:n], u[n:n + m]
            by = float(b @ uy)
            if by < 0.0:
                if np.linalg.norm(a.T @ uy) <= st.infeas_tol * (-by):
                    ycert = d * uy / (-by)
                    return Solution(
                        x=np.full(n, np.nan), y=ycert, s=np.full(m, np.nan),
                        status="infeasible", value=float("nan"),
                        residuals=(float("nan"), float("nan"), float("nan")),
                    )
            cx = float(c @ ux)
            if cx < 0.0:
                vs = v[n:n + m]
                if np.linalg.norm(a @ ux + vs) <= st.infeas_tol * (-cx):
                    xcert = e * ux / (-cx)
                    return Solution(
                        x=xcert, y=np.full(m, np.nan), s=np.full(m, np.nan),
                        status="unbounded", value=float("-inf"),
                        residuals=(float("nan"), float("nan"), float("nan")),
                    )

    if best is None:
        tau = max(u[-1], 1e-300)
        best = (float("inf"), _candidate(tau))
    x, y, s = best[1]

    if st.polish and status == "optimal":
        polished = _polish_lp(program, a_raw, x, y, s, st.tol)
        if polished is not None:
            xp, yp, sp = polished
            old = residuals(program, Solution(x, y, s, "optimal", 0.0, (0, 0, 0)))
            new = residuals(program, Solution(xp, yp, sp, "optimal", 0.0, (0, 0, 0)))
            if max(new) <= max(max(old), 1e-12):
                x, y, s = xp, yp, sp

    sol = Solution(x=x, y=y, s=s, status=status, value=float(program.c @ x), residuals=(0.0, 0.0, 0.0))
    rp, rd, gap = residuals(program, sol)
    return replace(sol, residuals=(rp, rd, gap))


# ---------------------------------------------------------------------------
# builder


class ProgramBuilder:
    """Incremental assembly of a ConicProgram.

    Variables are created with add_vars; rows are appended in cone-block order
    through eq_row / le_row / soc_block / psd_block. Coefficient maps are
    {column_index: value} dictionaries; rows mean  sum_j coef_j x_j (= or <=) rhs,
    and cone blocks constrain  rhs_row - sum coef x  to the cone.
    """

    def __init__(self):
        self._obj: dict[int, float] = {}
        self._rows: list[dict[int, float]] = []
        self._rhs: list[float] = []
        self._cones: list[Cone] = []
        self._names: list[str] = []
        self._nvars = 0

    @property
    def num_vars(self) -> int:
        return self._nvars

    def add_vars(self, count: int, name: str = "x", obj=0.0) -> np.ndarray:
        idx = np.arange(self._nvars, self._nvars + count)
        self._nvars += count
        objv = np.broadcast_to(np.asarray(obj, dtype=float), (count,))
        for i, j in enumerate(idx):
            self._names.append(f"{name}[{i}]" if count > 1 else name)
            if objv[i] != 0.0:
                self._obj[int(j)] = self._obj.get(int(j), 0.0) + float(objv[i])
        return idx

    def add_objective(self, col: int, coef: float):
        self._obj[int(col)] = self._obj.get(int(col), 0.0) + float(coef)

    def _push(self, kind: str, coeffs: dict, rhs: float):
        self._rows.append({int(k): float(val) for k, val in coeffs.items() if val != 0.0})
        self._rhs.append(float(rhs))
        if self._cones and self._cones[-1].kind == kind and kind in (ZERO, NONNEG):
            self._cones[-1] = Cone(kind, self._cones[-1].dim + 1)
        else:
            self._cones.append(Cone(kind, 1))

    def eq_row(self, coeffs: dict, rhs: float):
        """sum coef_j x_j = rhs"""
        self._push(ZERO, coeffs, rhs)

    def le_row(self, coeffs: dict, rhs: float):
        """sum coef_j x_j <= rhs"""
        self._push(NONNEG, coeffs, rhs)

    def nonneg_var(self, col: int):
        """x_col >= 0"""
        self.le_row({col: -1.0}, 0.0)

    def soc_block(self, rows: list):
        """Constrain the vector (rhs_k - sum coef x)_k to the second-order cone.

        rows is a list of (coeffs, rhs); the first row is the cone's scalar part.
        """
        if len(rows) < 1:
            raise ParameterError("soc block needs at least one row")
        for coeffs, rhs in rows:
            self._rows.append({int(k): float(v) for k, v in coeffs.items() if v != 0.0})
            self._rhs.append(float(rhs))
        self._cones.append(Cone(SOC, len(rows)))

    def psd_block(self, side: int, rows: list):
        """Constrain svec-ordered rows (rhs - sum coef x) to the PSD cone."""
        want = side * (side + 1) // 2
        if len(rows) != want:
            raise DimensionError(f"psd side {side} needs {want} rows, got {len(rows)}")
        for coeffs, rhs in rows:
            self._rows.append({int(k): float(v) for k, v in coeffs.items() if v != 0.0})
            self._rhs.append(float(rhs))
        self._cones.append(Cone(PSD, side))

    # affine-expression sugar; expressions are LinExpr instances or scalars

    def le(self, expr):
        """expr <= 0"""
        expr = LinExpr.of(expr)
        self.le_row(expr.terms, -expr.const)

    def eq(self, expr):
        """expr = 0"""
        expr = LinExpr.of(expr)
        self.eq_row(expr.terms, -expr.const)

    def soc(self, exprs):
        """(expr_0, expr_1, ...) lies in the second-order cone."""
        self.soc_block(_expr_rows(exprs))

    def psd(self, side: int, exprs):
        """svec-ordered exprs form a PSD matrix."""
        self.psd_block(side, _expr_rows(exprs))

    def build(self) -> ConicProgram:
        rows, cols, vals = [], [], []
        for i, row in enumerate(self._rows):
            for j, val in row.items():
                rows.append(i)
                cols.append(j)
                vals.append(val)
        c = np.zeros(self._nvars)
        for j, val in self._obj.items():
            c[j] = val
        return ConicProgram(
            c=c,
            a_rows=np.asarray(rows, dtype=int),
            a_cols=np.asarray(cols, dtype=int),
            a_vals=np.asarray(vals, dtype=float),
            b=np.asarray(self._rhs, dtype=float),
            cones=tuple(self._cones),
            names=tuple(self._names),
        )


class LinExpr:
    """Affine expression sum_j coef_j x_j + const over builder variables."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: dict | None = None, const: float = 0.0):
        self.terms = {int(k): float(v) for k, v in (terms or {}).items() if v != 0.0}
        self.const = float(const)

    @staticmethod
    def var(col, coef: float = 1.0) -> "LinExpr":
        return LinExpr({int(col): coef})

    @staticmethod
    def of(value) -> "LinExpr":
        if isinstance(value, LinExpr):
            return value
        return LinExpr(const=float(value))

    def __add__(self, other):
        other = LinExpr.of(other)
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms.get(k, 0.0) + v
        return LinExpr(terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return LinExpr({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-LinExpr.of(other))

    def __rsub__(self, other):
        return LinExpr.of(other) + (-self)

    def __mul__(self, scalar):
        s = float(scalar)
        return LinExpr({k: s * v for k, v in self.terms.items()}, s * self.const)

    __rmul__ = __mul__


def _expr_rows(exprs):
    """Rows encoding slack_k = expr_k under  A x + s = b."""
    return [({k: -v for k, v in e.terms.items()}, e.const) for e in map(LinExpr.of, exprs)]


def dump_program(program: ConicProgram) -> str:
    """Plain-text sparse dump: dims, cone list, then c/b/A triplets.

    Lines: `vars N`, `rows M`, `cone KIND DIM` per block (psd DIM is the side),
    `c j v`, `b i v`, `A i j v` for nonzeros; indices are zero-based.
    """
    out = io.StringIO()
    out.write("# gaugekit conic program v1\n")
    out.write("# minimize c'x  subject to  A x + s = b,  s in K\n")
    out.write(f"vars {program.num_vars}\n")
    out.write(f"rows {program.num_rows}\n")
    for cone in program.cones:
        out.write(f"cone {cone.kind} {cone.dim}\n")
    for j, val in enumerate(program.c):
        if val != 0.0:
            out.write(f"c {j} {val!r}\n")
    for i, val in enumerate(program.b):
        if val != 0.0:
            out.write(f"b {i} {val!r}\n")
    for i, j, val in zip(program.a_rows, program.a_cols, program.a_vals):
        out.write(f"A {i} {j} {val!r}\n")
    return out.getvalue()
