"""Independent reference evaluators for worst-case reweighting values.

Everything here works directly on sorted arrays, greedy mass moves, small
scipy LPs, or a membership-only Frank-Wolfe loop. None of it goes through the
dual reformulations, so these values can be frozen as fixtures and compared
against the conic pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionError, ParameterError
from .space import DiscreteSpace

_INF = float("inf")


def reference_lp(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None, bounds=(0, None)):
    """Thin linprog wrapper returning (status, value, x)."""
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
    status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "failed")
    value = float(res.fun) if res.status == 0 else float("nan")
    return status, value, res.x


def _as_cost(cost) -> np.ndarray:
    values = getattr(cost, "values", cost)
    return np.asarray(values, dtype=float).ravel()


def cvar_sorted(space: DiscreteSpace, cost, beta: float) -> float:
    """Average of the worst (1 - beta) probability tail, by sorting."""
    if not (0.0 < beta < 1.0):
        raise ParameterError(f"beta must lie in (0, 1), got {beta}")
    f = _as_cost(cost)
    if len(f) != space.size:
        raise DimensionError("cost length does not match the space")
    order = np.argsort(-f)
    tail = 1.0 - beta
    remaining = tail
    acc = 0.0
    for i in order:
        take = min(space.weights[i], remaining)
        acc += take * f[i]
        remaining -= take
        if remaining <= 1e-15:
            break
    return acc / tail


def tv_greedy(space: DiscreteSpace, cost, eps: float) -> float:
    """Worst case over the total-variation ball by greedy mass transfer.

    Moves up to eps/2 probability (no more than what sits below the top) from
    the lowest-cost atoms onto the highest-cost atom.
    """
    if eps < 0.0:
        raise ParameterError("eps must be nonnegative")
    f = _as_cost(cost)
    if len(f) != space.size:
        raise DimensionError("cost length does not match the space")
    p = space.weights.copy()
    top = int(np.argmax(f))
    budget = min(eps / 2.0, 1.0 - p[top])
    value = float(p @ f)
    for i in np.argsort(f):
        if i == top or budget <= 1e-15:
            continue
        moved = min(p[i], budget)
        value += moved * (f[top] - f[i])
        budget -= moved
    return value


def w1_transport(space: DiscreteSpace, cost, eps: float, metric) -> float:
    """Worst case over a transport ball, as an explicit plan LP.

    Variables are plan[i, j] = mass sent to point i from point j; the old
    marginal is fixed and total moving cost is capped by eps.
    """
    if eps < 0.0:
        raise ParameterError("eps must be nonnegative")
    f = _as_cost(cost)
    n = space.size
    if len(f) != n:
        raise DimensionError("cost length does not match the space")
    c = metric.matrix(space.points, space.points)
    obj = -np.repeat(f, n)  # maximize sum_ij plan[i,j] f[i]
    a_eq = np.zeros((n, n * n))
    for j in range(n):
        a_eq[j, j::n] = 1.0  # sum_i plan[i,j] = p[j]
    a_ub = c.ravel()[None, :]
    status, value, _ = reference_lp(obj, a_ub=a_ub, b_ub=[eps], a_eq=a_eq, b_eq=space.weights)
    if status != "optimal":
        raise ParameterError(f"transport reference LP ended with status {status}")
    return -value


def w1_flow_gauge(space: DiscreteSpace, u, metric) -> float:
    """Minimal transport cost realizing the signed mass change p * u.

    Infinite when the change is unbalanced. Serves as a membership test for
    transport-type deviation sets without touching the conic stack.
    """
    u = np.asarray(u, dtype=float).ravel()
    p = space.weights
    if len(u) != space.size:
        raise DimensionError("deviation length does not match the space")
    if abs(float(p @ u)) > 1e-9 * (1.0 + float(np.max(np.abs(u), initial=0.0))):
        return _INF
    if np.max(np.abs(u), initial=0.0) <= 1e-15:
        return 0.0
    n = space.size
    c = metric.matrix(space.points, space.points)
    arcs = [(i, j) for i in range(n) for j in range(n) if i != j]
    a_eq = np.zeros((n, len(arcs)))
    for k, (i, j) in enumerate(arcs):
        a_eq[i, k] += 1.0
        a_eq[j, k] -= 1.0
    obj = np.array([c[i, j] for i, j in arcs])
    status, value, _ = reference_lp(obj, a_eq=a_eq, b_eq=p * u)
    if status == "infeasible":
        return _INF
    if status != "optimal":
        raise ParameterError(f"flow reference LP ended with status {status}")
    return value


def w1_distance(points_a, weights_a, points_b, weights_b, metric) -> float:
    """Transport distance between two weighted point clouds.

    One-dimensional clouds under an absolute-difference cost use the exact
    quantile coupling; everything else goes through a plan LP.
    """
    pa = np.atleast_2d(np.asarray(points_a, dtype=float))
    pb = np.atleast_2d(np.asarray(points_b, dtype=float))
    if np.asarray(points_a).ndim == 1:
        pa = np.asarray(points_a, dtype=float).reshape(-1, 1)
    if np.asarray(points_b).ndim == 1:
        pb = np.asarray(points_b, dtype=float).reshape(-1, 1)
    wa = np.asarray(weights_a, dtype=float).ravel()
    wb = np.asarray(weights_b, dtype=float).ravel()
    if len(wa) != len(pa) or len(wb) != len(pb):
        raise DimensionError("weights do not match point counts")
    if abs(wa.sum() - 1.0) > 1e-9 or abs(wb.sum() - 1.0) > 1e-9:
        raise ParameterError("weights must sum to one")
    one_d = pa.shape[1] == 1 and pb.shape[1] == 1
    if one_d and getattr(metric, "kind", None) == "pnorm":
        return _quantile_coupling(pa.ravel(), wa, pb.ravel(), wb)
    c = metric.matrix(pa, pb)
    na, nb = len(pa), len(pb)
    a_eq = np.zeros((na + nb, na * nb))
    for i in range(na):
        a_eq[i, i * nb:(i + 1) * nb] = 1.0
    for j in range(nb):
        a_eq[na + j, j::nb] = 1.0
    status, value, _ = reference_lp(c.ravel(), a_eq=a_eq, b_eq=np.concatenate([wa, wb]))
    if status != "optimal":
        raise ParameterError(f"distance reference LP ended with status {status}")
    return value


def _quantile_coupling(xa, wa, xb, wb) -> float:
    ia = np.argsort(xa)
    ib = np.argsort(xb)
    xa, wa = xa[ia], wa[ia].copy()
    xb, wb = xb[ib], wb[ib].copy()
    i = j = 0
    total = 0.0
    while i < len(xa) and j < len(xb):
        m = min(wa[i], wb[j])
        total += m * abs(xa[i] - xb[j])
        wa[i] -= m
        wb[j] -= m
        if wa[i] <= 1e-15:
            i += 1
        if wb[j] <= 1e-15:
            j += 1
    return total


def chi2_closed_form(space: DiscreteSpace, cost, eps: float):
    """Mean plus eps standard deviations, when the implied reweighting stays
    nonnegative; None when the closed form does not apply."""
    if eps < 0.0:
        raise ParameterError("eps must be nonnegative")
    f = _as_cost(cost)
    if len(f) != space.size:
        raise DimensionError("cost length does not match the space")
    p = space.weights
    mu = float(p @ f)
    var = float(p @ (f - mu) ** 2)
    if var <= 1e-24:
        return mu
    sigma = np.sqrt(var)
    nu = 1.0 + eps * (f - mu) / sigma
    if float(np.min(nu)) < -1e-12:
        return None
    return mu + eps * sigma


@dataclass(frozen=True)
class FwResult:
    value: float
    gap: float
    nu: np.ndarray
    iterations: int
    converged: bool


def frank_wolfe_primal(problem=None, tol: float = 1e-3, membership=None,
                       objective=None, max_iter: int = 100_000,
                       space: DiscreteSpace | None = None, cost=None,
                       epsilon: float | None = None) -> FwResult:
    """Maximize over the feasible reweightings using only a membership test.

    The search set is {nu >= 0, E[nu] = 1, deviation nu - 1 inside the scaled
    gauge set}. Each round scans chords toward the distribution's extreme
    points, pairwise mass transfers, and radial boundary points (the uniform
    center pushed along the balanced gradient, and the current deviation tilted
    toward it, each bisected to the boundary through the membership callable),
    then takes a golden-section step along the best chord. The reported gap is
    the best linearized improvement over the scanned candidates at the final
    iterate; it vanishes at an optimum on polytope-type sets, and the tilted
    radial family makes the walk follow curved boundaries, where a local
    maximum of a linear objective is already global.

    Accepts either a problem object carrying space / cost / gauge / epsilon or
    those pieces directly. membership(u, t) overrides the gauge-based test;
    objective(nu) -> (value, gradient) overrides the linear default.
    """
    if problem is not None:
        space = problem.space
        cost = problem.cost
        epsilon = problem.epsilon
        if membership is None:
            from . import gauge as _gauge

            expr = problem.gauge

            def membership(u, t, _expr=expr, _space=space):
                return _gauge.membership(_expr, _space, u, t)

    if space is None or membership is None or epsilon is None:
        raise ParameterError("need a problem or explicit space/cost/epsilon/membership")
    f = _as_cost(cost) if cost is not None else None
    p = space.weights
    n = space.size

    if objective is None:
        if f is None:
            raise ParameterError("a cost vector is required for the linear objective")

        def objective(nu):
            return float(p @ (nu * f)), f

    def feasible_step(x, d, lam_hi):
        """Largest lam in [0, lam_hi] keeping x + lam d inside, by bisection."""
        if lam_hi <= 1e-14:
            return 0.0
        if epsilon <= 0.0:
            return 0.0
        if membership(x + lam_hi * d - 1.0, epsilon):
            return lam_hi
        lo, hi = 0.0, lam_hi
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if membership(x + mid * d - 1.0, epsilon):
                lo = mid
            else:
                hi = mid
        return lo

    x = np.ones(n)
    value, grad = objective(x)
    gap = _INF
    iterations = 0
    verts = [np.zeros(n) for _ in range(n)]
    for i in range(n):
        verts[i][i] = 1.0 / p[i]

    for k in range(max_iter):
        iterations = k + 1
        grad_at = np.asarray(grad, dtype=float)
        # candidate rays: toward extreme points, plus pairwise transfers
        rays = []
        for i in range(n):
            d = verts[i] - x
            rate = float(p @ (grad_at * d))
            rays.append((rate, d, 1.0))
        scores = np.array([grad_at[i] - grad_at[j] for i in range(n) for j in range(n) if i != j])
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        for s, (i, j) in sorted(zip(scores, pairs), reverse=True, key=lambda z: z[0])[:4 * n]:
            if s <= 0.0:
                continue
            d = verts[i] - verts[j]
            lam_hi = float(x[j] * p[j])  # donor mass floor
            rays.append((s, d, lam_hi))
        # projected gradient, exact for curved (euclidean-like) boundaries
        d = grad_at - float(p @ grad_at)
        if np.max(np.abs(d)) > 1e-14:
            neg = d < 0.0
            lam_hi = float(np.min(x[neg] / -d[neg])) if np.any(neg) else 1.0 / max(np.max(d), 1e-14)
            rays.append((float(p @ (grad_at * d)), d, lam_hi))

        best_gain, best_point = 0.0, None
        for rate, d, lam_hi in rays:
            if rate <= 1e-15:
                continue
            lam = feasible_step(x, d, lam_hi)
            if lam <= 1e-14:
                continue
            lin_gain = lam * rate
            if lin_gain > best_gain:
                best_gain = lin_gain
                best_point = x + lam * d
        # radial boundary candidates, bisected from the uniform center: the
        # balanced gradient direction, and the current deviation tilted toward
        # it at several strengths (a boundary walk for curved sets)
        g_bal = grad_at - float(p @ grad_at)
        gn = float(np.max(np.abs(g_bal)))
        if gn > 1e-14:
            dirs = [g_bal / gn]
            u_cur = x - 1.0
            un = float(np.max(np.abs(u_cur)))
            if un > 1e-12:
                base = u_cur / un
                for eta in (1.0, 0.3, 0.1, 0.03, 0.01):
                    dirs.append(base + eta * g_bal / gn)
                # bend toward and away from each mass coordinate too, so the
                # walk can leave the plane spanned by the current deviation
                # and the gradient (needed on curved sets)
                for i in range(n):
                    ci = verts[i] - 1.0
                    ci = ci / np.max(np.abs(ci))
                    for eta in (0.3, 0.1, 0.03, 0.01):
                        dirs.append(base + eta * ci)
                        dirs.append(base - eta * ci)
            for d in dirs:
                neg = d < -1e-14
                cap = float(np.min(1.0 / -d[neg])) if np.any(neg) else 1e9
                lam = feasible_step(np.ones(n), d, cap)
                if lam <= 1e-14:
                    continue
                s = 1.0 + lam * d
                lin_gain = float(p @ (grad_at * (s - x)))
                if lin_gain > best_gain:
                    best_gain = lin_gain
                    best_point = s
        gap = best_gain
        if gap <= tol:
            return FwResult(value=value, gap=float(gap), nu=x, iterations=iterations, converged=True)
        # golden-section step along the chosen chord (objective is concave)
        lo_t, hi_t = 0.0, 1.0
        ratio = (np.sqrt(5.0) - 1.0) / 2.0
        t1 = hi_t - ratio * (hi_t - lo_t)
        t2 = lo_t + ratio * (hi_t - lo_t)
        f1 = objective(x + t1 * (best_point - x))[0]
        f2 = objective(x + t2 * (best_point - x))[0]
        for _ in range(30):
            if f1 < f2:
                lo_t, t1, f1 = t1, t2, f2
                t2 = lo_t + ratio * (hi_t - lo_t)
                f2 = objective(x + t2 * (best_point - x))[0]
            else:
                hi_t, t2, f2 = t2, t1, f1
                t1 = hi_t - ratio * (hi_t - lo_t)
                f1 = objective(x + t1 * (best_point - x))[0]
        theta = t1 if f1 >= f2 else t2
        new_value = objective(x + theta * (best_point - x))[0]
        if new_value < value:
            theta = min(1.0, 2.0 / (k + 2.0))
        x = x + theta * (best_point - x)
        value, grad = objective(x)

    return FwResult(value=value, gap=float(gap), nu=x, iterations=iterations, converged=False)
