"""Pure numpy implementations of the hot kernels.

Signatures and results mirror ``_core.pyx``; the compiled module is preferred
when it is importable.
"""
import itertools

import numpy as np

LOG_FLOOR = 1e-300
MI = 0
MAP = 1
MAP_SMOOTH = 2


def project_simplex_rows(V):
    """Euclidean projection of every row of ``V`` onto the probability simplex."""
    V = np.asarray(V, dtype=np.float64)
    k = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    ind = np.arange(1, k + 1)
    cond = U - css / ind > 0
    rho = k - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(V.shape[0]), rho] / (rho + 1)
    return np.maximum(V - theta[:, None], 0.0)


def project_feasible(V, C, budget):
    """Project rows onto simplices intersected with ``sum(C * Q) <= budget``.

    The KKT point is ``Q = Pi(V - mu C)`` for the smallest ``mu >= 0`` meeting
    the budget; ``mu`` is found by bisection on the monotone distortion curve.
    """
    V = np.asarray(V, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    Q = project_simplex_rows(V)
    if (C * Q).sum() <= budget:
        return Q
    lo, hi = 0.0, 1.0
    for _ in range(200):
        if (C * project_simplex_rows(V - hi * C)).sum() <= budget:
            break
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if (C * project_simplex_rows(V - mid * C)).sum() > budget:
            lo = mid
        else:
            hi = mid
    return project_simplex_rows(V - hi * C)


def released_joint(P, Q):
    """``J[xhat, y]`` from ``P[x, y]`` and row-major ``Q[(x, y), xhat]``."""
    nx, ny = P.shape
    return np.einsum("xy,xyh->hy", P, Q.reshape(nx, ny, -1))


def mi_value_grad(P, Q):
    nx, ny = P.shape
    J = released_joint(P, Q)
    py = J.sum(axis=0)
    ph = J.sum(axis=1)
    denom = ph[:, None] * py[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        L = np.log2(np.maximum(J, LOG_FLOOR) / np.where(denom > 0, denom, 1.0))
    L = np.where(denom > 0, L, 0.0)
    f = float(np.where(J > 0, J * L, 0.0).sum())
    G = (P[:, :, None] * L.T[None, :, :]).reshape(nx * ny, -1)
    return f, G


def map_value_grad(P, Q):
    nx, ny = P.shape
    J = released_joint(P, Q)
    a = np.argmax(J, axis=1)
    k = J.shape[0]
    G = np.zeros((nx, ny, k))
    for h in range(k):
        G[:, a[h], h] = P[:, a[h]]
    return float(J.max(axis=1).sum()), G.reshape(nx * ny, k)


def smooth_map_value_grad(P, Q, tau):
    """Log-sum-exp smoothing of the MAP objective: ``sum_h tau*logsumexp(J[h]/tau)``.

    Returns ``(smoothed value, gradient, exact MAP value)``.
    """
    nx, ny = P.shape
    J = released_joint(P, Q)
    m = J.max(axis=1, keepdims=True)
    E = np.exp((J - m) / tau)
    S = E.sum(axis=1, keepdims=True)
    W = E / S
    f = float((m[:, 0] + tau * np.log(S[:, 0])).sum())
    G = (P[:, :, None] * W.T[None, :, :]).reshape(nx * ny, -1)
    return f, G, float(m.sum())


def _evaluate(objective, P, Q, tau):
    if objective == MI:
        f, G = mi_value_grad(P, Q)
        return f, G, f
    if objective == MAP:
        f, G = map_value_grad(P, Q)
        return f, G, f
    return smooth_map_value_grad(P, Q, tau)


def _mi_step(P, C, budget, Y, gy, fy, L):
    for _ in range(80):
        Xn = project_feasible(Y - gy / L, C, budget)
        fn, _g = mi_value_grad(P, Xn)
        d = Xn - Y
        if fn <= fy + (gy * d).sum() + 0.5 * L * (d * d).sum() + 1e-15:
            break
        L *= 2.0
    return Xn, fn, L


def _fista_mi(P, C, budget, step, max_iters, tol, patience, X):
    Y = X.copy()
    L = 1.0 / step
    tk = 1.0
    fx, _g = mi_value_grad(P, X)
    best_f, best_Q = fx, X.copy()
    history = [fx]
    t = 0
    converged = False
    while t < max_iters:
        t += 1
        fy, gy = mi_value_grad(P, Y)
        Xn, fn, L = _mi_step(P, C, budget, Y, gy, fy, L)
        if fn > fx:
            Y = X.copy()
            tk = 1.0
            fy, gy = mi_value_grad(P, Y)
            Xn, fn, L = _mi_step(P, C, budget, Y, gy, fy, L)
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        Y = Xn + ((tk - 1.0) / tn) * (Xn - X)
        X = Xn
        fx, tk = fn, tn
        L *= 0.9
        if fx < best_f:
            best_f, best_Q = fx, X.copy()
        history.append(best_f)
        if t >= patience and history[t - patience] - best_f < tol:
            converged = True
            break
    return best_Q, best_f, t, converged


def pgd_solve(P, C, budget, objective, step, max_iters, tol, patience, Q0, tau0=1e-2, tau_min=1e-8):
    """Projected descent over rows-on-simplices intersected with the budget half-space.

    ``objective`` is ``MI`` (accelerated projected gradient with backtracking
    and function-value restarts), ``MAP`` (subgradient, ``step/sqrt(t)``
    normalised by the subgradient norm) or ``MAP_SMOOTH`` (log-sum-exp
    smoothing annealed from ``tau0`` to ``tau_min`` by factors of ten, with
    Armijo-backtracked steps that grow by 1.5x after each acceptance).
    Non-smoothed runs stop once the best value improves by less than ``tol``
    over ``patience`` iterations.

    Returns ``(Q_best, f_best, iterations, converged)`` where ``f_best`` is the
    exact (unsmoothed) objective of ``Q_best``.
    """
    P = np.asarray(P, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if objective == MI:
        return _fista_mi(P, C, budget, step, max_iters, tol, patience, project_feasible(Q0, C, budget))
    smooth = objective == MAP_SMOOTH
    tau = tau0
    Q = project_feasible(Q0, C, budget)
    f, G, hard = _evaluate(objective, P, Q, tau)
    best_f, best_Q = hard, Q.copy()
    history = [best_f]
    alpha = step
    t = 0
    stage_start = 0
    converged = False
    while t < max_iters:
        t += 1
        if objective == MAP:
            a = step / (np.sqrt(t) * max(np.sqrt((G * G).sum()), 1e-300))
            Qn = project_feasible(Q - a * G, C, budget)
            fn, Gn, hardn = _evaluate(objective, P, Qn, tau)
        else:
            for _ in range(80):
                Qn = project_feasible(Q - alpha * G, C, budget)
                fn, Gn, hardn = _evaluate(objective, P, Qn, tau)
                d = Qn - Q
                if fn <= f + (G * d).sum() + (d * d).sum() / (2.0 * alpha) + 1e-15:
                    break
                alpha *= 0.5
            alpha *= 1.5
        dec = f - fn
        Q, f, G, hard = Qn, fn, Gn, hardn
        if hard < best_f:
            best_f, best_Q = hard, Q.copy()
        history.append(best_f)
        if smooth:
            if dec < tol * tau or t - stage_start >= max_iters // 8:
                if tau <= tau_min:
                    converged = dec < tol * tau
                    break
                tau = max(tau * 0.1, tau_min)
                stage_start = t
                alpha = step
                f, G, hard = _evaluate(objective, P, Q, tau)
        elif t >= patience and history[t - patience] - best_f < tol:
            converged = True
            break
    return best_Q, best_f, t, converged


def simplex_grid(k, n):
    """All length-``k`` compositions of ``n``, divided by ``n``, in lexicographic order."""
    pts = [c for c in itertools.product(range(n + 1), repeat=k) if sum(c) == n]
    return np.array(pts, dtype=np.float64) / n


def _objective_batch(P_rows, py, G, idx, ny, loss):
    # idx: (B, R) grid indices; row r is (x, y) = divmod(r, ny)
    R = idx.shape[1]
    k = G.shape[1]
    J = np.zeros((idx.shape[0], k, ny))
    for r in range(R):
        y = r % ny
        J[:, :, y] += P_rows[r] * G[idx[:, r]]
    if loss == MAP:
        return J.max(axis=2).sum(axis=1)
    ph = J.sum(axis=2)
    denom = ph[:, :, None] * py[None, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(J > 0, J * np.log2(J / np.where(denom > 0, denom, 1.0)), 0.0)
    return t.sum(axis=(1, 2))


def grid_search(P, C, budget, n, loss):
    """Exhaustive search over channels whose rows lie on the ``1/n`` simplex grid.

    Returns ``(Q_best, f_best, n_feasible)``; ``Q_best`` is ``None`` when no grid
    point is feasible.  Ties keep the first point in lexicographic order.
    """
    P = np.asarray(P, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    nx, ny = P.shape
    R, k = C.shape
    G = simplex_grid(k, n)
    m = G.shape[0]
    P_rows = P.ravel()
    py = P.sum(axis=0)
    row_dist = C @ G.T  # (R, m)
    tail = 1
    while tail < R and m ** (tail + 1) <= 200_000:
        tail += 1
    head = R - tail
    tail_idx = np.array(list(itertools.product(range(m), repeat=tail)), dtype=np.int64)
    tail_dist = np.zeros(tail_idx.shape[0])
    for j in range(tail):
        tail_dist += row_dist[head + j, tail_idx[:, j]]
    best_f = np.inf
    best = None
    n_feasible = 0
    for head_idx in itertools.product(range(m), repeat=head):
        hd = sum(row_dist[r, i] for r, i in enumerate(head_idx))
        dist = hd + tail_dist
        feasible = dist <= budget + 1e-12
        cnt = int(feasible.sum())
        if cnt == 0:
            continue
        n_feasible += cnt
        sel = tail_idx[feasible]
        full = np.hstack([np.broadcast_to(np.array(head_idx, dtype=np.int64), (sel.shape[0], head)), sel])
        f = _objective_batch(P_rows, py, G, full, ny, loss)
        i = int(np.argmin(f))
        if f[i] < best_f:
            best_f = float(f[i])
            best = full[i].copy()
    if best is None:
        return None, np.inf, 0
    return G[best], best_f, n_feasible
