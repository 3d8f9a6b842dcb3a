# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: simplex projections, projected descent, grid search."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, log2, exp, sqrt, INFINITY, fmax

cnp.import_array()

cdef double LOG_FLOOR = 1e-300
cdef int MI = 0
cdef int MAP = 1
cdef int MAP_SMOOTH = 2


cdef void _proj_row(const double* v, double* out, double* work, int k) noexcept nogil:
    # sort-based simplex projection; work holds a descending copy of v
    cdef int i, j, rho = 0
    cdef double tmp, css = 0.0, theta, cs_rho = 0.0
    for i in range(k):
        work[i] = v[i]
    for i in range(1, k):
        tmp = work[i]
        j = i - 1
        while j >= 0 and work[j] < tmp:
            work[j + 1] = work[j]
            j -= 1
        work[j + 1] = tmp
    for i in range(k):
        css += work[i]
        if work[i] - (css - 1.0) / (i + 1) > 0:
            rho = i
            cs_rho = css
    theta = (cs_rho - 1.0) / (rho + 1)
    for i in range(k):
        out[i] = fmax(v[i] - theta, 0.0)


cdef void _proj_rows_shift(const double[:, ::1] V, const double[:, ::1] C, double mu,
                           double[:, ::1] out, double* shifted, double* work) noexcept nogil:
    cdef Py_ssize_t r, i
    cdef int k = V.shape[1]
    for r in range(V.shape[0]):
        for i in range(k):
            shifted[i] = V[r, i] - mu * C[r, i]
        _proj_row(shifted, &out[r, 0], work, k)


cdef double _dot(const double[:, ::1] A, const double[:, ::1] B) noexcept nogil:
    cdef Py_ssize_t r, i
    cdef double s = 0.0
    for r in range(A.shape[0]):
        for i in range(A.shape[1]):
            s += A[r, i] * B[r, i]
    return s


cdef void _proj_feasible(const double[:, ::1] V, const double[:, ::1] C, double budget,
                         double[:, ::1] out, double* shifted, double* work) noexcept nogil:
    cdef double lo = 0.0, hi = 1.0, mid
    cdef int it
    _proj_rows_shift(V, C, 0.0, out, shifted, work)
    if _dot(C, out) <= budget:
        return
    for it in range(200):
        _proj_rows_shift(V, C, hi, out, shifted, work)
        if _dot(C, out) <= budget:
            break
        lo = hi
        hi *= 2.0
    for it in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        _proj_rows_shift(V, C, mid, out, shifted, work)
        if _dot(C, out) > budget:
            lo = mid
        else:
            hi = mid
    _proj_rows_shift(V, C, hi, out, shifted, work)


def project_simplex_rows(V):
    cdef const double[:, ::1] v = np.ascontiguousarray(V, dtype=np.float64)
    out = np.empty_like(np.asarray(v))
    cdef double[:, ::1] o = out
    cdef double[:, ::1] zero = np.zeros_like(out)
    cdef int k = v.shape[1]
    cdef double[::1] shifted = np.empty(k)
    cdef double[::1] work = np.empty(k)
    _proj_rows_shift(v, zero, 0.0, o, &shifted[0], &work[0])
    return out


def project_feasible(V, C, double budget):
    cdef const double[:, ::1] v = np.ascontiguousarray(V, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    out = np.empty_like(np.asarray(v))
    cdef double[:, ::1] o = out
    cdef int k = v.shape[1]
    cdef double[::1] shifted = np.empty(k)
    cdef double[::1] work = np.empty(k)
    _proj_feasible(v, c, budget, o, &shifted[0], &work[0])
    return out


cdef void _released(const double[:, ::1] P, const double[:, ::1] Q, double[:, ::1] J) noexcept nogil:
    cdef Py_ssize_t x, y, h
    cdef Py_ssize_t nx = P.shape[0], ny = P.shape[1], k = Q.shape[1]
    for h in range(k):
        for y in range(ny):
            J[h, y] = 0.0
    for x in range(nx):
        for y in range(ny):
            for h in range(k):
                J[h, y] += P[x, y] * Q[x * ny + y, h]


cdef double _mi_value_grad(const double[:, ::1] P, const double[:, ::1] Q, double[:, ::1] J,
                           double[:, ::1] L, double[:, ::1] G, double* ph, double* py) noexcept nogil:
    cdef Py_ssize_t x, y, h
    cdef Py_ssize_t nx = P.shape[0], ny = P.shape[1], k = Q.shape[1]
    cdef double f = 0.0, denom, jv
    _released(P, Q, J)
    for y in range(ny):
        py[y] = 0.0
    for h in range(k):
        ph[h] = 0.0
        for y in range(ny):
            ph[h] += J[h, y]
            py[y] += J[h, y]
    for h in range(k):
        for y in range(ny):
            denom = ph[h] * py[y]
            if denom > 0:
                jv = J[h, y]
                L[h, y] = log2(fmax(jv, LOG_FLOOR) / denom)
                if jv > 0:
                    f += jv * L[h, y]
            else:
                L[h, y] = 0.0
    for x in range(nx):
        for y in range(ny):
            for h in range(k):
                G[x * ny + y, h] = P[x, y] * L[h, y]
    return f


cdef double _map_value_grad(const double[:, ::1] P, const double[:, ::1] Q, double[:, ::1] J,
                            double[:, ::1] G) noexcept nogil:
    cdef Py_ssize_t x, y, h, a, r
    cdef Py_ssize_t nx = P.shape[0], ny = P.shape[1], k = Q.shape[1]
    cdef double f = 0.0
    _released(P, Q, J)
    for r in range(nx * ny):
        for h in range(k):
            G[r, h] = 0.0
    for h in range(k):
        a = 0
        for y in range(1, ny):
            if J[h, y] > J[h, a]:
                a = y
        f += J[h, a]
        for x in range(nx):
            G[x * ny + a, h] = P[x, a]
    return f


def mi_value_grad(P, Q):
    cdef const double[:, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[:, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef Py_ssize_t ny = p.shape[1], k = q.shape[1]
    cdef double[:, ::1] J = np.empty((k, ny))
    cdef double[:, ::1] L = np.empty((k, ny))
    G = np.empty((q.shape[0], k))
    cdef double[:, ::1] g = G
    cdef double[::1] ph = np.empty(k)
    cdef double[::1] py = np.empty(ny)
    f = _mi_value_grad(p, q, J, L, g, &ph[0], &py[0])
    return f, G


def map_value_grad(P, Q):
    cdef const double[:, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[:, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef Py_ssize_t ny = p.shape[1], k = q.shape[1]
    cdef double[:, ::1] J = np.empty((k, ny))
    G = np.empty((q.shape[0], k))
    cdef double[:, ::1] g = G
    f = _map_value_grad(p, q, J, g)
    return f, G


cdef double _smooth_map_value_grad(const double[:, ::1] P, const double[:, ::1] Q, double tau,
                                   double[:, ::1] J, double[:, ::1] W, double[:, ::1] G,
                                   double* hard) noexcept nogil:
    # tau * logsumexp(J / tau) per released symbol; hard receives the exact max-sum
    cdef Py_ssize_t x, y, h
    cdef Py_ssize_t nx = P.shape[0], ny = P.shape[1], k = Q.shape[1]
    cdef double f = 0.0, m, s, hs = 0.0
    _released(P, Q, J)
    for h in range(k):
        m = J[h, 0]
        for y in range(1, ny):
            if J[h, y] > m:
                m = J[h, y]
        s = 0.0
        for y in range(ny):
            W[h, y] = exp((J[h, y] - m) / tau)
            s += W[h, y]
        for y in range(ny):
            W[h, y] /= s
        f += m + tau * log(s)
        hs += m
    for x in range(nx):
        for y in range(ny):
            for h in range(k):
                G[x * ny + y, h] = P[x, y] * W[h, y]
    hard[0] = hs
    return f


cdef double _eval(int objective, const double[:, ::1] P, const double[:, ::1] Q, double tau,
                  double[:, ::1] J, double[:, ::1] L, double[:, ::1] G, double* ph, double* py,
                  double* hard) noexcept nogil:
    cdef double f
    if objective == MI:
        f = _mi_value_grad(P, Q, J, L, G, ph, py)
        hard[0] = f
    elif objective == MAP:
        f = _map_value_grad(P, Q, J, G)
        hard[0] = f
    else:
        f = _smooth_map_value_grad(P, Q, tau, J, L, G, hard)
    return f


cdef void _mi_step(const double[:, ::1] p, const double[:, ::1] c, double budget,
                   const double[:, ::1] Y, const double[:, ::1] gy, double fy, double* L,
                   double[:, ::1] V, double[:, ::1] Xn, double[:, ::1] J, double[:, ::1] Lg,
                   double[:, ::1] Gs, double* ph, double* py, double* shifted, double* work,
                   double* fn) noexcept nogil:
    # backtracking projected step from Y with sufficient decrease against fy
    cdef Py_ssize_t r, i, R = Y.shape[0], k = Y.shape[1]
    cdef int it
    cdef double lin, sq, d
    for it in range(80):
        for r in range(R):
            for i in range(k):
                V[r, i] = Y[r, i] - gy[r, i] / L[0]
        _proj_feasible(V, c, budget, Xn, shifted, work)
        fn[0] = _mi_value_grad(p, Xn, J, Lg, Gs, ph, py)
        lin = 0.0
        sq = 0.0
        for r in range(R):
            for i in range(k):
                d = Xn[r, i] - Y[r, i]
                lin += gy[r, i] * d
                sq += d * d
        if fn[0] <= fy + lin + 0.5 * L[0] * sq + 1e-15:
            return
        L[0] *= 2.0


cdef long _fista_mi(const double[:, ::1] p, const double[:, ::1] c, double budget, double step,
                    long max_iters, double tol, long patience, double[:, ::1] X,
                    double[:, ::1] best_Q, double* best_f, bint* converged) noexcept nogil:
    # accelerated projected gradient with function-value restarts
    cdef Py_ssize_t R = X.shape[0], k = X.shape[1], ny = p.shape[1]
    cdef Py_ssize_t r, i
    cdef double[:, ::1] Y, Xn, V, gy, Gs, J, Lg
    cdef double[::1] ph, py, shifted, work, history
    cdef double fx, fy, fn, tk = 1.0, tn, L = 1.0 / step
    cdef long t = 0
    with gil:
        Y = np.array(X)
        Xn = np.empty((R, k))
        V = np.empty((R, k))
        gy = np.empty((R, k))
        Gs = np.empty((R, k))
        J = np.empty((k, ny))
        Lg = np.empty((k, ny))
        ph = np.empty(k)
        py = np.empty(ny)
        shifted = np.empty(k)
        work = np.empty(k)
        history = np.empty(max_iters + 1)
    fx = _mi_value_grad(p, X, J, Lg, gy, &ph[0], &py[0])
    best_f[0] = fx
    best_Q[:, :] = X
    history[0] = fx
    while t < max_iters:
        t += 1
        fy = _mi_value_grad(p, Y, J, Lg, gy, &ph[0], &py[0])
        _mi_step(p, c, budget, Y, gy, fy, &L, V, Xn, J, Lg, Gs, &ph[0], &py[0], &shifted[0], &work[0], &fn)
        if fn > fx:
            Y[:, :] = X
            tk = 1.0
            fy = _mi_value_grad(p, Y, J, Lg, gy, &ph[0], &py[0])
            _mi_step(p, c, budget, Y, gy, fy, &L, V, Xn, J, Lg, Gs, &ph[0], &py[0], &shifted[0], &work[0], &fn)
        tn = 0.5 * (1.0 + sqrt(1.0 + 4.0 * tk * tk))
        for r in range(R):
            for i in range(k):
                Y[r, i] = Xn[r, i] + ((tk - 1.0) / tn) * (Xn[r, i] - X[r, i])
                X[r, i] = Xn[r, i]
        fx = fn
        tk = tn
        L *= 0.9
        if fx < best_f[0]:
            best_f[0] = fx
            best_Q[:, :] = X
        history[t] = best_f[0]
        if t >= patience and history[t - patience] - best_f[0] < tol:
            converged[0] = True
            break
    return t


def pgd_solve(P, C, double budget, int objective, double step, long max_iters,
              double tol, long patience, Q0, double tau0=1e-2, double tau_min=1e-8):
    """Projected descent; see ``_fallback.pgd_solve`` for the contract."""
    cdef const double[:, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef Py_ssize_t R = c.shape[0], k = c.shape[1], ny = p.shape[1]
    cdef Py_ssize_t r, i
    cdef double[:, ::1] Q = np.empty((R, k))
    cdef double[:, ::1] Qn = np.empty((R, k))
    cdef double[:, ::1] V = np.empty((R, k))
    cdef double[:, ::1] G = np.empty((R, k))
    cdef double[:, ::1] Gn = np.empty((R, k))
    best = np.empty((R, k))
    cdef double[:, ::1] best_Q = best
    cdef double[:, ::1] J = np.empty((k, ny))
    cdef double[:, ::1] L = np.empty((k, ny))
    cdef double[::1] ph = np.empty(k)
    cdef double[::1] py = np.empty(ny)
    cdef double[::1] shifted = np.empty(k)
    cdef double[::1] work = np.empty(k)
    cdef double[::1] history = np.empty(max_iters + 1)
    cdef double f, fn, hard, hardn, best_f, alpha = step, a, gnorm, lin, sq, d
    cdef double tau = tau0
    cdef long t = 0, stage_start = 0
    cdef int halvings
    cdef bint converged = False, smooth = objective == MAP_SMOOTH, accepted
    cdef const double[:, ::1] q0 = np.ascontiguousarray(Q0, dtype=np.float64)

    if objective == MI:
        with nogil:
            _proj_feasible(q0, c, budget, Q, &shifted[0], &work[0])
            t = _fista_mi(p, c, budget, step, max_iters, tol, patience, Q, best_Q, &best_f, &converged)
        return best, best_f, t, bool(converged)

    with nogil:
        _proj_feasible(q0, c, budget, Q, &shifted[0], &work[0])
        f = _eval(objective, p, Q, tau, J, L, G, &ph[0], &py[0], &hard)
        best_f = hard
        best_Q[:, :] = Q
        history[0] = best_f
        while t < max_iters:
            t += 1
            if objective == MAP:
                gnorm = 0.0
                for r in range(R):
                    for i in range(k):
                        gnorm += G[r, i] * G[r, i]
                a = step / (sqrt(<double>t) * fmax(sqrt(gnorm), 1e-300))
                for r in range(R):
                    for i in range(k):
                        V[r, i] = Q[r, i] - a * G[r, i]
                _proj_feasible(V, c, budget, Qn, &shifted[0], &work[0])
                fn = _eval(objective, p, Qn, tau, J, L, Gn, &ph[0], &py[0], &hardn)
            else:
                # Armijo backtracking on the projection arc
                for halvings in range(80):
                    for r in range(R):
                        for i in range(k):
                            V[r, i] = Q[r, i] - alpha * G[r, i]
                    _proj_feasible(V, c, budget, Qn, &shifted[0], &work[0])
                    fn = _eval(objective, p, Qn, tau, J, L, Gn, &ph[0], &py[0], &hardn)
                    lin = 0.0
                    sq = 0.0
                    for r in range(R):
                        for i in range(k):
                            d = Qn[r, i] - Q[r, i]
                            lin += G[r, i] * d
                            sq += d * d
                    if fn <= f + lin + sq / (2.0 * alpha) + 1e-15:
                        break
                    alpha *= 0.5
                alpha *= 1.5
            Q[:, :] = Qn
            G[:, :] = Gn
            d = f - fn
            f = fn
            hard = hardn
            if hard < best_f:
                best_f = hard
                best_Q[:, :] = Q
            history[t] = best_f
            if smooth:
                if d < tol * tau or t - stage_start >= max_iters // 8:
                    if tau <= tau_min:
                        converged = d < tol * tau
                        break
                    tau = fmax(tau * 0.1, tau_min)
                    stage_start = t
                    alpha = step
                    f = _eval(objective, p, Q, tau, J, L, G, &ph[0], &py[0], &hard)
            elif t >= patience and history[t - patience] - best_f < tol:
                converged = True
                break
    return best, best_f, t, bool(converged)


cdef double _grid_objective(const double* J, const double* py, int k, int ny, int loss) noexcept nogil:
    cdef int h, y
    cdef double f = 0.0, m, phv, jv, denom
    if loss == MAP:
        for h in range(k):
            m = J[h * ny]
            for y in range(1, ny):
                if J[h * ny + y] > m:
                    m = J[h * ny + y]
            f += m
        return f
    for h in range(k):
        phv = 0.0
        for y in range(ny):
            phv += J[h * ny + y]
        for y in range(ny):
            jv = J[h * ny + y]
            denom = phv * py[y]
            if jv > 0 and denom > 0:
                f += jv * log2(jv / denom)
    return f


def grid_search(P, C, double budget, int n, int loss):
    from ._fallback import simplex_grid

    cdef const double[:, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef int nx = p.shape[0], ny = p.shape[1]
    cdef int R = c.shape[0], k = c.shape[1]
    grid_np = simplex_grid(k, n)
    cdef double[:, ::1] G = grid_np
    cdef int m = G.shape[0]
    cdef double[:, ::1] row_dist = np.ascontiguousarray(np.asarray(c) @ grid_np.T)
    cdef double[::1] p_rows = np.array(np.asarray(p).ravel())
    cdef double[::1] py = np.array(np.asarray(p).sum(axis=0))
    # partial[r] holds the released joint after fixing rows < r
    cdef double[:, ::1] partial = np.zeros((R + 1, k * ny))
    cdef double[::1] pdist = np.zeros(R + 1)
    cdef long[::1] idx = np.zeros(R, dtype=np.int64)
    cdef long[::1] best_idx = np.zeros(R, dtype=np.int64)
    cdef double best_f = INFINITY, f, thresh = budget + 1e-12
    cdef long n_feasible = 0
    cdef int r, h, y, level
    cdef bint found = False
    cdef bint descend

    with nogil:
        level = 0
        idx[0] = 0
        while level >= 0:
            if idx[level] >= m:
                level -= 1
                if level >= 0:
                    idx[level] += 1
                continue
            r = level
            y = r % ny
            pdist[r + 1] = pdist[r] + row_dist[r, idx[r]]
            if pdist[r + 1] > thresh:
                idx[level] += 1
                continue
            for h in range(k * ny):
                partial[r + 1, h] = partial[r, h]
            for h in range(k):
                partial[r + 1, h * ny + y] += p_rows[r] * G[idx[r], h]
            if level == R - 1:
                n_feasible += 1
                f = _grid_objective(&partial[R, 0], &py[0], k, ny, loss)
                if f < best_f:
                    best_f = f
                    best_idx[:] = idx
                    found = True
                idx[level] += 1
            else:
                level += 1
                idx[level] = 0
    if not found:
        return None, np.inf, 0
    return grid_np[np.asarray(best_idx)], best_f, n_feasible
