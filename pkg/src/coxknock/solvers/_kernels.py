"""Compiled coordinate-descent kernels.

Two solvers live here:

* ``gaussian_path`` works in covariance mode on a precomputed Gram matrix of
  the centered design, so each coordinate update costs O(q).
* ``irls_path`` handles the Cox (Breslow) and reference-coded multinomial
  likelihoods with a proximal-Newton outer loop: a diagonal quadratic model
  in the linear predictor is minimized by cyclic coordinate descent and the
  resulting direction is accepted with an Armijo backtracking search.

Everything is mean-scaled (losses divided by n) and penalized by
``lam * sum(|beta|)``.  Rows passed to the Cox kernel must be sorted by
time in ascending order, with ``tie_start[i]`` the first index of row i's
tie group.
"""
import numpy as np
from numba import njit

COX = 0
MULTINOMIAL = 1
GAUSSIAN = 2

OK = 0
LINE_SEARCH_FAILED = 1
NOT_FINITE = 2


@njit(cache=True)
def soft_threshold(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def cox_loss_grad(eta, event, tie_start):
    """Breslow negative log partial likelihood / n, its gradient in eta and
    the diagonal of its Hessian in eta."""
    n = eta.shape[0]
    m = eta.max()
    e = np.exp(eta - m)
    rs = np.empty(n)
    acc = 0.0
    for i in range(n - 1, -1, -1):
        acc += e[i]
        rs[i] = acc
    c1 = np.zeros(n)
    c2 = np.zeros(n)
    loss = 0.0
    for i in range(n):
        if event[i] > 0:
            r = rs[tie_start[i]]
            loss -= eta[i] - m - np.log(r)
            c1[tie_start[i]] += 1.0 / r
            c2[tie_start[i]] += 1.0 / (r * r)
    g = np.empty(n)
    w = np.empty(n)
    a = 0.0
    b = 0.0
    for k in range(n):
        a += c1[k]
        b += c2[k]
        ea = e[k] * a
        g[k] = (ea - event[k]) / n
        w[k] = (ea - e[k] * e[k] * b) / n
    return loss / n, g, w


@njit(cache=True)
def cox_loss(eta, event, tie_start):
    n = eta.shape[0]
    m = eta.max()
    acc = 0.0
    rs = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc += np.exp(eta[i] - m)
        rs[i] = acc
    loss = 0.0
    for i in range(n):
        if event[i] > 0:
            loss -= eta[i] - m - np.log(rs[tie_start[i]])
    return loss / n


@njit(cache=True)
def _logistic_loss_grad(eta, Y):
    n = eta.shape[0]
    g = np.empty((n, 1))
    w = np.empty((n, 1))
    loss = 0.0
    for i in range(n):
        e = eta[i, 0]
        z = np.exp(-abs(e))
        # log(1 + exp(e)) and the fitted probability, overflow-free
        if e > 0.0:
            loss += e + np.log1p(z) - Y[i, 0] * e
            p = 1.0 / (1.0 + z)
        else:
            loss += np.log1p(z) - Y[i, 0] * e
            p = z / (1.0 + z)
        g[i, 0] = (p - Y[i, 0]) / n
        w[i, 0] = max(p * (1.0 - p), 1e-10) / n
    return loss / n, g, w


@njit(cache=True)
def multinomial_loss_grad(eta, Y):
    """Reference-coded multinomial: eta and Y are n x (L-1); the reference
    class has linear predictor 0."""
    n, K = eta.shape
    if K == 1:
        return _logistic_loss_grad(eta, Y)
    g = np.empty((n, K))
    w = np.empty((n, K))
    loss = 0.0
    for i in range(n):
        mx = 0.0
        for k in range(K):
            if eta[i, k] > mx:
                mx = eta[i, k]
        s = np.exp(-mx)
        for k in range(K):
            s += np.exp(eta[i, k] - mx)
        lse = mx + np.log(s)
        loss += lse
        for k in range(K):
            loss -= Y[i, k] * eta[i, k]
            p = np.exp(eta[i, k] - lse)
            g[i, k] = (p - Y[i, k]) / n
            w[i, k] = max(p * (1.0 - p), 1e-10) / n
    return loss / n, g, w


@njit(cache=True)
def multinomial_loss(eta, Y):
    n, K = eta.shape
    loss = 0.0
    if K == 1:
        for i in range(n):
            e = eta[i, 0]
            loss += max(e, 0.0) + np.log1p(np.exp(-abs(e))) - Y[i, 0] * e
        return loss / n
    for i in range(n):
        mx = 0.0
        for k in range(K):
            if eta[i, k] > mx:
                mx = eta[i, k]
        s = np.exp(-mx)
        for k in range(K):
            s += np.exp(eta[i, k] - mx)
        loss += mx + np.log(s)
        for k in range(K):
            loss -= Y[i, k] * eta[i, k]
    return loss / n


@njit(cache=True)
def _loss_grad(family, eta, Y, event, tie_start):
    if family == COX:
        loss, g1, w1 = cox_loss_grad(eta[:, 0], event, tie_start)
        return loss, g1.reshape((-1, 1)), w1.reshape((-1, 1))
    return multinomial_loss_grad(eta, Y)


@njit(cache=True)
def _loss(family, eta, Y, event, tie_start):
    if family == COX:
        return cox_loss(eta[:, 0], event, tie_start)
    return multinomial_loss(eta, Y)


@njit(cache=True)
def _linear_predictor(X, B, b0):
    eta = X @ B
    for k in range(B.shape[1]):
        eta[:, k] += b0[k]
    return eta


@njit(cache=True)
def _l1(B):
    s = 0.0
    for j in range(B.shape[0]):
        for k in range(B.shape[1]):
            s += abs(B[j, k])
    return s


@njit(cache=True)
def _cholesky_solve(A, b):
    """Solve A x = b for symmetric positive definite A.  Returns (ok, x);
    ok is False when a pivot is tiny relative to the diagonal."""
    m = A.shape[0]
    L = np.zeros((m, m))
    scale = 0.0
    for a in range(m):
        scale = max(scale, A[a, a])
    for a in range(m):
        for c in range(a + 1):
            s = A[a, c]
            for t in range(c):
                s -= L[a, t] * L[c, t]
            if a == c:
                if s <= 1e-10 * scale:
                    return False, b
                L[a, a] = np.sqrt(s)
            else:
                L[a, c] = s / L[c, c]
    y = np.empty(m)
    for a in range(m):
        s = b[a]
        for t in range(a):
            s -= L[a, t] * y[t]
        y[a] = s / L[a, a]
    x = np.empty(m)
    for a in range(m - 1, -1, -1):
        s = y[a]
        for t in range(a + 1, m):
            s -= L[t, a] * x[t]
        x[a] = s / L[a, a]
    return True, x


@njit(cache=True)
def _newton_polish(G, r, beta, lam, off):
    """Jump to the minimizer of the quadratic restricted to the current
    support and sign pattern, when that keeps every sign.

    Coordinate descent crawls when active columns are nearly collinear
    (e.g. dummies of one factor next to the intercept); this direct step
    removes the crawl.  ``r`` is the gradient of the smooth part at
    ``beta``.  Rejected steps leave everything untouched."""
    size = beta.shape[0]
    idx = np.empty(size, dtype=np.int64)
    m = 0
    for a in range(size):
        if a < off or beta[a] != 0.0:
            idx[m] = a
            m += 1
    if m == 0:
        return
    A = np.empty((m, m))
    rhs = np.empty(m)
    for i in range(m):
        a = idx[i]
        pen = 0.0
        if a >= off:
            pen = lam if beta[a] > 0.0 else -lam
        rhs[i] = -(r[a] + pen)
        for c in range(m):
            A[i, c] = G[a, idx[c]]
    ok, delta = _cholesky_solve(A, rhs)
    if not ok:
        return
    for i in range(m):
        a = idx[i]
        if a >= off and (beta[a] + delta[i]) * beta[a] <= 0.0:
            return
    for i in range(m):
        a = idx[i]
        beta[a] += delta[i]
        for b in range(size):
            r[b] += G[b, a] * delta[i]


@njit(cache=True)
def _quadratic_lasso(G, r, beta, lam, off, inner_tol, max_sweeps):
    """Covariance-mode coordinate descent on 0.5 d'Gd + r'd + lam |beta+d|_1
    (the first ``off`` coordinates unpenalized), updating beta and the
    gradient r in place.  Returns the number of sweeps."""
    size = beta.shape[0]
    sweeps = 0
    while sweeps < max_sweeps:
        if sweeps > 0 and sweeps % 8 == 0:
            _newton_polish(G, r, beta, lam, off)
        dmax = 0.0
        for a in range(size):
            h = G[a, a]
            if h <= 0.0:
                continue
            old = beta[a]
            if a < off:
                new = old - r[a] / h
            else:
                new = soft_threshold(h * old - r[a], lam) / h
            d = new - old
            if d != 0.0:
                beta[a] = new
                for b in range(size):
                    r[b] += G[b, a] * d
                dmax = max(dmax, h * d * d)
        sweeps += 1
        if dmax <= inner_tol:
            break
    return sweeps


@njit(cache=True)
def _cox_hessian(Z, eta, event, tie_start):
    """Exact Hessian of the Breslow loss / n with respect to the
    coefficients of the columns of Z (n x m, rows sorted by time)."""
    n, m = Z.shape
    mx = eta.max()
    e = np.exp(eta - mx)
    rs = np.empty(n)
    acc = 0.0
    for i in range(n - 1, -1, -1):
        acc += e[i]
        rs[i] = acc
    c1 = np.zeros(n)
    n_ev = 0
    for i in range(n):
        if event[i] > 0:
            c1[tie_start[i]] += 1.0 / rs[tie_start[i]]
            n_ev += 1
    # first term: sum_l e_l a_l z_l z_l' with a_l the running sum of 1/S
    ea = np.empty(n)
    a = 0.0
    for l in range(n):
        a += c1[l]
        ea[l] = e[l] * a
    Zw = np.empty((m, n))
    for l in range(n):
        for j in range(m):
            Zw[j, l] = Z[l, j] * ea[l]
    H = Zw @ Z
    # second term: per event, the risk-set mean outer product
    C = np.zeros((n, m))
    run = np.zeros(m)
    for l in range(n - 1, -1, -1):
        for j in range(m):
            run[j] += e[l] * Z[l, j]
            C[l, j] = run[j]
    V = np.empty((n_ev, m))
    t = 0
    for i in range(n):
        if event[i] > 0:
            r0 = tie_start[i]
            for j in range(m):
                V[t, j] = C[r0, j] / rs[r0]
            t += 1
    H -= V.T @ V
    return H / n


@njit(cache=True)
def _scores(X, g):
    """X'g per column and class, and the intercept scores."""
    S = X.T @ g
    K = g.shape[1]
    s0 = np.zeros(K)
    for k in range(K):
        for i in range(g.shape[0]):
            s0[k] += g[i, k]
    return S, s0


@njit(cache=True)
def _kkt_violation(S, s0, B, lam, xnorm, fit_intercept):
    """Largest KKT violation, each score scaled by its column's RMS."""
    q, K = B.shape
    worst = 0.0
    for k in range(K):
        if fit_intercept:
            worst = max(worst, abs(s0[k]))
        for j in range(q):
            if xnorm[j] == 0.0:
                continue
            s = -S[j, k]
            b = B[j, k]
            if b == 0.0:
                v = abs(s) - lam
            elif b > 0.0:
                v = abs(s - lam)
            else:
                v = abs(s + lam)
            worst = max(worst, v / xnorm[j])
    return worst


@njit(cache=True)
def _newton_direction(family, X, eta, event, tie_start, g, w, S, s0, B, b0, lam,
                      fit_intercept, inner_tol, max_sweeps, Bn, bn):
    """Minimize the second-order model of the loss plus the penalty over a
    working set (nonzero or KKT-violating coefficients), writing the
    minimizer into Bn, bn.  Classes are decoupled: each gets its own exact
    Hessian block (Cox and two-class cases are exact Newton steps)."""
    n, q = X.shape
    K = B.shape[1]
    off = 1 if fit_intercept else 0
    sweeps = 0
    for k in range(K):
        cols = np.empty(q, dtype=np.int64)
        m = 0
        for j in range(q):
            if B[j, k] != 0.0 or abs(S[j, k]) > lam:
                cols[m] = j
                m += 1
        size = m + off
        if size == 0:
            continue
        Z = np.empty((n, size))
        for i in range(n):
            if fit_intercept:
                Z[i, 0] = 1.0
            for a in range(m):
                Z[i, a + off] = X[i, cols[a]]
        if family == COX:
            G = _cox_hessian(Z, eta[:, 0], event, tie_start)
        else:
            Zw = np.empty((size, n))
            for i in range(n):
                for a in range(size):
                    Zw[a, i] = Z[i, a] * w[i, k]
            G = Zw @ Z
        beta = np.empty(size)
        r = np.empty(size)
        if fit_intercept:
            beta[0] = b0[k]
            r[0] = s0[k]
        for a in range(m):
            beta[a + off] = B[cols[a], k]
            r[a + off] = S[cols[a], k]
        sweeps = max(sweeps, _quadratic_lasso(G, r, beta, lam, off, inner_tol, max_sweeps))
        if fit_intercept:
            bn[k] = beta[0]
        for a in range(m):
            Bn[cols[a], k] = beta[a + off]
    return sweeps


@njit(cache=True)
def column_rms(X):
    n, q = X.shape
    xnorm = np.empty(q)
    for j in range(q):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        xnorm[j] = np.sqrt(s / n)
    return xnorm


@njit(cache=True)
def irls_fit(family, X, Y, event, tie_start, lam, B, b0, fit_intercept,
             tol, max_sweeps):
    return _irls_fit(family, X, column_rms(X), Y, event, tie_start, lam, B, b0,
                     fit_intercept, tol, max_sweeps)


@njit(cache=True)
def _irls_fit(family, X, xnorm, Y, event, tie_start, lam, B, b0, fit_intercept,
              tol, max_sweeps):
    """Fit at a single penalty by proximal Newton, updating B and b0 in place.

    Converged means the relative objective change of the last outer step is
    below ``tol`` and every KKT condition holds to ``tol`` (scores measured
    per unit column RMS).  Returns (status, converged, sweeps_used)."""
    n, q = X.shape
    K = B.shape[1]
    eta = _linear_predictor(X, B, b0)
    loss, g, w = _loss_grad(family, eta, Y, event, tie_start)
    S, s0 = _scores(X, g)
    F = loss + lam * _l1(B)
    sweeps = 0
    while sweeps < max_sweeps:
        if not np.isfinite(F):
            return NOT_FINITE, False, sweeps
        Bn = B.copy()
        bn = b0.copy()
        inner_tol = (tol * max(abs(F), 1e-12)) ** 2
        sweeps += 1 + _newton_direction(family, X, eta, event, tie_start, g, w, S, s0, B, b0,
                                        lam, fit_intercept, inner_tol, max_sweeps - sweeps, Bn, bn)
        D = Bn - B
        db = bn - b0
        deta = _linear_predictor(X, D, db)
        delta = 0.0
        for i in range(n):
            for k in range(K):
                delta += g[i, k] * deta[i, k]
        pen_old = lam * _l1(B)
        delta += lam * _l1(Bn) - pen_old
        if delta >= 0.0:
            return OK, _kkt_violation(S, s0, B, lam, xnorm, fit_intercept) <= tol, sweeps
        t = 1.0
        accepted = False
        Ft = F
        # the full step is usually accepted, so its gradient is computed
        # along with the loss and reused
        gt, wt = g, w
        while t > 1e-12:
            Bt = B + t * D
            bt = b0 + t * db
            if t == 1.0:
                lt, gt, wt = _loss_grad(family, eta + deta, Y, event, tie_start)
            else:
                lt = _loss(family, eta + t * deta, Y, event, tie_start)
            Ft = lt + lam * _l1(Bt)
            if np.isfinite(Ft) and Ft <= F + 1e-4 * t * delta:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # Armijo cannot certify progress below float resolution.
            if abs(delta) <= 1e-15 * max(abs(F), 1.0):
                return OK, _kkt_violation(S, s0, B, lam, xnorm, fit_intercept) <= tol, sweeps
            return LINE_SEARCH_FAILED, False, sweeps
        B[:, :] = Bt
        b0[:] = bt
        eta = eta + t * deta
        if t == 1.0:
            g, w = gt, wt
            F = Ft
        else:
            loss, g, w = _loss_grad(family, eta, Y, event, tie_start)
            F = loss + lam * _l1(B)
        S, s0 = _scores(X, g)
        if _kkt_violation(S, s0, B, lam, xnorm, fit_intercept) <= tol:
            return OK, True, sweeps
    return OK, False, sweeps


@njit(cache=True)
def irls_path(family, X, Y, event, tie_start, lambdas, B_init, b0_init,
              fit_intercept, tol, max_sweeps, stop_when_all_active, saturation_stop):
    """Warm-started fits over ``lambdas``.

    With ``saturation_stop`` the path ends early once the fraction of null
    deviance explained exceeds 0.999 or (after five grid points) grows by
    less than a relative 1e-5 between grid points; beyond that point the
    fits approach separation and only burn iterations."""
    L = lambdas.shape[0]
    q, K = B_init.shape
    coefs = np.zeros((L, q, K))
    intercepts = np.zeros((L, K))
    converged = np.zeros(L, dtype=np.bool_)
    status = np.zeros(L, dtype=np.int64)
    B = B_init.copy()
    b0 = b0_init.copy()
    entered = np.zeros(q, dtype=np.bool_)
    n_entered = 0
    done = L
    xnorm = column_rms(X)
    null_loss = _loss(family, _linear_predictor(X, B, b0), Y, event, tie_start)
    ratio_prev = 0.0
    for li in range(L):
        st, conv, _ = _irls_fit(family, X, xnorm, Y, event, tie_start, lambdas[li], B, b0,
                                fit_intercept, tol, max_sweeps)
        coefs[li] = B
        intercepts[li] = b0
        converged[li] = conv
        status[li] = st
        if st != OK:
            # restart the next grid point from the last good state
            if li > 0:
                B[:, :] = coefs[li - 1]
                b0[:] = intercepts[li - 1]
        for j in range(q):
            if not entered[j]:
                for k in range(K):
                    if B[j, k] != 0.0:
                        entered[j] = True
                        n_entered += 1
                        break
        if stop_when_all_active and n_entered == q:
            done = li + 1
            break
        if saturation_stop and null_loss > 0.0:
            ratio = 1.0 - _loss(family, _linear_predictor(X, B, b0), Y, event, tie_start) / null_loss
            if ratio > 0.999 or (li >= 5 and ratio - ratio_prev < 1e-5 * ratio):
                done = li + 1
                break
            ratio_prev = ratio
    return coefs[:done], intercepts[:done], converged[:done], status[:done]


@njit(cache=True)
def gaussian_fit(G, c, lam, beta, tol_step, max_sweeps):
    """Covariance-mode lasso at one penalty: minimizes
    0.5 b'Gb - c'b + lam |b|_1 in place.  Returns (converged, sweeps)."""
    q = G.shape[0]
    r = c - G @ beta
    sweeps = 0
    while sweeps < max_sweeps:
        dmax = 0.0
        for j in range(q):
            h = G[j, j]
            if h <= 0.0:
                continue
            old = beta[j]
            new = soft_threshold(r[j] + h * old, lam) / h
            d = new - old
            if d != 0.0:
                beta[j] = new
                for l in range(q):
                    r[l] -= G[l, j] * d
                dmax = max(dmax, h * d * d)
        sweeps += 1
        if dmax <= tol_step:
            return True, sweeps
        while sweeps < max_sweeps:
            dmax = 0.0
            for j in range(q):
                if beta[j] == 0.0:
                    continue
                h = G[j, j]
                old = beta[j]
                new = soft_threshold(r[j] + h * old, lam) / h
                d = new - old
                if d != 0.0:
                    beta[j] = new
                    for l in range(q):
                        r[l] -= G[l, j] * d
                    dmax = max(dmax, h * d * d)
            sweeps += 1
            if dmax <= tol_step:
                break
    return False, sweeps


@njit(cache=True)
def gaussian_path(G, c, half_yy, lambdas, beta_init, tol, max_sweeps,
                  stop_when_all_active):
    L = lambdas.shape[0]
    q = G.shape[0]
    coefs = np.zeros((L, q))
    converged = np.zeros(L, dtype=np.bool_)
    beta = beta_init.copy()
    entered = np.zeros(q, dtype=np.bool_)
    n_entered = 0
    done = L
    for li in range(L):
        lam = lambdas[li]
        # objective is at most half_yy + lam*|b| near the path, use it as scale
        scale = max(half_yy, 1e-12)
        conv, _ = gaussian_fit(G, c, lam, beta, (tol * scale) ** 2, max_sweeps)
        coefs[li] = beta
        converged[li] = conv
        for j in range(q):
            if not entered[j] and beta[j] != 0.0:
                entered[j] = True
                n_entered += 1
        if stop_when_all_active and n_entered == q:
            done = li + 1
            break
    return coefs[:done], converged[:done]
