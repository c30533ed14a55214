"""Independent reference implementations used by the tests.

Each oracle is written from the definition with plain loops or a different
numerical route (SVD, scipy optimizers, quadrature) so it shares no code with
the package.
"""

import math

import numpy as np
from scipy import integrate, optimize


def ranks_by_sort(col):
    """1-based ranks of one price column; ties go to the smaller index."""
    order = sorted(range(len(col)), key=lambda i: (-col[i], i))
    u = [0] * len(col)
    for k, i in enumerate(order):
        u[i] = k + 1
    return u, [i + 1 for i in order]


def wealth_loop(pi, S):
    """X[k+1] = X[k] (1 + sum_i pi[i, k] (S[i, k+1] / S[i, k] - 1)) with scalar loops."""
    N, M = S.shape
    X = [1.0]
    for k in range(M - 1):
        r = 0.0
        for i in range(N):
            r += pi[i][k] * (S[i][k + 1] / S[i][k] - 1.0)
        X.append(X[-1] * (1.0 + r))
    return np.array(X)


def pinv_svd(m, rtol=1e-10):
    return np.linalg.pinv(m, rcond=rtol, hermitian=False)


def max_growth_numeric(alpha, c, mask):
    """sup_p p'alpha - p'cp/2 over p supported on ``mask``, by BFGS on the free coordinates."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return 0.0
    a = alpha[idx]
    cc = c[np.ix_(idx, idx)]

    def neg(p):
        return -(p @ a - 0.5 * p @ cc @ p)

    def grad(p):
        return -(a - cc @ p)

    res = optimize.minimize(neg, np.zeros(idx.size), jac=grad, method="BFGS", options={"gtol": 1e-12})
    return -res.fun


def tanaka_loop(y):
    """1/2 (|y_m| - |y_0| - sum sign(y_k) dy_k), sign(0) = -1, with a plain loop."""
    L = [0.0]
    acc = 0.0
    for k in range(len(y) - 1):
        s = 1.0 if y[k] > 0 else -1.0
        acc += s * (y[k + 1] - y[k])
        L.append(0.5 * (abs(y[k + 1]) - abs(y[0]) - acc))
    return np.array(L)


def universal_two_rank_quadrature(r1, r2):
    """int_0^1 prod_k (1 + xi r1[k] + (1 - xi) r2[k]) dxi for a deterministic two-rank market."""
    r1, r2 = np.asarray(r1), np.asarray(r2)

    def f(xi):
        return float(np.prod(1.0 + xi * r1 + (1.0 - xi) * r2))

    val, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12)
    return val


def factor_beta(loadings, factor_vol, idio_vol, mu_tilde):
    """Closed-form beta of each asset on the top-n market in a one-factor market.

    ``c_im / c_mm`` with ``c = fv^2 b b' + diag(idio^2)``, written out by hand.
    """
    b = np.asarray(loadings, dtype=float)
    idio2 = np.broadcast_to(np.asarray(idio_vol, dtype=float) ** 2, b.shape)
    out = np.zeros_like(mu_tilde)
    for k in range(mu_tilde.shape[1]):
        m = mu_tilde[:, k]
        bm = sum(b[j] * m[j] for j in range(b.size))
        cmm = factor_vol**2 * bm * bm + sum(idio2[j] * m[j] * m[j] for j in range(b.size))
        for i in range(b.size):
            if m[i] > 0:
                out[i, k] = (factor_vol**2 * b[i] * bm + idio2[i] * m[i]) / cmm
    return out


def finite_difference_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


EXPECTED_HALF_LOCAL_TIME = 1.0 / math.sqrt(2.0 * math.pi)  # E of 1/2 the symmetric local time of W at 1
EXPECTED_REFLECTED_LOCAL_TIME = math.sqrt(2.0 / math.pi)  # E |W(1)|
