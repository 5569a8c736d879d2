"""Independent reference implementations used only by the tests.

Nothing here imports the package's tensor kernel; each oracle is a
straight-line transcription in plain Python / numpy so that agreement with
the package is evidence rather than tautology.
"""
from fractions import Fraction
import math

import numpy as np


# ------------------------------------------------------------------ eigen

def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi rotations on a small symmetric matrix.

    Returns (eigenvalues ascending, eigenvectors as columns).
    """
    a = [list(map(float, row)) for row in np.asarray(a)]
    n = len(a)
    v = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]
    for _ in range(max_sweeps):
        off = sum(a[i][j] ** 2 for i in range(n) for j in range(n) if i != j)
        if off < tol ** 2:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p][q]) < 1e-300:
                    continue
                theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q])
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp, akq = a[k][p], a[k][q]
                    a[k][p] = c * akp - s * akq
                    a[k][q] = s * akp + c * akq
                for k in range(n):
                    apk, aqk = a[p][k], a[q][k]
                    a[p][k] = c * apk - s * aqk
                    a[q][k] = s * apk + c * aqk
                for k in range(n):
                    vkp, vkq = v[k][p], v[k][q]
                    v[k][p] = c * vkp - s * vkq
                    v[k][q] = s * vkp + c * vkq
    vals = [a[i][i] for i in range(n)]
    order = sorted(range(n), key=lambda i: vals[i])
    vecs = np.array([[v[r][i] for i in order] for r in range(n)])
    return np.array([vals[i] for i in order]), vecs


def charpoly_exact(mat):
    """Characteristic polynomial coefficients (highest degree first) by
    Faddeev-LeVerrier over exact fractions."""
    a = [[Fraction(x) for x in row] for row in mat]
    n = len(a)
    coeffs = [Fraction(1)]
    m = [[Fraction(0)] * n for _ in range(n)]
    for k in range(1, n + 1):
        # M_k = A M_{k-1} + c_{n-k+1} I
        prev = [row[:] for row in m]
        for i in range(n):
            prev[i][i] += coeffs[-1]
        m = [[sum(a[i][t] * prev[t][j] for t in range(n)) for j in range(n)] for i in range(n)]
        c = -sum(m[i][i] for i in range(n)) / k
        coeffs.append(c)
    return coeffs


def poly_from_roots(roots):
    coeffs = [Fraction(1)]
    for r in roots:
        r = Fraction(r)
        nxt = coeffs + [Fraction(0)]
        for i in range(1, len(nxt)):
            nxt[i] -= r * coeffs[i - 1]
        coeffs = nxt
    return coeffs


# ------------------------------------------------------------------ STGM

def _mm(a, b):
    n, k, m = len(a), len(b), len(b[0])
    return [[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(m)] for i in range(n)]


def _tr(a):
    return [list(col) for col in zip(*a)]


def _softmax_rows(s):
    out = []
    for row in s:
        top = max(row)
        e = [math.exp(x - top) for x in row]
        z = sum(e)
        out.append([x / z for x in e])
    return out


def _add(a, b):
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def _scale(a, c):
    return [[x * c for x in row] for row in a]


def stgm_reference(x_pos, w_t, w_s, w_h, aq, ak, av, bq, bk, bv):
    """Four-stage matching written out with Python lists.

    alpha: queries from S_pos, keys/values from T_pos, scaled by 1/sqrt(D)
    beta:  queries from T_pos, keys/values from S_sgm, scaled
    gamma: softmax(S_sgm T_sgm^T) T_sgm, unscaled
    delta: softmax(T_sgm S_enh^T) S_enh + T_sgm, unscaled
    """
    x = np.asarray(x_pos).tolist()
    W = [np.asarray(w).tolist() for w in (w_t, w_s, w_h, aq, ak, av, bq, bk, bv)]
    w_t, w_s, w_h, aq, ak, av, bq, bk, bv = W
    D = len(w_t[0])
    c = 1.0 / math.sqrt(D)

    t_pos = _mm(x, w_t)
    s_pos = _mm(x, w_s)

    q = _mm(s_pos, aq)
    k = _mm(t_pos, ak)
    v = _mm(t_pos, av)
    a_alpha = _softmax_rows(_scale(_mm(q, _tr(k)), c))
    alpha_out = _mm(a_alpha, v)
    cat = [rs + ra for rs, ra in zip(s_pos, alpha_out)]
    s_sgm = _mm(cat, w_h)

    q = _mm(t_pos, bq)
    k = _mm(s_sgm, bk)
    v = _mm(s_sgm, bv)
    a_beta = _softmax_rows(_scale(_mm(q, _tr(k)), c))
    t_sgm = _add(_mm(a_beta, v), t_pos)

    a_gamma = _softmax_rows(_mm(s_sgm, _tr(t_sgm)))
    s_enh = _mm(a_gamma, t_sgm)

    a_delta = _softmax_rows(_mm(t_sgm, _tr(s_enh)))
    t_fused = _add(_mm(a_delta, s_enh), t_sgm)
    return np.array(t_fused)


# ------------------------------------------------------------------ LSTM

def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def lstm_step_reference(x, h, c, w_ih, w_hh, b):
    """Scalar-loop LSTM cell; gate blocks i, f, g, o along the 4H axis."""
    H = len(h)
    z = [b[j] + sum(x[i] * w_ih[i][j] for i in range(len(x))) + sum(h[i] * w_hh[i][j] for i in range(H))
         for j in range(4 * H)]
    h_new, c_new = [], []
    for u in range(H):
        i = _sig(z[u])
        f = _sig(z[H + u])
        g = math.tanh(z[2 * H + u])
        o = _sig(z[3 * H + u])
        cu = f * c[u] + i * g
        c_new.append(cu)
        h_new.append(o * math.tanh(cu))
    return np.array(h_new), np.array(c_new)


# ------------------------------------------------------------------ AdamW

def adamw_reference(p, g, m, v, step, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    """One scalar AdamW update; ``step`` is the 1-based step count."""
    p = p - lr * wd * p
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mh = m / (1 - b1 ** step)
    vh = v / (1 - b2 ** step)
    return p - lr * mh / (math.sqrt(vh) + eps), m, v


# ------------------------------------------------------------------ misc

def abs_normal_mean_mc(sigma, n=2_000_000, seed=123):
    """Monte-Carlo estimate of E|N(0, sigma^2)|."""
    return float(np.abs(np.random.default_rng(seed).normal(0.0, sigma, n)).mean())


def best_lag(a, b, max_lag):
    """Lag L in [-max_lag, max_lag] maximizing corr(a[t], b[t + L])."""
    best, best_c = None, -np.inf
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            x, y = a[:len(a) - lag], b[lag:]
        else:
            x, y = a[-lag:], b[:len(b) + lag]
        c = np.corrcoef(x, y)[0, 1]
        if c > best_c:
            best, best_c = lag, c
    return best
