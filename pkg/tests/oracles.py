"""Reference implementations used only by the tests.

They solve the same problems by deliberately different routes (SVD least
squares on an augmented system, exhaustive active-set enumeration) so that
agreement is evidence rather than repetition.
"""

import itertools

import numpy as np


def laplacian_by_definition(n):
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                out[i, j] = 1.0
            elif abs(i - j) == 1:
                out[i, j] = -0.5
    return out


def tikhonov_augmented(C, gamma, rgb):
    """argmin ||C I - rgb||^2 + ||gamma L I||^2 by SVD least squares on
    the stacked system [C; gamma L] I = [rgb; 0]."""
    n = C.shape[1]
    A = np.vstack([C, gamma * laplacian_by_definition(n)])
    b = np.concatenate([rgb, np.zeros(n)])
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    return sol


def objective(C, gamma, I, rgb):
    L = laplacian_by_definition(C.shape[1])
    r = C @ I - rgb
    p = gamma * (L @ I)
    return float(r @ r + p @ p)


def nnls_enumerate(gram, cross):
    """Minimum of 0.5 x'Gx - c'x over x >= 0 by trying every support set."""
    n = len(cross)
    best, best_x = np.inf, None
    for support in itertools.product((False, True), repeat=n):
        idx = np.flatnonzero(support)
        x = np.zeros(n)
        if idx.size:
            try:
                x[idx] = np.linalg.solve(gram[np.ix_(idx, idx)], cross[idx])
            except np.linalg.LinAlgError:
                continue
        if np.any(x < 0):
            continue
        val = 0.5 * x @ gram @ x - cross @ x
        if val < best:
            best, best_x = val, x
    return best_x, best


def nnls_objective(gram, cross, x):
    return float(0.5 * x @ gram @ x - cross @ x)


def r_squared(y, fit):
    ss_res = np.sum((y - fit) ** 2)
    ss_tot = np.sum((y - np.mean(y)) ** 2)
    return 1.0 - ss_res / ss_tot
