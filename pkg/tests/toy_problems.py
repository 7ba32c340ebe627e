"""Small problem instances shared by several test modules."""

import numpy as np

from svrgpdfp.data import gen_graph_matrix, gen_synthetic_logistic, graph_guided_problem
from svrgpdfp.linops import Identity, Stacked
from svrgpdfp.objective import LeastSquares, RidgeLogistic
from svrgpdfp.prox import L1, Huber
from svrgpdfp.solvers import ProblemSpec


def graph_toy(huber=True, n=64, d=8, seed=1):
    """Ridge-logistic (0.01) plus a Huber or L1 graph penalty on ``[G; I]``, unit-norm rows."""
    ds = gen_synthetic_logistic(n, d, separation=1.0, noise=0.1, seed=seed, normalize=True)
    G = gen_graph_matrix(d, "chain")
    return graph_guided_problem(ds, G, ridge=0.01, weight=0.01,
                                huber_alpha=0.01 if huber else None)


def lasso_chain(n=64, d=8, seed=3, weight=0.05):
    """Least squares with a rank-deficient design plus ``weight * ||[G; I] x||_1``."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, 6)) @ rng.standard_normal((6, d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    x_true = np.array([0, 0, 1, 1, 1, 0, 0, -1], dtype=float)[:d]
    b = A @ x_true + 0.1 * rng.standard_normal(n)
    B = Stacked(gen_graph_matrix(d, "chain"))
    return ProblemSpec(LeastSquares(A, b), L1(B.out_dim, weight), B)


def prox_l1_problem(n=32, d=5, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return ProblemSpec(RidgeLogistic(A, y, 0.05), L1(d, 0.1), Identity(d))


def huber_identity_problem(n=32, d=5, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    return ProblemSpec(LeastSquares(A, rng.standard_normal(n)), Huber(d, 0.2, 0.1), Identity(d))


def soft_threshold(y, t):
    return np.sign(y) * np.maximum(np.abs(y) - t, 0.0)


def prox_svrg_oracle(p, gamma, m, stages, blocks):
    # x_{k+1} = Prox_{gamma g}(x_k - gamma * grad_hat), stage output = inner mean
    A, y, ridge, nu = p.f.A, p.f.b, p.f.ridge, p.g.weight

    def g_i(i, x):
        return -y[i] * A[i] / (1 + np.exp(y[i] * (A[i] @ x))) + 2 * ridge * x

    n = A.shape[0]
    x_tilde = np.zeros(A.shape[1])
    seq, it = [], iter(blocks)
    for _ in range(stages):
        z = sum(g_i(i, x_tilde) for i in range(n)) / n
        x, acc = x_tilde.copy(), np.zeros_like(x_tilde)
        for _ in range(m):
            i = next(it)
            x = soft_threshold(x - gamma * (g_i(i, x) - g_i(i, x_tilde) + z), gamma * nu)
            seq.append(x)
            acc += x
        x_tilde = acc / m
    return seq
