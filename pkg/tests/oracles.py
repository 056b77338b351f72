"""Independent, deliberately naive reference implementations used by the tests."""

import numpy as np


def triples(mdp, pi_b, xi):
    """Yield ``(prob, s, a, s_next)`` for every positive-probability transition."""
    for s in range(mdp.num_states):
        for a in range(mdp.num_actions):
            for t in range(mdp.num_states):
                p = xi.weights[s] * pi_b.probs[s, a] * mdp.transition[s, a, t]
                if p > 0:
                    yield p, s, a, t


def moments_by_loops(mdp, pi_b, pi, xi, basis):
    d = basis.dim
    A = np.zeros((d, d))
    b = np.zeros(d)
    C = np.zeros((d, d))
    for p, s, a, t in triples(mdp, pi_b, xi):
        rho = pi.probs[s, a] / pi_b.probs[s, a]
        phi, phin = basis.table[s], basis.table[t]
        A += p * rho * np.outer(phi, phi - mdp.gamma * phin)
        b += p * rho * mdp.reward[s, a] * phi
    for s in range(mdp.num_states):
        C += xi.weights[s] * np.outer(basis.table[s], basis.table[s])
    return A, b, C


def value_iteration(mdp, pi, sweeps=10_000):
    V = np.zeros(mdp.num_states)
    for _ in range(sweeps):
        new = np.zeros_like(V)
        for s in range(mdp.num_states):
            for a in range(mdp.num_actions):
                new[s] += pi.probs[s, a] * (mdp.reward[s, a] + mdp.gamma * mdp.transition[s, a] @ V)
        V = new
    return V


def kernel_by_loops(mdp, pi):
    n = mdp.num_states
    K = np.zeros((n, n))
    for s in range(n):
        for a in range(mdp.num_actions):
            for t in range(n):
                K[s, t] += pi.probs[s, a] * mdp.transition[s, a, t]
    return K


def power_iteration(K, iters=200_000, tol=1e-15):
    x = np.full(K.shape[0], 1.0 / K.shape[0])
    lazy = 0.5 * (K + np.eye(K.shape[0]))
    for _ in range(iters):
        nxt = x @ lazy
        if np.abs(nxt - x).sum() < tol:
            return nxt
        x = nxt
    return x


def gram_schmidt_bebf(mdp, pi, xi, k):
    """BEBF via explicit projection matrices and classical Gram-Schmidt."""
    n = mdp.num_states
    w = xi.weights
    K = kernel_by_loops(mdp, pi)
    R = np.array([pi.probs[s] @ mdp.reward[s] for s in range(n)])
    V = np.linalg.solve(np.eye(n) - mdp.gamma * K, R)
    Xi = np.diag(w)
    cols = [np.ones(n) / np.sqrt(w.sum())]
    while len(cols) < k:
        Phi = np.column_stack(cols)
        fit = Phi @ np.linalg.solve(Phi.T @ Xi @ Phi, Phi.T @ Xi @ V)
        e = R + mdp.gamma * K @ fit - fit
        e = e - Phi @ np.linalg.solve(Phi.T @ Xi @ Phi, Phi.T @ Xi @ e)
        nrm = np.sqrt(e @ Xi @ e)
        if nrm < 1e-12:
            break
        cols.append(e / nrm)
    return np.column_stack(cols)


def weighted_lstsq_projection(phi, w, g):
    Xi = np.diag(w)
    return phi @ np.linalg.solve(phi.T @ Xi @ phi, phi.T @ Xi @ g)


def _proj(x, R):
    n = np.linalg.norm(x)
    return x if n <= R else x * (R / n)


def solver_by_loops(variant, samples, phi_table, gamma, alpha, n, theta0, r_theta=np.inf, r_y=np.inf):
    """Scalar re-implementation of every solver variant; returns (theta, y, theta_bar, y_bar)."""
    theta = np.array(theta0, dtype=float)
    y = np.zeros_like(theta)
    ts, ys = np.zeros_like(theta), np.zeros_like(theta)
    for t in range(n):
        s, r, s2, rho = int(samples.s[t]), samples.r[t], int(samples.s_next[t]), samples.rho[t]
        phi, phin = phi_table[s], phi_table[s2]
        ts += alpha * theta
        ys += alpha * y

        def field(th, yy, identity):
            delta = r + gamma * phin @ th - phi @ th
            g_th = rho * (phi - gamma * phin) * (phi @ yy)
            g_y = rho * delta * phi - (yy if identity else phi * (phi @ yy))
            return g_th, g_y

        identity = variant in ("gtd", "gtd-proj")
        g_th, g_y = field(theta, y, identity)
        th_new = _proj(theta + alpha * g_th, r_theta)
        y_new = _proj(y + alpha * g_y, r_y)
        if variant == "gtd2-mp":
            g_th, g_y = field(th_new, y_new, False)
            th_new = _proj(theta + alpha * g_th, r_theta)
            y_new = _proj(y + alpha * g_y, r_y)
        theta, y = th_new, y_new
    return theta, y, ts / (alpha * n), ys / (alpha * n)
