"""Compiled scaled forward/backward loops used by :mod:`glanceseq.hmm`."""
import numba
import numpy as np


@numba.njit(cache=True)
def forward_loglik(pi, A, B, obs):
    n, t_len = obs.shape
    k = pi.shape[0]
    AT = np.ascontiguousarray(A.T)
    out = np.empty(n)
    alpha = np.empty(k)
    nxt = np.empty(k)
    for s in range(n):
        ll = 0.0
        c = 0.0
        for i in range(k):
            alpha[i] = pi[i] * B[i, obs[s, 0]]
            c += alpha[i]
        if c <= 0.0:
            out[s] = -np.inf
            continue
        ll += np.log(c)
        for i in range(k):
            alpha[i] /= c
        dead = False
        for t in range(1, t_len):
            o = obs[s, t]
            c = 0.0
            for j in range(k):
                acc = 0.0
                for i in range(k):
                    acc += alpha[i] * AT[j, i]
                nxt[j] = acc * B[j, o]
                c += nxt[j]
            if c <= 0.0:
                dead = True
                break
            ll += np.log(c)
            for j in range(k):
                alpha[j] = nxt[j] / c
        out[s] = -np.inf if dead else ll
    return out


@numba.njit(cache=True)
def expected_counts(pi, A, B, obs, weights):
    """Weighted total log-likelihood plus expected initial/transition/emission counts.

    ``weights[s]`` is the multiplicity of sequence ``s``.
    Returns ``-inf`` as the total (and unusable counts) if any sequence is
    impossible under the model.
    """
    n, t_len = obs.shape
    k = pi.shape[0]
    n_obs = B.shape[1]
    AT = np.ascontiguousarray(A.T)
    pi_c = np.zeros(k)
    a_c = np.zeros((k, k))
    b_c = np.zeros((k, n_obs))
    alpha = np.empty((t_len, k))
    beta = np.empty((t_len, k))
    c = np.empty(t_len)
    w = np.empty(k)
    total = 0.0
    for s in range(n):
        ws = weights[s]
        o0 = obs[s, 0]
        ct = 0.0
        for i in range(k):
            alpha[0, i] = pi[i] * B[i, o0]
            ct += alpha[0, i]
        if ct <= 0.0:
            return -np.inf, pi_c, a_c, b_c
        c[0] = ct
        for i in range(k):
            alpha[0, i] /= ct
        for t in range(1, t_len):
            o = obs[s, t]
            ct = 0.0
            for j in range(k):
                acc = 0.0
                for i in range(k):
                    acc += alpha[t - 1, i] * AT[j, i]
                alpha[t, j] = acc * B[j, o]
                ct += alpha[t, j]
            if ct <= 0.0:
                return -np.inf, pi_c, a_c, b_c
            c[t] = ct
            for j in range(k):
                alpha[t, j] /= ct
        for t in range(t_len):
            total += ws * np.log(c[t])
        for i in range(k):
            beta[t_len - 1, i] = 1.0
        for t in range(t_len - 1, 0, -1):
            o = obs[s, t]
            for j in range(k):
                w[j] = B[j, o] * beta[t, j] / c[t]
            for i in range(k):
                acc = 0.0
                ai = alpha[t - 1, i]
                for j in range(k):
                    acc += A[i, j] * w[j]
                    a_c[i, j] += ws * ai * A[i, j] * w[j]
                beta[t - 1, i] = acc
        for t in range(t_len):
            o = obs[s, t]
            for i in range(k):
                g = ws * alpha[t, i] * beta[t, i]
                b_c[i, o] += g
                if t == 0:
                    pi_c[i] += g
    return total, pi_c, a_c, b_c
