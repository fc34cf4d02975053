"""Independent oracle implementations shared by unit and acceptance tests.

These deliberately avoid the code paths they check: AUC by explicit pair
counting, KL by Monte Carlo over numpy log-densities.
"""

import numpy as np


def brute_force_auc(scores, labels):
    """O(P*N) pair counting: full credit for correct order, half for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        total += float(np.sum(p > neg)) + 0.5 * float(np.sum(p == neg))
    return total / (len(pos) * len(neg))


def mc_kl(mean_q, log_var_q, mean_p, log_var_p, n, seed):
    """Monte Carlo KL(q||p) = E_q[log q(z) - log p(z)] for diagonal Gaussians."""
    rng = np.random.default_rng(seed)
    mq = np.asarray(mean_q, dtype=np.float64)
    lq = np.asarray(log_var_q, dtype=np.float64)
    mp_ = np.asarray(mean_p, dtype=np.float64)
    lp = np.asarray(log_var_p, dtype=np.float64)
    z = mq + np.exp(0.5 * lq) * rng.standard_normal((n, mq.shape[-1]))
    log_q = -0.5 * (np.log(2 * np.pi) + lq + (z - mq) ** 2 / np.exp(lq)).sum(axis=-1)
    log_p = -0.5 * (np.log(2 * np.pi) + lp + (z - mp_) ** 2 / np.exp(lp)).sum(axis=-1)
    return float(np.mean(log_q - log_p))
