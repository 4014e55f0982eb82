"""Hot numerical loops, jitted when numba is available.

Everything here is plain array math so the pure-Python fallback stays
correct, just slower.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


@njit(cache=True)
def renewal_tail(c, rt, g, n, seed_days, start, cum_start):
    """Recompute the latent renewal recursion in place from index `start`.

    c[i] (day i+1) = (S_i / n) * R_i * sum_j c[i-1-j] * g[j] with
    S_i = n - sum(c[:i]); seed days keep their pinned values. `cum_start`
    must equal sum(c[:start]). Updating only the tail is exact because the
    recursion never looks forward.
    """
    m_days = c.size
    cum = cum_start
    i = start
    while i < seed_days and i < m_days:
        cum += c[i]
        i += 1
    for idx in range(i, m_days):
        width = min(idx, g.size)
        hist = 0.0
        for j in range(width):
            hist += c[idx - 1 - j] * g[j]
        remaining = n - cum
        ci = (remaining / n) * rt[idx - 1] * hist
        if ci > remaining:
            ci = remaining
        c[idx] = ci
        cum += ci
    return cum


@njit(cache=True)
def _negbin_term(x, mu, k, const):
    """const + mu-dependent part of the NB log pmf; point mass at zero mean."""
    if mu <= 0.0:
        return 0.0 if x == 0.0 else -np.inf
    return const + k * (math.log(k) - math.log(k + mu)) - x * (math.log(k + mu) - math.log(mu))


@njit(cache=True)
def deaths_tail_loglik(c, pi, obs, ifr, nb_const, k, lead_in, j0):
    """Sum of NB death terms for observation indices >= j0 given latents c."""
    total = 0.0
    for j in range(j0, obs.size):
        e = lead_in + j  # 0-based extended index of the observation day
        width = min(e, pi.size)
        dm = 0.0
        for lag in range(1, width + 1):
            dm += c[e - lag] * pi[lag - 1]
        total += _negbin_term(obs[j], ifr[j] * dm, k, nb_const[j])
        if total == -np.inf:
            break
    return total


@njit(cache=True)
def deaths_total_loglik(c, rt, g, pi, obs, ifr, nb_const, k, n, seed_days, seed_level, lead_in):
    """Latent recursion plus NB death terms in one pass; c is a work buffer."""
    for i in range(seed_days):
        c[i] = seed_level
    renewal_tail(c, rt, g, n, seed_days, 0, 0.0)
    return deaths_tail_loglik(c, pi, obs, ifr, nb_const, k, lead_in, 0)


@njit(cache=True)
def deaths_label_sweep(
    zidx,
    c,
    rt,
    r_values,
    log_weights,
    g,
    pi,
    obs,
    ifr,
    nb_const,
    k,
    n,
    seed_days,
    lead_in,
    uniforms,
):
    """One ascending Gibbs sweep over day labels under the deaths likelihood.

    For each day the full conditional multiplies the phase-weight prior by
    the likelihood of every observation the label can still influence, which
    requires recomputing the latent recursion from that day onward per
    candidate. zidx (0-based labels), rt and c are updated in place.
    """
    m_days = c.size
    n_lab = r_values.size
    scratch = np.empty_like(c)
    logits = np.empty(n_lab)
    cum_pref = 0.0  # sum of c[:u]
    for u in range(m_days):
        start = u + 1
        j0 = u + 2 - lead_in
        if j0 < 0:
            j0 = 0
        if j0 >= obs.size or start >= m_days:
            # no observation depends on this label: conditional is the prior
            total = 0.0
            for m in range(n_lab):
                logits[m] = math.exp(log_weights[m])
                total += logits[m]
            target = uniforms[u] * total
            acc = 0.0
            pick = n_lab - 1
            for m in range(n_lab):
                acc += logits[m]
                if acc >= target:
                    pick = m
                    break
            zidx[u] = pick
            rt[u] = r_values[pick]
            cum_pref += c[u]
            continue
        cum_start = cum_pref + c[u]
        for m in range(n_lab):
            if log_weights[m] == -np.inf:
                logits[m] = -np.inf
                continue
            rt[u] = r_values[m]
            scratch[:] = c
            renewal_tail(scratch, rt, g, n, seed_days, start, cum_start)
            logits[m] = log_weights[m] + deaths_tail_loglik(
                scratch, pi, obs, ifr, nb_const, k, lead_in, j0
            )
        max_logit = -np.inf
        for m in range(n_lab):
            if logits[m] > max_logit:
                max_logit = logits[m]
        if max_logit == -np.inf:
            # every candidate is impossible; keep the current label
            rt[u] = r_values[zidx[u]]
            cum_pref += c[u]
            continue
        total = 0.0
        for m in range(n_lab):
            logits[m] = math.exp(logits[m] - max_logit)
            total += logits[m]
        target = uniforms[u] * total
        acc = 0.0
        pick = n_lab - 1
        for m in range(n_lab):
            acc += logits[m]
            if acc >= target:
                pick = m
                break
        zidx[u] = pick
        rt[u] = r_values[pick]
        scratch[:] = c
        renewal_tail(scratch, rt, g, n, seed_days, start, cum_start)
        c[:] = scratch
        cum_pref += c[u]
