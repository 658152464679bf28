"""Compiled exhaustive search over balanced plans (vertex sets as bitmasks).

Regions are grown one at a time from the lowest unassigned vertex, so every
unlabelled plan is produced exactly once.  Connected vertex sets containing
that vertex are enumerated with the include/forbid recursion: each branch
either adds the next extension vertex or forbids it for the rest of the
branch.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ._core import laplacian_logdet

MAX_VERTICES = 63

# state slots
_NREG, _SEATS, _COUNT, _STORED = range(4)
# integer parameter slots
P_D, P_S, P_DMIN, P_DMAX, P_V, P_MODE, P_STOP_FIRST = range(7)
MODE_STORE = 0
MODE_HISTOGRAM = 1


@njit(cache=True)
def _lowest(mask):
    v = 0
    while not (mask >> v) & 1:
        v += 1
    return v


@njit(cache=True)
def _fits(p, s, lo, hi):
    tol = 1e-9 * max(1.0, s * hi)
    return p >= s * lo - tol and p <= s * hi + tol


@njit(cache=True)
def _decomposable(t, dmin, dmax):
    return t >= dmin and (t + dmax - 1) // dmax <= t // dmin


@njit(cache=True)
def _remainder_ok(R, nreg, seats, ip, pop, nbm, lo, hi):
    """Necessary conditions for completing the plan on the unassigned set ``R``."""
    D = ip[P_D]
    dmin = ip[P_DMIN]
    dmax = ip[P_DMAX]
    if R == 0:
        return nreg == D and seats == ip[P_S]
    Dr = D - nreg
    Sr = ip[P_S] - seats
    if Dr <= 0 or Sr <= 0:
        return False
    left = R
    tmin_sum = 0
    tmax_sum = 0
    dmin_sum = 0
    dmax_sum = 0
    while left != 0:
        v0 = _lowest(left)
        comp = np.int64(1) << v0
        frontier = comp
        while frontier != 0:
            nxt = np.int64(0)
            f = frontier
            while f != 0:
                u = _lowest(f)
                f &= ~(np.int64(1) << u)
                nxt |= nbm[u]
            nxt &= R & ~comp
            comp |= nxt
            frontier = nxt
        left &= ~comp
        c = 0.0
        m = comp
        while m != 0:
            u = _lowest(m)
            m &= ~(np.int64(1) << u)
            c += pop[u]
        tmin = -1
        tmax = -1
        kmin = 1 << 30
        kmax = -1
        for t in range(1, Sr + 1):
            if _decomposable(t, dmin, dmax) and _fits(c, t, lo, hi):
                if tmin < 0:
                    tmin = t
                tmax = t
                a = (t + dmax - 1) // dmax
                b = t // dmin
                if a < kmin:
                    kmin = a
                if b > kmax:
                    kmax = b
        if tmin < 0:
            return False
        tmin_sum += tmin
        tmax_sum += tmax
        dmin_sum += kmin
        dmax_sum += kmax
    return tmin_sum <= Sr <= tmax_sum and dmin_sum <= Dr <= dmax_sum


@njit(cache=True)
def _mask_log_tau(mask, nbm, V):
    idx = np.full(V, -1, dtype=np.int64)
    m = 0
    for v in range(V):
        if (mask >> v) & 1:
            idx[v] = m
            m += 1
    if m <= 1:
        return 0.0
    L = np.zeros((m, m))
    for v in range(V):
        if idx[v] >= 0:
            nb = nbm[v] & mask
            while nb != 0:
                w = _lowest(nb)
                nb &= ~(np.int64(1) << w)
                L[idx[v], idx[v]] += 1.0
                L[idx[v], idx[w]] -= 1.0
    return laplacian_logdet(L, m)


@njit(cache=True)
def _record(state, masks, msizes, ip, out_masks, out_sizes, hist, hist_n, nbm, eu, ev, rho):
    state[_COUNT] += 1
    D = ip[P_D]
    if ip[P_MODE] == MODE_STORE:
        if state[_STORED] < out_masks.shape[0]:
            for i in range(D):
                out_masks[state[_STORED], i] = masks[i]
                out_sizes[state[_STORED], i] = msizes[i]
            state[_STORED] += 1
        return
    V = ip[P_V]
    cut = 0
    for e in range(eu.shape[0]):
        a = np.int64(1) << eu[e]
        b = np.int64(1) << ev[e]
        same = False
        for i in range(D):
            if (masks[i] & a) != 0:
                same = (masks[i] & b) != 0
                break
        if not same:
            cut += 1
    lg = 0.0
    if rho != 0.0:
        for i in range(D):
            lg += _mask_log_tau(masks[i], nbm, V)
        lg *= rho
    hist[cut] += math.exp(lg)
    hist_n[cut] += 1


@njit(cache=True)
def _grow(U, S, X, F, popS, state, masks, msizes, ip, pop, nbm, lo, hi, out_masks, out_sizes, hist, hist_n, eu, ev,
          rho):
    dmin = ip[P_DMIN]
    dmax = ip[P_DMAX]
    for s in range(dmin, dmax + 1):
        if _fits(popS, s, lo, hi):
            nreg = state[_NREG]
            seats = state[_SEATS]
            if nreg + 1 <= ip[P_D] and seats + s <= ip[P_S]:
                R = U & ~S
                if _remainder_ok(R, nreg + 1, seats + s, ip, pop, nbm, lo, hi):
                    masks[nreg] = S
                    msizes[nreg] = s
                    state[_NREG] = nreg + 1
                    state[_SEATS] = seats + s
                    if R == 0:
                        _record(state, masks, msizes, ip, out_masks, out_sizes, hist, hist_n, nbm, eu, ev, rho)
                    elif ip[P_STOP_FIRST] == 1 and nreg == 0:
                        _record(state, masks, msizes, ip, out_masks, out_sizes, hist, hist_n, nbm, eu, ev, rho)
                    else:
                        v0 = _lowest(R)
                        b0 = np.int64(1) << v0
                        _grow(R, b0, nbm[v0] & R, np.int64(0), pop[v0], state, masks, msizes, ip, pop, nbm, lo, hi,
                              out_masks, out_sizes, hist, hist_n, eu, ev, rho)
                    state[_NREG] = nreg
                    state[_SEATS] = seats
    cap = dmax * hi * (1.0 + 1e-9) + 1e-9
    Xc = X
    Fc = F
    while Xc != 0:
        u = _lowest(Xc)
        bu = np.int64(1) << u
        Xc &= ~bu
        if popS + pop[u] <= cap:
            newX = Xc | (nbm[u] & U & ~S & ~Fc & ~bu)
            _grow(U, S | bu, newX, Fc, popS + pop[u], state, masks, msizes, ip, pop, nbm, lo, hi, out_masks,
                  out_sizes, hist, hist_n, eu, ev, rho)
        Fc |= bu


@njit(cache=True, nogil=True)
def search(U, prefix_masks, prefix_sizes, n_prefix, ip, pop, nbm, lo, hi, out_masks, out_sizes, hist, hist_n,
           eu, ev, rho):
    """Enumerate completions of a partial plan whose unassigned vertices are ``U``.

    ``prefix_masks[:n_prefix]`` are regions already fixed.  Returns the
    number of plans found; stored plans (store mode) go to ``out_*`` up to
    capacity.
    """
    D = ip[P_D]
    state = np.zeros(4, dtype=np.int64)
    masks = np.zeros(D, dtype=np.int64)
    msizes = np.zeros(D, dtype=np.int64)
    seats = 0
    for i in range(n_prefix):
        masks[i] = prefix_masks[i]
        msizes[i] = prefix_sizes[i]
        seats += prefix_sizes[i]
    state[_NREG] = n_prefix
    state[_SEATS] = seats
    if U == 0:
        if n_prefix == D and seats == ip[P_S]:
            _record(state, masks, msizes, ip, out_masks, out_sizes, hist, hist_n, nbm, eu, ev, rho)
        return state[_COUNT]
    v0 = _lowest(U)
    b0 = np.int64(1) << v0
    _grow(U, b0, nbm[v0] & U, np.int64(0), pop[v0], state, masks, msizes, ip, pop, nbm, lo, hi, out_masks,
          out_sizes, hist, hist_n, eu, ev, rho)
    return state[_COUNT]


@njit(cache=True, nogil=True)
def batch_log_tau_sum(G_indptr, G_nbr, assign, D, rho):
    """``rho * sum_k log tau(region k)`` for every plan row of ``assign``."""
    P, V = assign.shape
    out = np.empty(P)
    idx = np.empty(V, dtype=np.int64)
    for p in range(P):
        total = 0.0
        for k in range(D):
            m = 0
            for v in range(V):
                if assign[p, v] == k:
                    idx[v] = m
                    m += 1
                else:
                    idx[v] = -1
            if m > 1:
                L = np.zeros((m, m))
                for v in range(V):
                    if idx[v] >= 0:
                        for t in range(G_indptr[v], G_indptr[v + 1]):
                            w = G_nbr[t]
                            if idx[w] >= 0:
                                L[idx[v], idx[v]] += 1.0
                                L[idx[v], idx[w]] -= 1.0
                total += laplacian_logdet(L, m)
        out[p] = rho * total
    return out
