"""Compiled kernels shared by the public modules and the SMC driver.

Everything here works on flat integer/float arrays so it can run under
numba without the GIL.  The public modules wrap these functions with
typed Python objects; the SMC driver calls the batch functions directly.

Graph tuple ``G``: ``(indptr, nbr, nbr_edge, edge_u, edge_v, pop, unit, n_units)``.

Plans are label vectors.  Most routines take ``rmap``, a relabelling
applied on the fly (``rmap[label]``), which lets the same code evaluate a
plan and any of its merged ancestors without copying.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# Integer configuration slots.
I_D, I_S, I_DMIN, I_DMAX, I_KIND, I_PHI, I_SPACE, I_CUT, I_K, I_HIER, I_HFLAG, I_HASJ, I_RHO1 = range(13)
N_CFG_I = 13
# Float configuration slots.
F_PLO, F_PHI, F_PBAR, F_RHO, F_ALPHA = range(5)
N_CFG_F = 5

KIND_DISTRICT_ONLY = 0
KIND_ANY_VALID = 1
PHI_UNIFORM = 0
PHI_PROPORTIONAL = 1
SPACE_GRAPH = 0
SPACE_FOREST = 1
SPACE_LINKING = 2
CUT_TOP_K = 0
CUT_UNIFORM_BALANCED = 1
CUT_SOFTMAX = 2

NEG_INF = -np.inf

# ----------------------------------------------------------------------
# counter-based random streams (SplitMix64 output function over a counter)
# ----------------------------------------------------------------------

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def derive_key(base, index):
    """Key of sub-stream ``index`` of the stream keyed ``base``."""
    return mix64(np.uint64(base) ^ mix64(np.uint64(index) * _GAMMA + _GAMMA))


@njit(cache=True)
def next_u64(st):
    st[1] += np.uint64(1)
    return mix64(st[0] + st[1] * _GAMMA)


@njit(cache=True)
def uniform(st):
    return float(next_u64(st) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def randint(st, n):
    """Uniform integer in ``[0, n)``."""
    return min(np.int64(uniform(st) * n), n - 1)


# ----------------------------------------------------------------------
# small numeric helpers
# ----------------------------------------------------------------------


@njit(cache=True)
def logsumexp(x, n):
    if n == 0:
        return NEG_INF
    m = NEG_INF
    for i in range(n):
        if x[i] > m:
            m = x[i]
    if m == NEG_INF:
        return NEG_INF
    s = 0.0
    for i in range(n):
        s += math.exp(x[i] - m)
    return m + math.log(s)


@njit(cache=True)
def laplacian_logdet(L, n):
    """Log-determinant of the minor obtained by deleting row/column 0."""
    k = n - 1
    if k <= 0:
        return 0.0
    A = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            A[i, j] = L[i + 1, j + 1]
    total = 0.0
    for j in range(k):
        d = A[j, j]
        for t in range(j):
            d -= A[j, t] * A[j, t]
        if d <= 1e-10:
            return NEG_INF
        d = math.sqrt(d)
        A[j, j] = d
        total += math.log(d)
        for i in range(j + 1, k):
            v = A[i, j]
            for t in range(j):
                v -= A[i, t] * A[j, t]
            A[i, j] = v / d
    return 2.0 * total


@njit(cache=True)
def balanced(p, s, cf):
    lo = s * cf[F_PLO]
    hi = s * cf[F_PHI]
    tol = 1e-9 * max(1.0, hi)
    return p >= lo - tol and p <= hi + tol


@njit(cache=True)
def deviation(p, s, cf):
    return abs(p / (s * cf[F_PBAR]) - 1.0)


# ----------------------------------------------------------------------
# sizes, schedules and completability
# ----------------------------------------------------------------------


@njit(cache=True)
def completable(sizes, n, ci):
    """Whether regions with these sizes can still be split into ``D`` districts."""
    dmin = ci[I_DMIN]
    dmax = ci[I_DMAX]
    nd = 0
    lo = 0
    hi = 0
    for i in range(n):
        s = sizes[i]
        if s < dmin:
            return False
        if s <= dmax:
            nd += 1
        else:
            a = (s + dmax - 1) // dmax
            b = s // dmin
            if a > b:
                return False
            lo += a
            hi += b
    need = ci[I_D] - nd
    return lo <= need and need <= hi


@njit(cache=True)
def n_multidistricts(sizes, n, ci):
    c = 0
    for i in range(n):
        if sizes[i] > ci[I_DMAX]:
            c += 1
    return c


@njit(cache=True)
def reachable(sizes, n, ci):
    """Whether a size multiset lies in the support of the stage-``n`` target."""
    if not completable(sizes, n, ci):
        return False
    if ci[I_KIND] == KIND_DISTRICT_ONLY and n_multidistricts(sizes, n, ci) > 1:
        return False
    return True


@njit(cache=True)
def schedule_unordered(sizes, n, k, ci, out1, out2):
    """Unordered size pairs ``(s1 <= s2)`` allowed when splitting region ``k``."""
    s = sizes[k]
    tmp = np.empty(n + 1, dtype=np.int64)
    j = 0
    for i in range(n):
        if i != k:
            tmp[j] = sizes[i]
            j += 1
    cnt = 0
    if ci[I_KIND] == KIND_ANY_VALID:
        for s1 in range(1, s // 2 + 1):
            tmp[n - 1] = s1
            tmp[n] = s - s1
            if completable(tmp, n + 1, ci):
                out1[cnt] = s1
                out2[cnt] = s - s1
                cnt += 1
    else:
        for d in range(ci[I_DMIN], ci[I_DMAX] + 1):
            o = s - d
            if o < 1:
                continue
            a = min(d, o)
            b = max(d, o)
            dup = False
            for t in range(cnt):
                if out1[t] == a:
                    dup = True
            if dup:
                continue
            tmp[n - 1] = a
            tmp[n] = b
            if completable(tmp, n + 1, ci):
                out1[cnt] = a
                out2[cnt] = b
                cnt += 1
        # insertion sort by the smaller size
        for t in range(1, cnt):
            x1 = out1[t]
            x2 = out2[t]
            q = t - 1
            while q >= 0 and out1[q] > x1:
                out1[q + 1] = out1[q]
                out2[q + 1] = out2[q]
                q -= 1
            out1[q + 1] = x1
            out2[q + 1] = x2
    return cnt


@njit(cache=True)
def schedule_oriented(sizes, n, k, ci):
    """Oriented pairs ``(A[j], B[j])``: ``A`` goes to the subtree side of a cut."""
    cap = sizes[k] + 2
    u1 = np.empty(cap, dtype=np.int64)
    u2 = np.empty(cap, dtype=np.int64)
    cu = schedule_unordered(sizes, n, k, ci, u1, u2)
    A = np.empty(2 * cu + 1, dtype=np.int64)
    B = np.empty(2 * cu + 1, dtype=np.int64)
    c = 0
    for t in range(cu):
        A[c] = u1[t]
        B[c] = u2[t]
        c += 1
        if u1[t] != u2[t]:
            A[c] = u2[t]
            B[c] = u1[t]
            c += 1
    return A, B, c


@njit(cache=True)
def merged_sizes(sizes, r, k, k2):
    """Sizes of the plan with ``k`` and ``k2`` merged; the merged region goes last."""
    tmp = np.empty(r - 1, dtype=np.int64)
    j = 0
    for i in range(r):
        if i != k and i != k2:
            tmp[j] = sizes[i]
            j += 1
    tmp[r - 2] = sizes[k] + sizes[k2]
    return tmp


@njit(cache=True)
def merged_valid(sizes, r, k, k2, ci):
    """Whether merging ``k`` and ``k2`` yields a plan the previous stage could hold
    and whose split into ``(s_k, s_k2)`` the schedule allows."""
    if r < 2:
        return False
    sh = sizes[k] + sizes[k2]
    if sh <= ci[I_DMAX]:
        return False
    tmp = merged_sizes(sizes, r, k, k2)
    if not reachable(tmp, r - 1, ci):
        return False
    u1 = np.empty(sh + 2, dtype=np.int64)
    u2 = np.empty(sh + 2, dtype=np.int64)
    cu = schedule_unordered(tmp, r - 1, r - 2, ci, u1, u2)
    a = min(sizes[k], sizes[k2])
    for t in range(cu):
        if u1[t] == a:
            return True
    return False


@njit(cache=True)
def log_phi(sizes, n, k, ci):
    """log probability that the multidistrict selector picks region ``k``."""
    if sizes[k] <= ci[I_DMAX]:
        return NEG_INF
    if ci[I_PHI] == PHI_UNIFORM:
        return -math.log(n_multidistricts(sizes, n, ci))
    tot = 0.0
    for i in range(n):
        if sizes[i] > ci[I_DMAX]:
            tot += sizes[i]
    return math.log(sizes[k] / tot)


@njit(cache=True)
def select_multidistrict(sizes, n, ci, st):
    m = n_multidistricts(sizes, n, ci)
    if m == 0:
        return -1
    if ci[I_PHI] == PHI_UNIFORM:
        pick = randint(st, m)
        for i in range(n):
            if sizes[i] > ci[I_DMAX]:
                if pick == 0:
                    return i
                pick -= 1
        return -1
    tot = 0.0
    for i in range(n):
        if sizes[i] > ci[I_DMAX]:
            tot += sizes[i]
    u = uniform(st) * tot
    last = -1
    for i in range(n):
        if sizes[i] > ci[I_DMAX]:
            last = i
            u -= sizes[i]
            if u < 0.0:
                return i
    return last


# ----------------------------------------------------------------------
# region membership
# ----------------------------------------------------------------------


@njit(cache=True)
def identity_map(r):
    return np.arange(r, dtype=np.int64)


@njit(cache=True)
def merge_map(r, k, k2):
    """Relabelling that folds ``k2`` into ``k``."""
    m = np.arange(r, dtype=np.int64)
    m[k2] = k
    return m


@njit(cache=True)
def collect(lab, rmap, label, out):
    m = 0
    for v in range(lab.shape[0]):
        if rmap[lab[v]] == label:
            out[m] = v
            m += 1
    return m


# ----------------------------------------------------------------------
# spanning trees
# ----------------------------------------------------------------------


@njit(cache=True)
def wilson(G, lab, rmap, label, unit_restrict, verts, m, st, parent, pedge, intree, nxt, nxte):
    """Uniform spanning tree of the induced subgraph on ``verts`` (Wilson's algorithm).

    Membership of a neighbour ``w`` is ``rmap[lab[w]] == label`` (and, when
    ``unit_restrict >= 0``, ``unit[w] == unit_restrict``).  Writes ``parent``
    and ``pedge`` for the tree rooted at ``verts[0]``; returns the root.
    """
    indptr = G[0]
    nbr = G[1]
    nbre = G[2]
    unit = G[6]
    for i in range(m):
        intree[verts[i]] = False
    root = verts[0]
    intree[root] = True
    parent[root] = -1
    pedge[root] = -1
    for i in range(1, m):
        u = verts[i]
        while not intree[u]:
            a = indptr[u]
            b = indptr[u + 1]
            while True:
                j = a + randint(st, b - a)
                w = nbr[j]
                if rmap[lab[w]] == label and (unit_restrict < 0 or unit[w] == unit_restrict):
                    break
            nxt[u] = w
            nxte[u] = nbre[j]
            u = w
        u = verts[i]
        while not intree[u]:
            intree[u] = True
            parent[u] = nxt[u]
            pedge[u] = nxte[u]
            u = nxt[u]
    return root


@njit(cache=True)
def order_from_parent(verts, m, root, parent, loc, order):
    """Top-down (BFS) order of a rooted tree given by parent pointers."""
    for i in range(m):
        loc[verts[i]] = i
    start = np.zeros(m + 1, dtype=np.int64)
    for i in range(m):
        p = parent[verts[i]]
        if p >= 0:
            start[loc[p] + 1] += 1
    for i in range(m):
        start[i + 1] += start[i]
    fill = start[:m].copy()
    ch = np.empty(max(m - 1, 1), dtype=np.int64)
    for i in range(m):
        v = verts[i]
        p = parent[v]
        if p >= 0:
            ch[fill[loc[p]]] = v
            fill[loc[p]] += 1
    order[0] = root
    head = 0
    tail = 1
    while head < tail:
        u = order[head]
        head += 1
        lu = loc[u]
        for t in range(start[lu], start[lu + 1]):
            order[tail] = ch[t]
            tail += 1
    return tail


@njit(cache=True)
def root_tree(verts, m, ea, eb, ee, ne, root, parent, pedge, order, loc):
    """Root the tree given as an edge list at ``root``; fills parent/pedge/order."""
    for i in range(m):
        loc[verts[i]] = i
    start = np.zeros(m + 1, dtype=np.int64)
    for t in range(ne):
        start[loc[ea[t]] + 1] += 1
        start[loc[eb[t]] + 1] += 1
    for i in range(m):
        start[i + 1] += start[i]
    fill = start[:m].copy()
    adjv = np.empty(max(2 * ne, 1), dtype=np.int64)
    adje = np.empty(max(2 * ne, 1), dtype=np.int64)
    for t in range(ne):
        la = loc[ea[t]]
        lb = loc[eb[t]]
        adjv[fill[la]] = eb[t]
        adje[fill[la]] = ee[t]
        fill[la] += 1
        adjv[fill[lb]] = ea[t]
        adje[fill[lb]] = ee[t]
        fill[lb] += 1
    seen = np.zeros(m, dtype=np.bool_)
    order[0] = root
    parent[root] = -1
    pedge[root] = -1
    seen[loc[root]] = True
    head = 0
    tail = 1
    while head < tail:
        u = order[head]
        head += 1
        lu = loc[u]
        for t in range(start[lu], start[lu + 1]):
            w = adjv[t]
            lw = loc[w]
            if not seen[lw]:
                seen[lw] = True
                parent[w] = u
                pedge[w] = adje[t]
                order[tail] = w
                tail += 1
    return tail


@njit(cache=True)
def hier_wilson(G, lab, rmap, label, verts, m, st, parent, pedge, order, loc):
    """Uniform hierarchical spanning tree of the region ``verts``.

    Draws a Wilson tree inside every unit intersection, then a Wilson tree on
    the unit-level multigraph of the region where each step picks an
    incident cross-unit edge uniformly (so parallel edges are distinct).
    Returns the number of vertices reached (``m`` on success).
    """
    V = lab.shape[0]
    indptr = G[0]
    nbr = G[1]
    nbre = G[2]
    unit = G[6]
    nunits = G[7]
    uidx = np.full(nunits, -1, dtype=np.int64)
    nq = 0
    ulist = np.empty(m, dtype=np.int64)
    for i in range(m):
        a = unit[verts[i]]
        if uidx[a] < 0:
            uidx[a] = nq
            ulist[nq] = a
            nq += 1
    ustart = np.zeros(nq + 1, dtype=np.int64)
    for i in range(m):
        ustart[uidx[unit[verts[i]]] + 1] += 1
    for q in range(nq):
        ustart[q + 1] += ustart[q]
    fill = ustart[:nq].copy()
    uverts = np.empty(m, dtype=np.int64)
    for i in range(m):
        q = uidx[unit[verts[i]]]
        uverts[fill[q]] = verts[i]
        fill[q] += 1

    ea = np.empty(max(m - 1, 1), dtype=np.int64)
    eb = np.empty(max(m - 1, 1), dtype=np.int64)
    ee = np.empty(max(m - 1, 1), dtype=np.int64)
    ne = 0
    intree = np.empty(V, dtype=np.bool_)
    nxt = np.empty(V, dtype=np.int64)
    nxte = np.empty(V, dtype=np.int64)
    for q in range(nq):
        sub = uverts[ustart[q] : ustart[q + 1]]
        mq = ustart[q + 1] - ustart[q]
        wilson(G, lab, rmap, label, ulist[q], sub, mq, st, parent, pedge, intree, nxt, nxte)
        for t in range(mq):
            x = sub[t]
            if parent[x] >= 0:
                ea[ne] = x
                eb[ne] = parent[x]
                ee[ne] = pedge[x]
                ne += 1

    if nq > 1:
        astart = np.zeros(nq + 1, dtype=np.int64)
        for i in range(m):
            v = verts[i]
            for t in range(indptr[v], indptr[v + 1]):
                w = nbr[t]
                if rmap[lab[w]] == label and unit[w] != unit[v]:
                    astart[uidx[unit[v]] + 1] += 1
        for q in range(nq):
            astart[q + 1] += astart[q]
        afill = astart[:nq].copy()
        na = astart[nq]
        av = np.empty(na, dtype=np.int64)
        aw = np.empty(na, dtype=np.int64)
        ae = np.empty(na, dtype=np.int64)
        for i in range(m):
            v = verts[i]
            for t in range(indptr[v], indptr[v + 1]):
                w = nbr[t]
                if rmap[lab[w]] == label and unit[w] != unit[v]:
                    q = uidx[unit[v]]
                    av[afill[q]] = v
                    aw[afill[q]] = w
                    ae[afill[q]] = nbre[t]
                    afill[q] += 1
        qin = np.zeros(nq, dtype=np.bool_)
        qnext = np.empty(nq, dtype=np.int64)
        qin[0] = True
        for i in range(1, nq):
            u = i
            while not qin[u]:
                cnt = astart[u + 1] - astart[u]
                if cnt == 0:
                    return 0
                a = astart[u] + randint(st, cnt)
                qnext[u] = a
                u = uidx[unit[aw[a]]]
            u = i
            while not qin[u]:
                qin[u] = True
                a = qnext[u]
                ea[ne] = av[a]
                eb[ne] = aw[a]
                ee[ne] = ae[a]
                ne += 1
                u = uidx[unit[aw[a]]]
    return root_tree(verts, m, ea, eb, ee, ne, verts[0], parent, pedge, order, loc)


@njit(cache=True)
def draw_tree(G, hier, lab, rmap, label, verts, m, st, parent, pedge, order, loc):
    """Plain or hierarchical uniform tree on a region; returns vertices ordered."""
    if hier:
        return hier_wilson(G, lab, rmap, label, verts, m, st, parent, pedge, order, loc)
    V = lab.shape[0]
    intree = np.empty(V, dtype=np.bool_)
    nxt = np.empty(V, dtype=np.int64)
    nxte = np.empty(V, dtype=np.int64)
    root = wilson(G, lab, rmap, label, -1, verts, m, st, parent, pedge, intree, nxt, nxte)
    return order_from_parent(verts, m, root, parent, loc, order)


@njit(cache=True)
def subtree_pops(G, order, m, parent, sub):
    pop = G[5]
    for i in range(m):
        sub[order[i]] = pop[order[i]]
    for i in range(m - 1, 0, -1):
        v = order[i]
        sub[parent[v]] += sub[v]
    return sub[order[0]]


@njit(cache=True)
def count_balanced(order, m, sub, total, A, B, npairs, cf):
    b = 0
    for i in range(1, m):
        p = sub[order[i]]
        for j in range(npairs):
            if balanced(p, A[j], cf) and balanced(total - p, B[j], cf):
                b += 1
    return b


@njit(cache=True)
def choose_cut(order, m, parent, pedge, sub, total, A, B, npairs, ci, cf, K, st):
    """Pick a tree cut under the configured rule.

    Returns ``(vertex below the cut edge, pair index, log probability)`` or
    ``(-1, -1, -inf)`` on rejection.
    """
    rule = ci[I_CUT]
    nc = (m - 1) * npairs
    if nc <= 0:
        return -1, -1, NEG_INF
    if rule == CUT_SOFTMAX:
        alpha = cf[F_ALPHA]
        w = np.empty(nc)
        bal = np.empty(nc, dtype=np.bool_)
        c = 0
        for i in range(1, m):
            p = sub[order[i]]
            for j in range(npairs):
                d = max(deviation(p, A[j], cf), deviation(total - p, B[j], cf))
                w[c] = -alpha * d
                bal[c] = balanced(p, A[j], cf) and balanced(total - p, B[j], cf)
                c += 1
        lse = logsumexp(w, nc)
        u = uniform(st)
        acc = 0.0
        pick = nc - 1
        for c in range(nc):
            acc += math.exp(w[c] - lse)
            if u < acc:
                pick = c
                break
        if not bal[pick]:
            return -1, -1, NEG_INF
        return order[1 + pick // npairs], pick % npairs, w[pick] - lse
    # balanced cuts only
    cv = np.empty(nc, dtype=np.int64)
    cj = np.empty(nc, dtype=np.int64)
    cd = np.empty(nc)
    b = 0
    for i in range(1, m):
        v = order[i]
        p = sub[v]
        for j in range(npairs):
            if balanced(p, A[j], cf) and balanced(total - p, B[j], cf):
                cv[b] = v
                cj[b] = j
                cd[b] = max(deviation(p, A[j], cf), deviation(total - p, B[j], cf))
                b += 1
    if rule == CUT_UNIFORM_BALANCED:
        if b == 0:
            return -1, -1, NEG_INF
        pick = randint(st, b)
        return cv[pick], cj[pick], -math.log(b)
    # top-K: balanced cuts rank ahead of every unbalanced cut; among them
    # sort by (max deviation, edge index, pair index).
    pick = randint(st, K)
    if pick >= b:
        return -1, -1, NEG_INF
    for t in range(1, b):
        xv = cv[t]
        xj = cj[t]
        xd = cd[t]
        q = t - 1
        while q >= 0:
            if cd[q] > xd or (
                cd[q] == xd
                and (pedge[cv[q]] > pedge[xv] or (pedge[cv[q]] == pedge[xv] and cj[q] > xj))
            ):
                cv[q + 1] = cv[q]
                cj[q + 1] = cj[q]
                cd[q + 1] = cd[q]
                q -= 1
            else:
                break
        cv[q + 1] = xv
        cj[q + 1] = xj
        cd[q + 1] = xd
    return cv[pick], cj[pick], -math.log(K)


@njit(cache=True)
def mark_subtree(order, m, parent, cut_v, inside):
    """``inside[v]`` for every ``v`` in the subtree hanging below ``cut_v``."""
    for i in range(m):
        v = order[i]
        if v == cut_v:
            inside[v] = True
        elif i == 0:
            inside[v] = False
        else:
            inside[v] = inside[parent[v]]


# ----------------------------------------------------------------------
# spanning tree counts
# ----------------------------------------------------------------------


@njit(cache=True)
def log_tau_set(G, lab, rmap, label, unit_restrict, verts, m, loc):
    """log number of spanning trees of the induced subgraph on ``verts``."""
    if m <= 1:
        return 0.0
    indptr = G[0]
    nbr = G[1]
    unit = G[6]
    for i in range(m):
        loc[verts[i]] = i
    L = np.zeros((m, m))
    for i in range(m):
        v = verts[i]
        for t in range(indptr[v], indptr[v + 1]):
            w = nbr[t]
            if rmap[lab[w]] == label and (unit_restrict < 0 or unit[w] == unit_restrict):
                L[i, i] += 1.0
                L[i, loc[w]] -= 1.0
    return laplacian_logdet(L, m)


@njit(cache=True)
def log_tau_eta_set(G, lab, rmap, label, verts, m, loc):
    """log number of hierarchical spanning trees of the region ``verts``."""
    indptr = G[0]
    nbr = G[1]
    unit = G[6]
    nunits = G[7]
    uidx = np.full(nunits, -1, dtype=np.int64)
    nq = 0
    ulist = np.empty(m, dtype=np.int64)
    for i in range(m):
        a = unit[verts[i]]
        if uidx[a] < 0:
            uidx[a] = nq
            ulist[nq] = a
            nq += 1
    total = 0.0
    sub = np.empty(m, dtype=np.int64)
    for q in range(nq):
        c = 0
        for i in range(m):
            if unit[verts[i]] == ulist[q]:
                sub[c] = verts[i]
                c += 1
        total += log_tau_set(G, lab, rmap, label, ulist[q], sub, c, loc)
    if nq > 1:
        L = np.zeros((nq, nq))
        for i in range(m):
            v = verts[i]
            for t in range(indptr[v], indptr[v + 1]):
                w = nbr[t]
                if rmap[lab[w]] == label and unit[w] != unit[v]:
                    a = uidx[unit[v]]
                    b = uidx[unit[w]]
                    L[a, a] += 1.0
                    L[a, b] -= 1.0
        total += laplacian_logdet(L, nq)
    return total


@njit(cache=True)
def log_tau_region(G, hier, lab, rmap, label, verts, m, loc):
    if hier:
        return log_tau_eta_set(G, lab, rmap, label, verts, m, loc)
    return log_tau_set(G, lab, rmap, label, -1, verts, m, loc)


# ----------------------------------------------------------------------
# plan-level structure
# ----------------------------------------------------------------------


@njit(cache=True)
def uf_find(p, x):
    while p[x] != x:
        p[x] = p[p[x]]
        x = p[x]
    return x


@njit(cache=True)
def pair_counts(G, lab, rmap, R):
    """Boundary counts between effective regions: all edges and within-unit edges."""
    eu = G[3]
    ev = G[4]
    unit = G[6]
    cnt = np.zeros((R, R), dtype=np.int64)
    within = np.zeros((R, R), dtype=np.int64)
    for e in range(eu.shape[0]):
        a = rmap[lab[eu[e]]]
        b = rmap[lab[ev[e]]]
        if a != b:
            cnt[a, b] += 1
            cnt[b, a] += 1
            if unit[eu[e]] == unit[ev[e]]:
                within[a, b] += 1
                within[b, a] += 1
    return cnt, within


@njit(cache=True)
def presence(G, lab, rmap, R):
    unit = G[6]
    pres = np.zeros((R, G[7]), dtype=np.bool_)
    for v in range(lab.shape[0]):
        pres[rmap[lab[v]], unit[v]] = True
    return pres


@njit(cache=True)
def eta_boundary_count(k, k2, cnt, within, pres):
    """Size of the administrative boundary set between two regions."""
    shared = 0
    for a in range(pres.shape[1]):
        if pres[k, a] and pres[k2, a]:
            shared += 1
    if shared == 0:
        return cnt[k, k2]
    if shared == 1:
        return within[k, k2]
    return 0


@njit(cache=True)
def edge_in_eta_boundary(G, e, k, k2, pres):
    shared = 0
    for a in range(pres.shape[1]):
        if pres[k, a] and pres[k2, a]:
            shared += 1
    if shared == 0:
        return True
    if shared == 1:
        unit = G[6]
        return unit[G[3][e]] == unit[G[4][e]]
    return False


@njit(cache=True)
def hier_check(G, lab, rmap, R, want):
    """Hierarchical validity.

    ``want >= 0``: whether effective region ``want`` meets every unit in at
    most one connected piece.  ``want < 0``: whether the whole plan is
    hierarchical (hierarchically connected, and in every component of the
    administratively adjacent quotient the unit splits equal regions - 1).
    """
    V = lab.shape[0]
    eu = G[3]
    ev = G[4]
    unit = G[6]
    nunits = G[7]
    p = np.arange(V)
    for e in range(eu.shape[0]):
        a = eu[e]
        b = ev[e]
        if unit[a] == unit[b] and rmap[lab[a]] == rmap[lab[b]]:
            if want >= 0 and rmap[lab[a]] != want:
                continue
            ra = uf_find(p, a)
            rb = uf_find(p, b)
            if ra != rb:
                p[ra] = rb
    rep = np.full((R, nunits), -1, dtype=np.int64)
    for v in range(V):
        k = rmap[lab[v]]
        if want >= 0 and k != want:
            continue
        x = uf_find(p, v)
        a = unit[v]
        if rep[k, a] < 0:
            rep[k, a] = x
        elif rep[k, a] != x:
            return False
    if want >= 0:
        return True
    q = np.arange(R)
    for e in range(eu.shape[0]):
        a = eu[e]
        b = ev[e]
        if unit[a] == unit[b]:
            ka = rmap[lab[a]]
            kb = rmap[lab[b]]
            if ka != kb:
                ra = uf_find(q, ka)
                rb = uf_find(q, kb)
                if ra != rb:
                    q[ra] = rb
    present = np.zeros(R, dtype=np.bool_)
    for v in range(V):
        present[rmap[lab[v]]] = True
    nreg = np.zeros(R, dtype=np.int64)
    for k in range(R):
        if present[k]:
            nreg[uf_find(q, k)] += 1
    splits = np.zeros(R, dtype=np.int64)
    for a in range(nunits):
        deg = 0
        comp = -1
        for k in range(R):
            if rep[k, a] >= 0:
                deg += 1
                comp = uf_find(q, k)
        if deg > 0:
            splits[comp] += deg - 1
    for k in range(R):
        if present[k] and uf_find(q, k) == k:
            if splits[k] != nreg[k] - 1:
                return False
    return True


@njit(cache=True)
def score_j(G, lab, rmap, R, jc):
    """Soft score: jc[0] * admin splits + jc[1] * units split."""
    V = lab.shape[0]
    eu = G[3]
    ev = G[4]
    unit = G[6]
    nunits = G[7]
    total = 0.0
    if jc[0] != 0.0:
        p = np.arange(V)
        comps = V
        for e in range(eu.shape[0]):
            a = eu[e]
            b = ev[e]
            if unit[a] == unit[b] and rmap[lab[a]] == rmap[lab[b]]:
                ra = uf_find(p, a)
                rb = uf_find(p, b)
                if ra != rb:
                    p[ra] = rb
                    comps -= 1
        total += jc[0] * (comps - nunits)
    if jc[1] != 0.0:
        pres = presence(G, lab, rmap, R)
        s = 0
        for a in range(nunits):
            c = 0
            for k in range(R):
                if pres[k, a]:
                    c += 1
            if c > 1:
                s += 1
        total += jc[1] * s
    return total


@njit(cache=True)
def log_tau_quotient(cnt, R, rmap, present_n):
    """log spanning-tree count of the region multigraph (with ``rmap`` merges)."""
    idx = np.full(R, -1, dtype=np.int64)
    n = 0
    for k in range(R):
        e = rmap[k]
        if idx[e] < 0:
            idx[e] = n
            n += 1
    if n <= 1:
        return 0.0
    L = np.zeros((n, n))
    for a in range(R):
        for b in range(R):
            if a != b and cnt[a, b] > 0:
                x = idx[rmap[a]]
                y = idx[rmap[b]]
                if x != y:
                    L[x, x] += cnt[a, b]
                    L[x, y] -= cnt[a, b]
    return laplacian_logdet(L, n)


@njit(cache=True)
def log_tau_eta_quotient(cnt, within, R, rmap):
    """log hierarchical linking-edge count: trees inside each administratively
    adjacent component (within-unit edges) times trees joining the components."""
    idx = np.full(R, -1, dtype=np.int64)
    n = 0
    for k in range(R):
        e = rmap[k]
        if idx[e] < 0:
            idx[e] = n
            n += 1
    if n <= 1:
        return 0.0
    C = np.zeros((n, n))
    W = np.zeros((n, n))
    for a in range(R):
        for b in range(R):
            x = idx[rmap[a]]
            y = idx[rmap[b]]
            if x != y:
                C[x, y] += cnt[a, b]
                W[x, y] += within[a, b]
    q = np.arange(n)
    for x in range(n):
        for y in range(n):
            if W[x, y] > 0:
                rx = uf_find(q, x)
                ry = uf_find(q, y)
                if rx != ry:
                    q[rx] = ry
    comp = np.empty(n, dtype=np.int64)
    cidx = np.full(n, -1, dtype=np.int64)
    nc = 0
    for x in range(n):
        r0 = uf_find(q, x)
        if cidx[r0] < 0:
            cidx[r0] = nc
            nc += 1
        comp[x] = cidx[r0]
    total = 0.0
    for c in range(nc):
        members = np.empty(n, dtype=np.int64)
        mc = 0
        for x in range(n):
            if comp[x] == c:
                members[mc] = x
                mc += 1
        if mc > 1:
            L = np.zeros((mc, mc))
            for i in range(mc):
                for j in range(mc):
                    if i != j:
                        w = W[members[i], members[j]]
                        L[i, i] += w
                        L[i, j] -= w
            total += laplacian_logdet(L, mc)
    if nc > 1:
        L = np.zeros((nc, nc))
        for x in range(n):
            for y in range(n):
                if comp[x] != comp[y]:
                    L[comp[x], comp[x]] += C[x, y]
                    L[comp[x], comp[y]] -= C[x, y]
        total += laplacian_logdet(L, nc)
    return total


@njit(cache=True)
def log_linking_count(cnt, within, R, rmap, hier):
    if hier:
        return log_tau_eta_quotient(cnt, within, R, rmap)
    return log_tau_quotient(cnt, R, rmap, R)


# ----------------------------------------------------------------------
# cut probabilities on merged trees (effective boundary terms)
# ----------------------------------------------------------------------


@njit(cache=True)
def log_pcut_joined(G, lab, rmap, tpar, tpe, k, k2, u, v, e, sk, sk2, A, B, npairs, ci, cf):
    """log p_cut of the cut at ``e`` in the tree ``T_k + e + T_k2``.

    ``u`` lies in region ``k`` (size ``sk``), ``v`` in ``k2`` (size ``sk2``).
    """
    V = lab.shape[0]
    verts = np.empty(V, dtype=np.int64)
    m = 0
    for x in range(V):
        lx = rmap[lab[x]]
        if lx == k or lx == k2:
            verts[m] = x
            m += 1
    ea = np.empty(m, dtype=np.int64)
    eb = np.empty(m, dtype=np.int64)
    ee = np.empty(m, dtype=np.int64)
    ne = 0
    for i in range(m):
        x = verts[i]
        if tpar[x] >= 0:
            ea[ne] = x
            eb[ne] = tpar[x]
            ee[ne] = tpe[x]
            ne += 1
    ea[ne] = u
    eb[ne] = v
    ee[ne] = e
    ne += 1
    parent = np.empty(V, dtype=np.int64)
    pedge = np.empty(V, dtype=np.int64)
    order = np.empty(m, dtype=np.int64)
    loc = np.empty(V, dtype=np.int64)
    got = root_tree(verts, m, ea, eb, ee, ne, u, parent, pedge, order, loc)
    if got != m:
        return NEG_INF
    sub = np.empty(V)
    total = subtree_pops(G, order, m, parent, sub)
    jt = -1
    for j in range(npairs):
        if A[j] == sk2 and B[j] == sk:
            jt = j
    if jt < 0:
        return NEG_INF
    if ci[I_CUT] == CUT_SOFTMAX:
        alpha = cf[F_ALPHA]
        w = np.empty((m - 1) * npairs)
        c = 0
        target = NEG_INF
        for i in range(1, m):
            x = order[i]
            p = sub[x]
            for j in range(npairs):
                d = max(deviation(p, A[j], cf), deviation(total - p, B[j], cf))
                w[c] = -alpha * d
                if x == v and j == jt:
                    target = w[c]
                c += 1
        return target - logsumexp(w, c)
    if not (balanced(sub[v], sk2, cf) and balanced(total - sub[v], sk, cf)):
        return NEG_INF
    b = count_balanced(order, m, sub, total, A, B, npairs, cf)
    return -math.log(b)


@njit(cache=True)
def log_effective_boundary(G, lab, rmap, tpar, tpe, k, k2, sk, sk2, A, B, npairs, ci, cf, hier, pres):
    """log of the summed cut probabilities over the (administrative) boundary."""
    eu = G[3]
    ev = G[4]
    terms = np.empty(eu.shape[0])
    c = 0
    for e in range(eu.shape[0]):
        a = rmap[lab[eu[e]]]
        b = rmap[lab[ev[e]]]
        if (a == k and b == k2) or (a == k2 and b == k):
            if hier and not edge_in_eta_boundary(G, e, k, k2, pres):
                continue
            if a == k:
                u = eu[e]
                v = ev[e]
            else:
                u = ev[e]
                v = eu[e]
            terms[c] = log_pcut_joined(G, lab, rmap, tpar, tpe, k, k2, u, v, e, sk, sk2, A, B, npairs, ci, cf)
            c += 1
    return logsumexp(terms, c)


# ----------------------------------------------------------------------
# forward split of one particle
# ----------------------------------------------------------------------


@njit(cache=True)
def propose_split(G, ci, cf, r, assign, sizes, tpar, tpe, links, K, st,
                  out_assign, out_sizes, out_tpar, out_tpe, out_links):
    """Split one multidistrict of a stage-``r`` plan into regions ``k`` and ``r``.

    Returns 1 on success and 0 on rejection.
    """
    k = select_multidistrict(sizes, r, ci, st)
    if k < 0:
        return 0
    return split_region(G, ci, cf, r, k, assign, sizes, tpar, tpe, links, K, st,
                        out_assign, out_sizes, out_tpar, out_tpe, out_links)


@njit(cache=True)
def split_region(G, ci, cf, r, k, assign, sizes, tpar, tpe, links, K, st,
                 out_assign, out_sizes, out_tpar, out_tpe, out_links):
    """Split region ``k``: the side below the cut edge becomes region ``r``."""
    V = assign.shape[0]
    A, B, npairs = schedule_oriented(sizes, r, k, ci)
    if npairs == 0:
        return 0
    ident = identity_map(r)
    verts = np.empty(V, dtype=np.int64)
    m = collect(assign, ident, k, verts)
    parent = np.empty(V, dtype=np.int64)
    pedge = np.empty(V, dtype=np.int64)
    order = np.empty(m, dtype=np.int64)
    loc = np.empty(V, dtype=np.int64)
    got = draw_tree(G, ci[I_HIER] == 1, assign, ident, k, verts, m, st, parent, pedge, order, loc)
    if got != m:
        return 0
    sub = np.empty(V)
    total = subtree_pops(G, order, m, parent, sub)
    cv, cj, lp = choose_cut(order, m, parent, pedge, sub, total, A, B, npairs, ci, cf, K, st)
    if cv < 0:
        return 0
    inside = np.zeros(V, dtype=np.bool_)
    mark_subtree(order, m, parent, cv, inside)
    for v in range(V):
        out_assign[v] = assign[v]
    for i in range(r):
        out_sizes[i] = sizes[i]
    for i in range(m):
        v = verts[i]
        if inside[v]:
            out_assign[v] = r
    out_sizes[r] = A[cj]
    out_sizes[k] = B[cj]
    space = ci[I_SPACE]
    if space >= SPACE_FOREST:
        for v in range(V):
            out_tpar[v] = tpar[v]
            out_tpe[v] = tpe[v]
        for i in range(m):
            v = verts[i]
            out_tpar[v] = parent[v]
            out_tpe[v] = pedge[v]
        out_tpar[cv] = -1
        out_tpe[cv] = -1
    if space == SPACE_LINKING:
        for i in range(r - 1):
            out_links[i] = links[i]
        out_links[r - 1] = pedge[cv]
    return 1


# ----------------------------------------------------------------------
# incremental weights
# ----------------------------------------------------------------------


@njit(cache=True)
def region_log_taus(G, hier, lab, R):
    V = lab.shape[0]
    ident = identity_map(R)
    out = np.empty(R)
    verts = np.empty(V, dtype=np.int64)
    loc = np.empty(V, dtype=np.int64)
    for k in range(R):
        m = collect(lab, ident, k, verts)
        out[k] = log_tau_region(G, hier, lab, ident, k, verts, m, loc)
    return out


@njit(cache=True)
def merged_log_tau(G, hier, lab, R, k, k2):
    V = lab.shape[0]
    rm = merge_map(R, k, k2)
    verts = np.empty(V, dtype=np.int64)
    loc = np.empty(V, dtype=np.int64)
    m = collect(lab, rm, k, verts)
    return log_tau_region(G, hier, lab, rm, k, verts, m, loc)


@njit(cache=True)
def log_weight(G, ci, cf, jc, r, assign, sizes, tpar, tpe, links, K):
    """Optimal incremental log weight of a stage-``r`` particle in its space."""
    space = ci[I_SPACE]
    hier = ci[I_HIER] == 1
    rho = cf[F_RHO]
    rho_one = ci[I_RHO1] == 1
    has_j = ci[I_HASJ] == 1
    ident = identity_map(r)
    cnt, within = pair_counts(G, assign, ident, r)
    pres = presence(G, assign, ident, r)
    j0 = 0.0
    if has_j:
        j0 = score_j(G, assign, ident, r, jc)
    ltau = np.zeros(r)
    if not rho_one:
        ltau = region_log_taus(G, hier, assign, r)
    lq0 = 0.0
    if space == SPACE_LINKING:
        lq0 = log_linking_count(cnt, within, r, ident, hier)
    terms = np.empty(r * r)
    nt = 0
    if space == SPACE_LINKING:
        eu = G[3]
        ev = G[4]
        for t in range(r - 1):
            e = links[t]
            u = eu[e]
            v = ev[e]
            k = assign[u]
            k2 = assign[v]
            if not merged_valid(sizes, r, k, k2, ci):
                continue
            if hier and not edge_in_eta_boundary(G, e, k, k2, pres):
                continue
            tmp = merged_sizes(sizes, r, k, k2)
            rm = merge_map(r, k, k2)
            A, B, npairs = schedule_oriented(tmp, r - 1, r - 2, ci)
            term = log_phi(tmp, r - 1, r - 2, ci)
            if has_j:
                term += j0 - score_j(G, assign, rm, r, jc)
            if not rho_one:
                term += (rho - 1.0) * (merged_log_tau(G, hier, assign, r, k, k2) - ltau[k] - ltau[k2])
            term += lq0 - log_linking_count(cnt, within, r, rm, hier)
            term += log_pcut_joined(G, assign, ident, tpar, tpe, k, k2, u, v, e,
                                    sizes[k], sizes[k2], A, B, npairs, ci, cf)
            terms[nt] = term
            nt += 1
        return -logsumexp(terms, nt)
    for k in range(r):
        for k2 in range(k + 1, r):
            if cnt[k, k2] == 0:
                continue
            if not merged_valid(sizes, r, k, k2, ci):
                continue
            c = cnt[k, k2]
            rm = merge_map(r, k, k2)
            if hier:
                c = eta_boundary_count(k, k2, cnt, within, pres)
                if c == 0:
                    continue
                if not hier_check(G, assign, rm, r, -1):
                    continue
            tmp = merged_sizes(sizes, r, k, k2)
            term = log_phi(tmp, r - 1, r - 2, ci)
            if has_j:
                term += j0 - score_j(G, assign, rm, r, jc)
            if not rho_one:
                term += (rho - 1.0) * (merged_log_tau(G, hier, assign, r, k, k2) - ltau[k] - ltau[k2])
            if space == SPACE_GRAPH:
                term += math.log(c)
            else:
                A, B, npairs = schedule_oriented(tmp, r - 1, r - 2, ci)
                term += log_effective_boundary(G, assign, ident, tpar, tpe, k, k2, sizes[k], sizes[k2],
                                               A, B, npairs, ci, cf, hier, pres)
            terms[nt] = term
            nt += 1
    lw = -logsumexp(terms, nt)
    if space == SPACE_GRAPH:
        lw += math.log(K)
    return lw


# ----------------------------------------------------------------------
# merge-split MCMC
# ----------------------------------------------------------------------


@njit(cache=True)
def pair_eligible(G, ci, assign, sizes, r, k, k2, cnt):
    if cnt[k, k2] == 0:
        return False
    if not merged_valid(sizes, r, k, k2, ci):
        return False
    if ci[I_HIER] == 1:
        rm = merge_map(r, k, k2)
        if ci[I_HFLAG] == 1:
            return hier_check(G, assign, rm, r, k)
        return hier_check(G, assign, rm, r, -1)
    return True


@njit(cache=True)
def count_eligible_pairs(G, ci, assign, sizes, r, cnt):
    c = 0
    for k in range(r):
        for k2 in range(k + 1, r):
            if pair_eligible(G, ci, assign, sizes, r, k, k2, cnt):
                c += 1
    return c


@njit(cache=True)
def link_eligible(G, ci, assign, sizes, r, e, pres):
    k = assign[G[3][e]]
    k2 = assign[G[4][e]]
    if not merged_valid(sizes, r, k, k2, ci):
        return False
    if ci[I_HIER] == 1 and not edge_in_eta_boundary(G, e, k, k2, pres):
        return False
    return True


@njit(cache=True)
def count_eligible_links(G, ci, assign, sizes, r, links, pres):
    c = 0
    for t in range(r - 1):
        if link_eligible(G, ci, assign, sizes, r, links[t], pres):
            c += 1
    return c


@njit(cache=True)
def mergesplit_step(G, ci, cf, jc, r, assign, sizes, tpar, tpe, links, K, st):
    """One Metropolis-Hastings merge-split step, in place.  Returns 1 if accepted."""
    V = assign.shape[0]
    space = ci[I_SPACE]
    hier = ci[I_HIER] == 1
    rho = cf[F_RHO]
    if r < 2:
        return 0
    ident = identity_map(r)
    cnt, within = pair_counts(G, assign, ident, r)
    pres = presence(G, assign, ident, r)
    link_t = -1
    if space == SPACE_LINKING:
        n_el = count_eligible_links(G, ci, assign, sizes, r, links, pres)
        if n_el == 0:
            return 0
        pick = randint(st, n_el)
        for t in range(r - 1):
            if link_eligible(G, ci, assign, sizes, r, links[t], pres):
                if pick == 0:
                    link_t = t
                    break
                pick -= 1
        e_old = links[link_t]
        k = assign[G[3][e_old]]
        k2 = assign[G[4][e_old]]
    else:
        n_el = count_eligible_pairs(G, ci, assign, sizes, r, cnt)
        if n_el == 0:
            return 0
        pick = randint(st, n_el)
        k = -1
        k2 = -1
        for a in range(r):
            for b in range(a + 1, r):
                if k < 0 and pair_eligible(G, ci, assign, sizes, r, a, b, cnt):
                    if pick == 0:
                        k = a
                        k2 = b
                    pick -= 1
    rm = merge_map(r, k, k2)
    tmp = merged_sizes(sizes, r, k, k2)
    A, B, npairs = schedule_oriented(tmp, r - 1, r - 2, ci)
    verts = np.empty(V, dtype=np.int64)
    m = collect(assign, rm, k, verts)
    parent = np.empty(V, dtype=np.int64)
    pedge = np.empty(V, dtype=np.int64)
    order = np.empty(m, dtype=np.int64)
    loc = np.empty(V, dtype=np.int64)
    got = draw_tree(G, hier, assign, rm, k, verts, m, st, parent, pedge, order, loc)
    if got != m:
        return 0
    sub = np.empty(V)
    total = subtree_pops(G, order, m, parent, sub)
    cv, cj, lp_new = choose_cut(order, m, parent, pedge, sub, total, A, B, npairs, ci, cf, K, st)
    if cv < 0:
        return 0
    inside = np.zeros(V, dtype=np.bool_)
    mark_subtree(order, m, parent, cv, inside)
    new_assign = assign.copy()
    new_sizes = sizes.copy()
    for i in range(m):
        v = verts[i]
        new_assign[v] = k2 if inside[v] else k
    new_sizes[k2] = A[cj]
    new_sizes[k] = B[cj]
    if hier and not hier_check(G, new_assign, ident, r, -1):
        return 0
    cnt_n, within_n = pair_counts(G, new_assign, ident, r)
    pres_n = presence(G, new_assign, ident, r)
    new_tpar = tpar
    new_tpe = tpe
    if space >= SPACE_FOREST:
        new_tpar = tpar.copy()
        new_tpe = tpe.copy()
        for i in range(m):
            v = verts[i]
            new_tpar[v] = parent[v]
            new_tpe[v] = pedge[v]
        new_tpar[cv] = -1
        new_tpe[cv] = -1
    new_links = links
    if space == SPACE_LINKING:
        new_links = links.copy()
        new_links[link_t] = pedge[cv]
        n_el_new = count_eligible_links(G, ci, new_assign, new_sizes, r, new_links, pres_n)
    else:
        n_el_new = count_eligible_pairs(G, ci, new_assign, new_sizes, r, cnt_n)
    if n_el_new == 0:
        return 0
    lr = math.log(n_el) - math.log(n_el_new)
    if ci[I_HASJ] == 1:
        lr += score_j(G, assign, ident, r, jc) - score_j(G, new_assign, ident, r, jc)
    if ci[I_RHO1] == 0:
        lk = np.empty(V, dtype=np.int64)
        old_t = 0.0
        new_t = 0.0
        for lab_k in (k, k2):
            mm = collect(assign, ident, lab_k, lk)
            old_t += log_tau_region(G, hier, assign, ident, lab_k, lk, mm, loc)
            mm = collect(new_assign, ident, lab_k, lk)
            new_t += log_tau_region(G, hier, new_assign, ident, lab_k, lk, mm, loc)
        lr += (rho - 1.0) * (new_t - old_t)
    if space == SPACE_GRAPH:
        c_old = cnt[k, k2]
        c_new = cnt_n[k, k2]
        if hier:
            c_old = eta_boundary_count(k, k2, cnt, within, pres)
            c_new = eta_boundary_count(k, k2, cnt_n, within_n, pres_n)
        if c_old == 0 or c_new == 0:
            return 0
        lr += math.log(c_old) - math.log(c_new)
    elif space == SPACE_FOREST:
        b_old = log_effective_boundary(G, assign, ident, tpar, tpe, k, k2, sizes[k], sizes[k2],
                                       A, B, npairs, ci, cf, hier, pres)
        b_new = log_effective_boundary(G, new_assign, ident, new_tpar, new_tpe, k, k2, new_sizes[k],
                                       new_sizes[k2], A, B, npairs, ci, cf, hier, pres_n)
        if b_old == NEG_INF or b_new == NEG_INF:
            return 0
        lr += b_old - b_new
    else:
        e_old = links[link_t]
        u = G[3][e_old]
        v = G[4][e_old]
        if assign[u] != k:
            u, v = v, u
        lp_old = log_pcut_joined(G, assign, ident, tpar, tpe, k, k2, u, v, e_old,
                                 sizes[k], sizes[k2], A, B, npairs, ci, cf)
        if lp_old == NEG_INF:
            return 0
        lr += log_linking_count(cnt, within, r, ident, hier) - log_linking_count(cnt_n, within_n, r, ident, hier)
        lr += lp_old - lp_new
    if lr < 0.0 and math.log(uniform(st)) >= lr:
        return 0
    for v in range(V):
        assign[v] = new_assign[v]
    for i in range(r):
        sizes[i] = new_sizes[i]
    if space >= SPACE_FOREST:
        for v in range(V):
            tpar[v] = new_tpar[v]
            tpe[v] = new_tpe[v]
    if space == SPACE_LINKING:
        links[link_t] = new_links[link_t]
    return 1


# ----------------------------------------------------------------------
# K estimation probes
# ----------------------------------------------------------------------


@njit(cache=True)
def draw_index(cumw, st):
    u = uniform(st) * cumw[cumw.shape[0] - 1]
    j = np.searchsorted(cumw, u, side="right")
    return min(j, cumw.shape[0] - 1)


@njit(cache=True)
def probe_split_ok(G, ci, cf, r, assign_all, sizes_all, cumw, n_probe, key):
    """Largest balanced-cut count seen on trees drawn on selected multidistricts."""
    V = assign_all.shape[1]
    best = 0
    for t in range(n_probe):
        st = np.empty(2, dtype=np.uint64)
        st[0] = derive_key(key, t)
        st[1] = 0
        i = draw_index(cumw, st)
        assign = assign_all[i]
        sizes = sizes_all[i]
        k = select_multidistrict(sizes, r, ci, st)
        if k < 0:
            continue
        A, B, npairs = schedule_oriented(sizes, r, k, ci)
        ident = identity_map(r)
        verts = np.empty(V, dtype=np.int64)
        m = collect(assign, ident, k, verts)
        parent = np.empty(V, dtype=np.int64)
        pedge = np.empty(V, dtype=np.int64)
        order = np.empty(m, dtype=np.int64)
        loc = np.empty(V, dtype=np.int64)
        got = draw_tree(G, ci[I_HIER] == 1, assign, ident, k, verts, m, st, parent, pedge, order, loc)
        if got != m:
            continue
        sub = np.empty(V)
        total = subtree_pops(G, order, m, parent, sub)
        b = count_balanced(order, m, sub, total, A, B, npairs, cf)
        if b > best:
            best = b
    return best


@njit(cache=True)
def probe_merge_ok(G, ci, cf, r, assign_all, sizes_all, cumw, n_probe, key):
    """Largest balanced-cut count seen on trees drawn on merged eligible pairs."""
    V = assign_all.shape[1]
    best = 0
    for t in range(n_probe):
        st = np.empty(2, dtype=np.uint64)
        st[0] = derive_key(key, t)
        st[1] = 0
        i = draw_index(cumw, st)
        assign = assign_all[i]
        sizes = sizes_all[i]
        ident = identity_map(r)
        cnt, within = pair_counts(G, assign, ident, r)
        n_el = count_eligible_pairs(G, ci, assign, sizes, r, cnt)
        if n_el == 0:
            continue
        pick = randint(st, n_el)
        k = -1
        k2 = -1
        for a in range(r):
            for b in range(a + 1, r):
                if k < 0 and pair_eligible(G, ci, assign, sizes, r, a, b, cnt):
                    if pick == 0:
                        k = a
                        k2 = b
                    pick -= 1
        rm = merge_map(r, k, k2)
        tmp = merged_sizes(sizes, r, k, k2)
        A, B, npairs = schedule_oriented(tmp, r - 1, r - 2, ci)
        verts = np.empty(V, dtype=np.int64)
        m = collect(assign, rm, k, verts)
        parent = np.empty(V, dtype=np.int64)
        pedge = np.empty(V, dtype=np.int64)
        order = np.empty(m, dtype=np.int64)
        loc = np.empty(V, dtype=np.int64)
        got = draw_tree(G, ci[I_HIER] == 1, assign, rm, k, verts, m, st, parent, pedge, order, loc)
        if got != m:
            continue
        sub = np.empty(V)
        total = subtree_pops(G, order, m, parent, sub)
        b = count_balanced(order, m, sub, total, A, B, npairs, cf)
        if b > best:
            best = b
    return best


# ----------------------------------------------------------------------
# batch drivers (one contiguous particle range per call, GIL released)
# ----------------------------------------------------------------------


@njit(cache=True, nogil=True)
def split_batch(lo, hi, G, ci, cf, jc, r, K, max_attempts, key_prop, key_parent, cumw, defer, prev_logw,
                a_old, s_old, tp_old, te_old, l_old, a_new, s_new, tp_new, te_new, l_new,
                out_logw, out_parent, out_attempts):
    """Advance particles ``lo..hi-1`` from stage ``r`` to ``r + 1``.

    Returns ``-1`` on success, otherwise the index of a particle that hit
    the rejection cap.
    """
    for i in range(lo, hi):
        st = np.empty(2, dtype=np.uint64)
        st[0] = derive_key(key_prop, i)
        st[1] = 0
        sp = np.empty(2, dtype=np.uint64)
        sp[0] = derive_key(key_parent, i)
        sp[1] = 0
        att = 0
        while True:
            if defer and att == 0:
                j = i
            else:
                j = draw_index(cumw, sp)
            att += 1
            ok = propose_split(G, ci, cf, r, a_old[j], s_old[j], tp_old[j], te_old[j], l_old[j], K, st,
                               a_new[i], s_new[i], tp_new[i], te_new[i], l_new[i])
            if ok == 1:
                break
            if att >= max_attempts:
                out_attempts[i] = att
                return i
        out_parent[i] = j
        out_attempts[i] = att
        lw = log_weight(G, ci, cf, jc, r + 1, a_new[i], s_new[i], tp_new[i], te_new[i], l_new[i], K)
        if defer:
            lw += prev_logw[i]
        out_logw[i] = lw
    return -1


@njit(cache=True, nogil=True)
def mcmc_batch(lo, hi, G, ci, cf, jc, r, K, n_steps, key, a, s, tp, te, l, out_accepted):
    for i in range(lo, hi):
        st = np.empty(2, dtype=np.uint64)
        st[0] = derive_key(key, i)
        st[1] = 0
        acc = 0
        for _ in range(n_steps):
            acc += mergesplit_step(G, ci, cf, jc, r, a[i], s[i], tp[i], te[i], l[i], K, st)
        out_accepted[i] += acc


@njit(cache=True, nogil=True)
def initial_trees(lo, hi, G, hier, key, a, tp, te):
    """Uniform spanning trees of the whole map for the one-region particles."""
    V = a.shape[1]
    ident = identity_map(1)
    verts = np.arange(V)
    for i in range(lo, hi):
        st = np.empty(2, dtype=np.uint64)
        st[0] = derive_key(key, i)
        st[1] = 0
        order = np.empty(V, dtype=np.int64)
        loc = np.empty(V, dtype=np.int64)
        draw_tree(G, hier, a[i], ident, 0, verts, V, st, tp[i], te[i], order, loc)
