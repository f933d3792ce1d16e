# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled kernels for the community-detection inner loops.

These mirror the pure-Python kernels in ``_pure`` operation for operation:
identical visit order, identical candidate enumeration, identical
floating-point expression order (the extension is built with floating-point
contraction disabled so no FMA creeps in). Both backends must produce
bit-identical partitions for the same inputs, so any change here must be
replicated there.

mode 0 = resolution-scaled modularity (penalty gamma*k_v*K_C/(2m)),
mode 1 = constant Potts model (penalty gamma*size_v*size_C).
"""

import numpy as np


BACKEND_NAME = "cython"


def move_nodes(
    indptr,
    indices,
    weights,
    strength,
    node_size,
    membership,
    comm_strength,
    comm_size,
    free_ids,
    n_free,
    order,
    gamma,
    mode,
    two_m,
):
    """Queue-based local moving. Mutates membership/comm arrays in place.

    Returns (accepted moves, remaining free community ids).
    """
    cdef long long[::1] indptr_v = indptr
    cdef long long[::1] indices_v = indices
    cdef double[::1] weights_v = weights
    cdef double[::1] strength_v = strength
    cdef long long[::1] size_v = node_size
    cdef long long[::1] memb = membership
    cdef double[::1] cstr = comm_strength
    cdef long long[::1] csize = comm_size
    cdef long long[::1] free = free_ids
    cdef long long[::1] order_v = order
    cdef long long nfree = n_free
    cdef double gamma_c = gamma
    cdef int mode_c = mode
    cdef double two_m_c = two_m

    cdef long long n = order_v.shape[0]
    cdef double inv_two_m = 1.0 / two_m_c if two_m_c > 0.0 else 0.0

    queue_arr = np.empty(n + 65537, dtype=np.int64)
    cdef long long[::1] queue = queue_arr
    cdef long long head = 0
    cdef long long qlen = n
    in_queue_arr = np.ones(n, dtype=np.uint8)
    cdef unsigned char[::1] in_queue = in_queue_arr
    w_to_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] w_to = w_to_arr
    seen_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] seen = seen_arr
    stack_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] stack = stack_arr

    cdef long long moves = 0
    cdef long long v, a, u, c, e, i, top, best_comm, ks_i, sz
    cdef double ks, g, best_gain

    for i in range(n):
        queue[i] = order_v[i]

    while head < qlen:
        v = queue[head]
        head += 1
        if head >= 65536:
            # drop the spent prefix so the buffer cannot overflow
            for i in range(qlen - head):
                queue[i] = queue[head + i]
            qlen -= head
            head = 0
        in_queue[v] = 0
        a = memb[v]
        top = 0
        for e in range(indptr_v[v], indptr_v[v + 1]):
            c = memb[indices_v[e]]
            if seen[c] == 0:
                seen[c] = 1
                stack[top] = c
                top += 1
            w_to[c] += weights_v[e]

        ks = strength_v[v]
        sz = size_v[v]
        cstr[a] -= ks
        csize[a] -= sz

        best_comm = -1
        best_gain = 0.0
        if mode_c == 0:
            g = w_to[a] - gamma_c * ks * cstr[a] * inv_two_m
        else:
            g = w_to[a] - gamma_c * sz * csize[a]
        if g >= best_gain:
            best_comm = a
            best_gain = g
        for i in range(top):
            c = stack[i]
            if c == a:
                continue
            if mode_c == 0:
                g = w_to[c] - gamma_c * ks * cstr[c] * inv_two_m
            else:
                g = w_to[c] - gamma_c * sz * csize[c]
            if g > best_gain:
                best_gain = g
                best_comm = c

        if best_comm == -1:
            nfree -= 1
            best_comm = free[nfree]
        cstr[best_comm] += ks
        csize[best_comm] += sz
        memb[v] = best_comm

        if best_comm != a:
            moves += 1
            if csize[a] == 0:
                # community ids never exceed n, so the free stack cannot overflow
                free[nfree] = a
                nfree += 1
            for e in range(indptr_v[v], indptr_v[v + 1]):
                u = indices_v[e]
                if memb[u] != best_comm and in_queue[u] == 0:
                    in_queue[u] = 1
                    queue[qlen] = u
                    qlen += 1

        for i in range(top):
            c = stack[i]
            seen[c] = 0
            w_to[c] = 0.0

    return moves, nfree


def refine(
    indptr,
    indices,
    weights,
    strength,
    node_size,
    membership,
    comm_strength,
    comm_size,
    order,
    rand_words,
    gamma,
    mode,
    two_m,
):
    """Merge well-connected singletons within their communities.

    Same contract as the pure backend: eligible targets (threshold-passing,
    non-negative gain) are collected in neighbor-scan order and one of them
    or staying put is picked by the node's entry in ``rand_words``. Returns
    the refined membership (community id = representative node id).
    """
    cdef long long[::1] indptr_v = indptr
    cdef long long[::1] indices_v = indices
    cdef double[::1] weights_v = weights
    cdef double[::1] strength_v = strength
    cdef long long[::1] size_v = node_size
    cdef long long[::1] memb = membership
    cdef double[::1] cstr = comm_strength
    cdef long long[::1] csize = comm_size
    cdef long long[::1] order_v = order
    cdef unsigned long long[::1] words = rand_words
    cdef double gamma_c = gamma
    cdef int mode_c = mode
    cdef double two_m_c = two_m

    cdef long long n = order_v.shape[0]
    cdef double inv_two_m = 1.0 / two_m_c if two_m_c > 0.0 else 0.0

    refined_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] refined = refined_arr
    ref_strength_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] ref_strength = ref_strength_arr
    ref_size_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] ref_size = ref_size_arr
    ref_nnodes_arr = np.ones(n, dtype=np.int64)
    cdef long long[::1] ref_nnodes = ref_nnodes_arr
    ref_cut_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] ref_cut = ref_cut_arr
    w_to_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] w_to = w_to_arr
    seen_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] seen = seen_arr
    stack_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] stack = stack_arr
    eligible_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] eligible = eligible_arr

    cdef long long v, rv, a, u, c, e, i, idx, top, n_eligible, best_comm, sz
    cdef double ks, g, acc, thr, thr_c
    cdef unsigned long long pick

    for v in range(n):
        refined[v] = v
        ref_strength[v] = strength_v[v]
        ref_size[v] = size_v[v]

    for v in range(n):
        a = memb[v]
        acc = 0.0
        for e in range(indptr_v[v], indptr_v[v + 1]):
            if memb[indices_v[e]] == a:
                acc += weights_v[e]
        ref_cut[v] = acc

    for idx in range(n):
        v = order_v[idx]
        rv = refined[v]
        if ref_nnodes[rv] > 1:
            continue
        a = memb[v]
        ks = strength_v[v]
        sz = size_v[v]
        if mode_c == 0:
            thr = gamma_c * ks * (cstr[a] - ks) * inv_two_m
        else:
            thr = gamma_c * sz * (csize[a] - sz)
        if ref_cut[rv] < thr:
            continue

        top = 0
        for e in range(indptr_v[v], indptr_v[v + 1]):
            u = indices_v[e]
            if memb[u] != a:
                continue
            c = refined[u]
            if seen[c] == 0:
                seen[c] = 1
                stack[top] = c
                top += 1
            w_to[c] += weights_v[e]

        n_eligible = 0
        for i in range(top):
            c = stack[i]
            if mode_c == 0:
                thr_c = gamma_c * ref_strength[c] * (cstr[a] - ref_strength[c]) * inv_two_m
            else:
                thr_c = gamma_c * ref_size[c] * (csize[a] - ref_size[c])
            if ref_cut[c] < thr_c:
                continue
            if mode_c == 0:
                g = w_to[c] - gamma_c * ks * ref_strength[c] * inv_two_m
            else:
                g = w_to[c] - gamma_c * sz * ref_size[c]
            if g >= 0.0:
                eligible[n_eligible] = c
                n_eligible += 1

        if n_eligible > 0:
            # slot 0 keeps the node where it is
            pick = words[v] % <unsigned long long> (n_eligible + 1)
            if pick > 0:
                best_comm = eligible[pick - 1]
                ref_cut[best_comm] = ref_cut[best_comm] + ref_cut[rv] - 2.0 * w_to[best_comm]
                ref_strength[best_comm] += ks
                ref_size[best_comm] += sz
                ref_nnodes[best_comm] += 1
                refined[v] = best_comm

        for i in range(top):
            c = stack[i]
            seen[c] = 0
            w_to[c] = 0.0

    return refined_arr
