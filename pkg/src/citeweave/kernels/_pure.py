"""Pure-Python fallback kernels for the community-detection inner loops.

These mirror the compiled kernels in ``_core`` operation for operation:
identical visit order, identical candidate enumeration, identical
floating-point expression order. Both backends must produce bit-identical
partitions for the same inputs, so any change here must be replicated there.

mode 0 = resolution-scaled modularity (penalty gamma*k_v*K_C/(2m)),
mode 1 = constant Potts model (penalty gamma*size_v*size_C).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "pure"


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
    n = len(order)
    indptr_l = indptr.tolist()
    indices_l = indices.tolist()
    weights_l = weights.tolist()
    strength_l = strength.tolist()
    size_l = node_size.tolist()
    memb = membership.tolist()
    cstr = comm_strength.tolist()
    csize = comm_size.tolist()
    free = free_ids.tolist()
    inv_two_m = 1.0 / two_m if two_m > 0.0 else 0.0

    queue = order.tolist()
    head = 0
    in_queue = bytearray(len(memb))
    for v in queue:
        in_queue[v] = 1
    w_to = [0.0] * len(memb)
    seen = bytearray(len(memb))
    stack = [0] * len(memb)
    moves = 0

    while head < len(queue):
        v = queue[head]
        head += 1
        if head >= 65536:
            # drop the spent prefix so the list cannot grow unboundedly
            del queue[:head]
            head = 0
        in_queue[v] = 0
        a = memb[v]
        top = 0
        for e in range(indptr_l[v], indptr_l[v + 1]):
            c = memb[indices_l[e]]
            if not seen[c]:
                seen[c] = 1
                stack[top] = c
                top += 1
            w_to[c] += weights_l[e]

        ks = strength_l[v]
        sz = size_l[v]
        cstr[a] -= ks
        csize[a] -= sz

        best_comm = -1
        best_gain = 0.0
        if mode == 0:
            g = w_to[a] - gamma * ks * cstr[a] * inv_two_m
        else:
            g = w_to[a] - gamma * sz * csize[a]
        if g >= best_gain:
            best_comm = a
            best_gain = g
        for i in range(top):
            c = stack[i]
            if c == a:
                continue
            if mode == 0:
                g = w_to[c] - gamma * ks * cstr[c] * inv_two_m
            else:
                g = w_to[c] - gamma * sz * csize[c]
            if g > best_gain:
                best_gain = g
                best_comm = c

        if best_comm == -1:
            n_free -= 1
            best_comm = free[n_free]
        cstr[best_comm] += ks
        csize[best_comm] += sz
        memb[v] = best_comm

        if best_comm != a:
            moves += 1
            if csize[a] == 0:
                # community ids never exceed n, so the free stack cannot overflow
                free[n_free] = a
                n_free += 1
            for e in range(indptr_l[v], indptr_l[v + 1]):
                u = indices_l[e]
                if memb[u] != best_comm and not in_queue[u]:
                    in_queue[u] = 1
                    queue.append(u)

        for i in range(top):
            c = stack[i]
            seen[c] = 0
            w_to[c] = 0.0

    membership[:] = memb
    comm_strength[:] = cstr
    comm_size[:] = csize
    free_ids[:] = free
    return moves, n_free


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

    Starts from singletons; a node may merge into an adjacent refined
    community of the same parent community when both sides pass the
    connectivity threshold and the merge does not lower quality. The target
    is picked uniformly among the eligible communities and staying put,
    using the node's entry in ``rand_words``; the randomness lets repeated
    runs explore aggregations that greedy selection would never build.
    Returns the refined membership (community id = representative node id).
    """
    n = len(order)
    indptr_l = indptr.tolist()
    indices_l = indices.tolist()
    weights_l = weights.tolist()
    strength_l = strength.tolist()
    size_l = node_size.tolist()
    memb = membership.tolist()
    cstr = comm_strength.tolist()
    csize = comm_size.tolist()
    words = rand_words.tolist()
    inv_two_m = 1.0 / two_m if two_m > 0.0 else 0.0

    refined = list(range(n))
    ref_strength = strength_l[:]
    ref_size = size_l[:]
    ref_nnodes = [1] * n
    ref_cut = [0.0] * n
    for v in range(n):
        a = memb[v]
        acc = 0.0
        for e in range(indptr_l[v], indptr_l[v + 1]):
            if memb[indices_l[e]] == a:
                acc += weights_l[e]
        ref_cut[v] = acc

    w_to = [0.0] * n
    seen = bytearray(n)
    stack = [0] * n
    eligible = [0] * n

    for v in order.tolist():
        rv = refined[v]
        if ref_nnodes[rv] > 1:
            continue
        a = memb[v]
        ks = strength_l[v]
        sz = size_l[v]
        if mode == 0:
            thr = gamma * ks * (cstr[a] - ks) * inv_two_m
        else:
            thr = gamma * sz * (csize[a] - sz)
        if ref_cut[rv] < thr:
            continue

        top = 0
        for e in range(indptr_l[v], indptr_l[v + 1]):
            u = indices_l[e]
            if memb[u] != a:
                continue
            c = refined[u]
            if not seen[c]:
                seen[c] = 1
                stack[top] = c
                top += 1
            w_to[c] += weights_l[e]

        n_eligible = 0
        for i in range(top):
            c = stack[i]
            if mode == 0:
                thr_c = gamma * ref_strength[c] * (cstr[a] - ref_strength[c]) * inv_two_m
            else:
                thr_c = gamma * ref_size[c] * (csize[a] - ref_size[c])
            if ref_cut[c] < thr_c:
                continue
            if mode == 0:
                g = w_to[c] - gamma * ks * ref_strength[c] * inv_two_m
            else:
                g = w_to[c] - gamma * sz * ref_size[c]
            if g >= 0.0:
                eligible[n_eligible] = c
                n_eligible += 1

        if n_eligible > 0:
            # slot 0 keeps the node where it is
            pick = words[v] % (n_eligible + 1)
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

    return np.asarray(refined, dtype=np.int64)
