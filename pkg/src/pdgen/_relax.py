"""Compiled hmax/hadd kernel.

Same algorithm as ``planner._Relaxation.__call__``: a generalized
Dijkstra over facts with unit action costs. Returns -1 for a dead end.
"""

from __future__ import annotations

import heapq
import logging

import numpy as np

log = logging.getLogger(__name__)

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None


def _kernel(true_facts, nfacts, npre, pre_of_ptr, pre_of_idx, add_ptr, add_idx, goal_mark, ngoals, use_max):
    big = np.int64(1) << 40
    cost = np.full(nfacts, big, np.int64)
    done = np.zeros(nfacts, np.bool_)
    remaining = npre.copy()
    acc = np.zeros(npre.shape[0], np.int64)
    heap = [(np.int64(0), np.int64(0))]
    heap.pop()
    for f in true_facts:
        cost[f] = 0
        heap.append((np.int64(0), np.int64(f)))
    for a in range(npre.shape[0]):
        if npre[a] == 0:
            for k in range(add_ptr[a], add_ptr[a + 1]):
                g = add_idx[k]
                if 1 < cost[g]:
                    cost[g] = 1
                    heap.append((np.int64(1), np.int64(g)))
    heapq.heapify(heap)
    left = ngoals
    while len(heap) > 0 and left > 0:
        c, f = heapq.heappop(heap)
        if done[f]:
            continue
        done[f] = True
        if goal_mark[f]:
            left -= 1
            if left == 0:
                break
        for k in range(pre_of_ptr[f], pre_of_ptr[f + 1]):
            a = pre_of_idx[k]
            if use_max:
                if c > acc[a]:
                    acc[a] = c
            else:
                acc[a] += c
            remaining[a] -= 1
            if remaining[a] == 0:
                ca = acc[a] + 1
                for kk in range(add_ptr[a], add_ptr[a + 1]):
                    g = add_idx[kk]
                    if ca < cost[g]:
                        cost[g] = ca
                        heapq.heappush(heap, (ca, g))
    if left > 0:
        return -1
    total = 0
    for g in range(nfacts):
        if goal_mark[g]:
            if use_max:
                if cost[g] > total:
                    total = cost[g]
            else:
                total += cost[g]
    return total


kernel = None
if numba is not None:
    try:
        kernel = numba.njit(cache=True, nogil=True)(_kernel)
    except Exception as exc:  # pragma: no cover - e.g. unwritable cache dir
        log.debug("caching numba kernel failed (%s); compiling without cache", exc)
        kernel = numba.njit(nogil=True)(_kernel)


def csr(rows) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(rows) + 1, np.int64)
    ptr[1:] = np.cumsum([len(r) for r in rows])
    idx = np.fromiter((x for r in rows for x in r), np.int64, count=int(ptr[-1]))
    return ptr, idx
