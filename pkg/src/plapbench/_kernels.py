"""Compiled inner loops for the Gagliardo double sums."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def pair_sum(coords, vals, outer, weights, table, strides, q):
    """Weighted lattice double sum ``sum_a w_a sum_b |v_a - v_b|^q T(a - b)``.

    ``coords`` are integer lattice coordinates (M, N); ``outer`` selects the
    rows playing the role of ``a``. ``table`` holds the kernel indexed by the
    absolute coordinate offsets (flattened with ``strides``) and must vanish
    at offset zero. Also returns, per outer row, ``sum_b T(a - b)``.
    """
    m = coords.shape[0]
    dim = coords.shape[1]
    k = outer.shape[0]
    rowsum = np.zeros(k)
    total = 0.0
    for ii in range(k):
        a = outer[ii]
        va = vals[a]
        acc = 0.0
        ksum = 0.0
        for b in range(m):
            flat = 0
            for j in range(dim):
                d = coords[a, j] - coords[b, j]
                if d < 0:
                    d = -d
                flat += d * strides[j]
            t = table[flat]
            ksum += t
            diff = va - vals[b]
            if diff != 0.0:
                if diff < 0.0:
                    diff = -diff
                acc += diff ** q * t
        rowsum[ii] = ksum
        total += weights[ii] * acc
    return total, rowsum


@njit(cache=True)
def gagliardo_energy(coords, phi, table, strides, tail, r, delta):
    """Value and gradient of ``sum_{a != b} rho(phi_a - phi_b) T(a - b) + 2 sum_a rho(phi_a) W_a``.

    ``rho(d) = (d^2 + delta)^(r/2) - delta^(r/2)`` (plain ``|d|^r`` when
    ``delta == 0``); ``tail`` holds the weights ``W_a`` of the pairs with one
    point outside the set.
    """
    m = coords.shape[0]
    dim = coords.shape[1]
    grad = np.zeros(m)
    total = 0.0
    base = delta ** (0.5 * r) if delta > 0 else 0.0
    for a in range(m):
        pa = phi[a]
        acc = 0.0
        gacc = 0.0
        for b in range(m):
            if b == a:
                continue
            flat = 0
            for j in range(dim):
                d = coords[a, j] - coords[b, j]
                if d < 0:
                    d = -d
                flat += d * strides[j]
            t = table[flat]
            diff = pa - phi[b]
            if delta > 0:
                s = diff * diff + delta
                acc += (s ** (0.5 * r) - base) * t
                gacc += r * s ** (0.5 * r - 1.0) * diff * t
            elif diff != 0.0:
                ad = diff if diff > 0 else -diff
                acc += ad ** r * t
                gacc += r * ad ** (r - 2.0) * diff * t
        if delta > 0:
            s = pa * pa + delta
            acc += 2.0 * (s ** (0.5 * r) - base) * tail[a]
            gacc += r * s ** (0.5 * r - 1.0) * pa * tail[a]
        elif pa != 0.0:
            ad = pa if pa > 0 else -pa
            acc += 2.0 * ad ** r * tail[a]
            gacc += r * ad ** (r - 2.0) * pa * tail[a]
        total += acc
        grad[a] = 2.0 * gacc
    return total, grad
