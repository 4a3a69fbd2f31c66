"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

Integer work is vectorised with numpy (uint64 arithmetic wraps mod 2**64).
Transcendentals go through :mod:`math` so that results match the C build,
which calls the same libm routines, bit for bit.
"""
import math

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
INV_2_53 = 2.0 ** -53
TWO_PI = 6.283185307179586

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix_array(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64_fill(seed, counter, n):
    steps = np.arange(counter + 1, counter + 1 + n, dtype=np.uint64)
    state = np.uint64(seed & MASK64) + steps * np.uint64(GOLDEN)
    return _mix_array(state)


def box_muller(bits):
    bits = np.asarray(bits, dtype=np.uint64)
    n = bits.shape[0] // 2
    u1 = ((bits[0:2 * n:2] >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * INV_2_53
    u2 = (bits[1:2 * n:2] >> np.uint64(11)).astype(np.float64) * INV_2_53
    out = np.empty(2 * n, dtype=np.float64)
    log, sqrt, cos, sin = math.log, math.sqrt, math.cos, math.sin
    for i, (a, b) in enumerate(zip(u1.tolist(), u2.tolist())):
        r = sqrt(-2.0 * log(a))
        theta = TWO_PI * b
        out[2 * i] = r * cos(theta)
        out[2 * i + 1] = r * sin(theta)
    return out


def permutation(seed, counter, n):
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        bound = i + 1
        threshold = (-bound) % (1 << 64) % bound
        while True:
            counter += 1
            x = _mix_int((seed + counter * GOLDEN) & MASK64)
            if x >= threshold:
                break
        j = x % bound
        perm[i], perm[j] = perm[j], perm[i]
    return np.asarray(perm, dtype=np.int64), counter


def scatter_add_columns(dst, cols, src):
    np.add.at(dst.T, cols, src.T)


def knn_vote(neighbor_labels, n_classes):
    out = np.empty(neighbor_labels.shape[0], dtype=np.int64)
    for q, row in enumerate(neighbor_labels):
        # argmax returns the first maximum, i.e. the smallest class id on ties
        out[q] = np.argmax(np.bincount(row, minlength=n_classes))
    return out


def trust_penalty(high_rank_of_low_nbrs, k):
    r = np.asarray(high_rank_of_low_nbrs, dtype=np.int64)
    return int(np.where(r > k, r - k, 0).sum())
