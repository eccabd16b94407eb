"""Inner loops: bit packing, unpacking and grouped adaptive rounding.

Each kernel has a numba version (``*_nb``) and a vectorised numpy version
(``*_np``). The public names dispatch on ``_jit.USE_NUMBA``.
"""
import numpy as np

from ._jit import USE_NUMBA, njit

# -- packing ---------------------------------------------------------------


@njit
def pack_words_nb(pattern, k, cap, nwords):
    # pattern: uint64 array already masked to k bits
    out = np.zeros(nwords, dtype=np.uint64)
    kk = np.uint64(k)
    for i in range(pattern.shape[0]):
        w = i // cap
        slot = np.uint64(i - w * cap)
        out[w] |= pattern[i] << (slot * kk)
    return out


def pack_words_np(pattern, k, cap, nwords):
    n = pattern.shape[0]
    padded = np.zeros(nwords * cap, dtype=np.uint64)
    padded[:n] = pattern
    shifts = (np.arange(cap, dtype=np.uint64) * np.uint64(k))[None, :]
    return np.bitwise_or.reduce(padded.reshape(nwords, cap) << shifts, axis=1)


@njit
def unpack_words_nb(words, k, cap, n):
    out = np.empty(n, dtype=np.int64)
    kk = np.uint64(k)
    mask = (np.uint64(1) << kk) - np.uint64(1)
    half = np.int64(1) << (k - 1)
    full = np.int64(1) << k
    for i in range(n):
        w = i // cap
        slot = np.uint64(i - w * cap)
        v = np.int64((words[w] >> (slot * kk)) & mask)
        if v >= half:
            v -= full
        out[i] = v
    return out


def unpack_words_np(words, k, cap, n):
    shifts = (np.arange(cap, dtype=np.uint64) * np.uint64(k))[None, :]
    mask = np.uint64((1 << k) - 1)
    raw = ((words[:, None] >> shifts) & mask).reshape(-1)[:n].astype(np.int64)
    return np.where(raw >= (1 << (k - 1)), raw - (1 << k), raw)


@njit
def padding_clear_nb(words, k, cap, n):
    """True when every bit above the last used slot of the last word is 0."""
    if words.shape[0] == 0:
        return True
    used = n - (words.shape[0] - 1) * cap
    nbits = used * k
    if nbits >= 64:
        return True
    return (words[-1] >> np.uint64(nbits)) == np.uint64(0)


def padding_clear_np(words, k, cap, n):
    if words.shape[0] == 0:
        return True
    nbits = (n - (words.shape[0] - 1) * cap) * k
    if nbits >= 64:
        return True
    return bool((int(words[-1]) >> nbits) == 0)


# -- adaptive rounding -----------------------------------------------------


@njit
def _rtn_nb(x):
    if x >= 0.0:
        return np.floor(x + 0.5)
    return -np.floor(-x + 0.5)


@njit
def adaptive_rows_nb(x):
    g, m = x.shape
    out = np.empty((g, m), dtype=np.int64)
    for row in range(g):
        d = np.empty(m)
        err = 0.0
        for j in range(m):
            r = np.rint(x[row, j])
            out[row, j] = np.int64(r)
            d[j] = x[row, j] - r
            err += d[j]
        flips = np.int64(_rtn_nb(err))
        if flips == 0:
            continue
        if flips > 0:
            order = np.argsort(-d, kind="mergesort")
            step = 1
        else:
            order = np.argsort(d, kind="mergesort")
            step = -1
            flips = -flips
        for t in range(flips):
            out[row, order[t]] += step
    return out


def _rtn_np(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def adaptive_rows_np(x):
    r = np.rint(x)
    d = x - r
    flips = _rtn_np(d.sum(axis=1)).astype(np.int64)
    out = r.astype(np.int64)
    if not flips.any():
        return out
    key = np.where(flips[:, None] > 0, -d, d)
    order = np.argsort(key, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(x.shape[1])[None, :].repeat(x.shape[0], 0), axis=1)
    chosen = ranks < np.abs(flips)[:, None]
    out += np.sign(flips)[:, None] * chosen
    return out


if USE_NUMBA:
    pack_words = pack_words_nb
    unpack_words = unpack_words_nb
    padding_clear = padding_clear_nb
    adaptive_rows = adaptive_rows_nb
else:
    pack_words = pack_words_np
    unpack_words = unpack_words_np
    padding_clear = padding_clear_np
    adaptive_rows = adaptive_rows_np
