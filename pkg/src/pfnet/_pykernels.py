"""Pure numpy implementations of the hot loops.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the compiled versions are tested against.
"""
import numpy as np

_CHUNK = 512


def log_convolve(a, b, out_len):
    """Return ``c[j] = log(sum_i exp(a[i] + b[j - i]))`` for ``j < out_len``.

    Entries equal to ``-inf`` stand for zero weight. Each output entry is
    accumulated with its own max shift, so entries of very different
    magnitude keep full relative precision.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.full(out_len, -np.inf)
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        return out
    # b_pad[J + k] = b[k]; index J - i picks b[j - i]
    width = min(out_len, na)
    ai = a[:width]
    for start in range(0, out_len, _CHUNK):
        js = np.arange(start, min(out_len, start + _CHUNK))
        idx = js[:, None] - np.arange(width)[None, :]
        valid = (idx >= 0) & (idx < nb)
        terms = np.where(valid, ai[None, :] + b[np.clip(idx, 0, nb - 1)], -np.inf)
        mx = terms.max(axis=1)
        finite = np.isfinite(mx)
        with np.errstate(invalid="ignore"):
            s = np.exp(terms[finite] - mx[finite, None]).sum(axis=1)
        out[js[finite]] = mx[finite] + np.log(s)
    return out


def convolve_truncated(p, q, out_len):
    """Direct convolution of two nonnegative arrays, truncated to ``out_len``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    full = np.convolve(p[:out_len], q[:out_len])
    out = np.zeros(out_len)
    k = min(out_len, len(full))
    out[:k] = full[:k]
    return out


def char_sum(pmf, theta):
    """Return ``sum_x pmf[x] * exp(1j * x * theta)`` for each theta."""
    pmf = np.asarray(pmf, dtype=float)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x = np.arange(len(pmf))
    out = np.empty(len(theta), dtype=complex)
    for start in range(0, len(theta), _CHUNK):
        th = theta[start:start + _CHUNK]
        out[start:start + len(th)] = np.exp(1j * np.outer(th, x)) @ pmf
    return out
