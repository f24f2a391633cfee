"""NumPy implementations of the hot kernels.

Used when the compiled extension is unavailable (or disabled through
``MPPSYNTH_PURE_PYTHON=1``).  Every function mirrors the signature of its
counterpart in ``_ckernels.pyx`` and expects already-validated,
C-contiguous inputs.
"""
import numpy as np
from scipy.special import gammaln

_CHUNK = 512


def pair_counts(xy, h2):
    """Unordered pairs ``i < j`` with squared distance ``<= h2[m]``, per m."""
    n = xy.shape[0]
    m = h2.shape[0]
    diff = np.zeros(m + 1, dtype=np.int64)
    if n < 2 or m == 0:
        return np.zeros(m, dtype=np.int64)
    hmax = h2[-1]
    for start in range(0, n - 1, _CHUNK):
        stop = min(start + _CHUNK, n - 1)
        block = xy[start:stop]
        dx = block[:, 0][:, None] - xy[None, :, 0]
        dy = block[:, 1][:, None] - xy[None, :, 1]
        d2 = dx * dx + dy * dy
        rows = np.arange(start, stop)[:, None]
        upper = np.arange(n)[None, :] > rows
        d2 = d2[upper & (d2 <= hmax)]
        diff += np.bincount(np.searchsorted(h2, d2, side="left"), minlength=m + 1)
    return np.cumsum(diff[:m])


def risk_counts(conf_xy, conf_combo, conf_mark, syn_xy, syn_combo, syn_mark,
                eps_s2, eps_a):
    n = conf_xy.shape[0]
    close = np.zeros(n, dtype=np.int64)
    both = np.zeros(n, dtype=np.int64)
    similar = np.zeros(n, dtype=np.int64)
    if syn_xy.shape[0] == 0:
        return close, both, similar
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        dx = conf_xy[start:stop, 0][:, None] - syn_xy[None, :, 0]
        dy = conf_xy[start:stop, 1][:, None] - syn_xy[None, :, 1]
        is_close = (dx * dx + dy * dy) < eps_s2
        is_sim = (conf_combo[start:stop, None] == syn_combo[None, :]) & (
            np.abs(conf_mark[start:stop, None] - syn_mark[None, :]) <= eps_a
        )
        close[start:stop] = is_close.sum(axis=1)
        similar[start:stop] = is_sim.sum(axis=1)
        both[start:stop] = (is_close & is_sim).sum(axis=1)
    return close, both, similar


def _log_terms(eta, lo, hi):
    support = np.arange(lo, hi + 1, dtype=np.float64)
    return eta[:, None] * support[None, :] - gammaln(support + 1.0)[None, :]


def trunc_pois_lognorm(eta, lo, hi):
    t = _log_terms(eta, lo, hi)
    tmax = t.max(axis=1)
    return tmax + np.log(np.exp(t - tmax[:, None]).sum(axis=1))


def trunc_pois_moments(eta, lo, hi):
    t = _log_terms(eta, lo, hi)
    w = np.exp(t - t.max(axis=1)[:, None])
    w /= w.sum(axis=1)[:, None]
    support = np.arange(lo, hi + 1, dtype=np.float64)
    mean = w @ support
    var = w @ (support * support) - mean * mean
    return mean, np.maximum(var, 0.0)


def trunc_pois_sample(eta, u, lo, hi):
    t = _log_terms(eta, lo, hi)
    w = np.exp(t - t.max(axis=1)[:, None])
    cdf = np.cumsum(w, axis=1)
    target = u * cdf[:, -1]
    idx = (cdf < target[:, None]).sum(axis=1)
    return lo + np.minimum(idx, hi - lo).astype(np.int64)
