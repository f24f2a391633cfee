"""Hot numerical kernels with a compiled core and a NumPy fallback.

The Cython extension ``_ckernels`` is used when it has been built; otherwise,
or when the environment variable ``MPPSYNTH_PURE_PYTHON`` is set to a true
value, the NumPy implementations in ``_pykernels`` are used.  ``BACKEND``
reports which one is active.
"""
import os

import numpy as np

from . import _pykernels

_force_python = os.environ.get("MPPSYNTH_PURE_PYTHON", "").lower() in ("1", "true", "yes")

try:
    if _force_python:
        raise ImportError("pure-Python kernels requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def _backend(name):
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def pair_counts(xy, h, backend=None):
    """Count unordered point pairs within each radius.

    Parameters
    ----------
    xy : (n, 2) array
    h : (m,) nondecreasing array of radii

    Returns
    -------
    (m,) int64 array; entry m is the number of pairs ``i < j`` with
    ``||xy[i] - xy[j]|| <= h[m]``.
    """
    xy = np.ascontiguousarray(xy, dtype=np.float64).reshape(-1, 2)
    h = np.asarray(h, dtype=np.float64)
    if np.any(np.diff(h) < 0):
        raise ValueError("radii must be nondecreasing")
    return _backend(backend).pair_counts(xy, np.ascontiguousarray(h * h))


def risk_counts(conf_xy, conf_combo, conf_mark, syn_xy, syn_combo, syn_mark,
                eps_s, eps_a, backend=None):
    """Closeness/similarity counts of synthetic records around confidential ones.

    Returns three int64 arrays over confidential records: the number of
    synthetic records spatially close (distance strictly below ``eps_s``),
    the number both close and attribute-similar (same combination and
    ``|mark difference| <= eps_a``), and the number attribute-similar.
    """
    return _backend(backend).risk_counts(
        np.ascontiguousarray(conf_xy, dtype=np.float64).reshape(-1, 2),
        np.ascontiguousarray(conf_combo, dtype=np.int64),
        np.ascontiguousarray(conf_mark, dtype=np.float64),
        np.ascontiguousarray(syn_xy, dtype=np.float64).reshape(-1, 2),
        np.ascontiguousarray(syn_combo, dtype=np.int64),
        np.ascontiguousarray(syn_mark, dtype=np.float64),
        float(eps_s) ** 2,
        float(eps_a),
    )


def trunc_pois_lognorm(eta, lo, hi, backend=None):
    """``log sum_{y=lo}^{hi} exp(y*eta - log y!)`` for each log-rate ``eta``."""
    eta = np.ascontiguousarray(eta, dtype=np.float64).ravel()
    return _backend(backend).trunc_pois_lognorm(eta, int(lo), int(hi))


def trunc_pois_moments(eta, lo, hi, backend=None):
    """Mean and variance of the Poisson(exp(eta)) law truncated to ``[lo, hi]``."""
    eta = np.ascontiguousarray(eta, dtype=np.float64).ravel()
    return _backend(backend).trunc_pois_moments(eta, int(lo), int(hi))


def trunc_pois_sample(eta, u, lo, hi, backend=None):
    """Inverse-CDF draws from truncated Poisson laws given uniforms ``u``."""
    eta = np.ascontiguousarray(eta, dtype=np.float64).ravel()
    u = np.ascontiguousarray(u, dtype=np.float64).ravel()
    if u.shape != eta.shape:
        raise ValueError("eta and u must have the same length")
    return _backend(backend).trunc_pois_sample(eta, u, int(lo), int(hi))
