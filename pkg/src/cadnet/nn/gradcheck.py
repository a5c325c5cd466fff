"""Central finite-difference gradient checking."""

import numpy as np

from ..exceptions import NumericalError


def numerical_gradient(f, w, step=1e-6):
    """Central differences of scalar ``f`` at flat vector ``w`` (restored afterwards)."""
    w = np.asarray(w)
    grad = np.empty_like(w)
    for i in range(w.size):
        old = w[i]
        w[i] = old + step
        fp = f(w)
        w[i] = old - step
        fm = f(w)
        w[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite loss while perturbing coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic, numeric, scale_floor=1e-5):
    """Entrywise ``|a - n| / max(|a| + |n|, 1e-8, scale_floor * max|a|)``.

    Entries far below the largest gradient entry are compared on the scale
    of that entry: central differences cannot resolve them any better than
    about ``eps * |f| / step`` in absolute terms.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    floor = max(1e-8, scale_floor * float(np.max(np.abs(a), initial=0.0)))
    return np.abs(a - n) / np.maximum(floor, np.abs(a) + np.abs(n))


def finite_diff_check(function, params, step=1e-6, analytic=None,
                      oracle_dtype=np.longdouble):
    """Max relative error between an analytic gradient and central differences.

    ``function(w)`` maps a flat vector to ``(loss, grad)``; pass ``analytic``
    to check a gradient computed elsewhere. ``params`` is the flat point to
    check at and is not modified.

    The analytic gradient is always evaluated at a float64 point. The
    perturbed losses are evaluated in ``oracle_dtype`` (extended precision
    by default), which lowers the cancellation floor of the difference
    quotient (about ``eps * |f| / step``) by three orders of magnitude;
    ``function`` must propagate the dtype of ``w``. Pass ``np.float64``
    for functions that cannot. See :func:`relative_error` for the metric.
    """
    w = np.array(params, dtype=np.float64)
    loss, grad = function(w.copy())
    if not np.isfinite(loss):
        raise NumericalError("loss is not finite at the check point")
    grad = np.asarray(grad if analytic is None else analytic, dtype=np.float64)
    numeric = numerical_gradient(lambda v: function(v)[0], w.astype(oracle_dtype), step)
    if grad.size == 0:
        return 0.0
    return float(np.max(relative_error(grad, numeric)))
