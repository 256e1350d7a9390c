"""Central finite-difference gradient checks."""
import numpy as np

from .autograd import Tensor, no_grad

DENOM_FLOOR = 1e-8


def numerical_grad(f, x, eps=1e-4, indices=None):
    """Central differences of scalar ``f`` at ``x`` (a float64 copy is perturbed).

    ``indices`` restricts the probe to some flat positions; the others stay 0.
    """
    base = np.array(x.data, dtype=np.float64)
    flat = base.reshape(-1)
    out = np.zeros_like(flat)
    probe = range(flat.size) if indices is None else indices
    with no_grad():
        for i in probe:
            old = flat[i]
            flat[i] = old + eps
            fp = _scalar(f(Tensor(base)))
            flat[i] = old - eps
            fm = _scalar(f(Tensor(base)))
            flat[i] = old
            out[i] = (fp - fm) / (2 * eps)
    return out.reshape(base.shape)


def _scalar(y):
    v = float(np.asarray(y.data if isinstance(y, Tensor) else y).reshape(()))
    if not np.isfinite(v):
        raise FloatingPointError("gradient check: f(x) is not finite")
    return v


def analytic_grad(f, x):
    t = Tensor(np.array(x.data), requires_grad=True)
    y = f(t)
    _scalar(y)
    y.backward()
    return np.zeros_like(t.data) if t.grad is None else t.grad


def relative_errors(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), DENOM_FLOOR)


def norm_relative_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||): one number for a whole gradient."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    den = max(np.linalg.norm(a), np.linalg.norm(n))
    return float(np.linalg.norm(a - n) / den) if den > 0 else 0.0


def grad_check(f, x, eps=1e-4, indices=None):
    """Worst elementwise relative error between backprop and central differences.

    ``f`` maps a Tensor to a scalar Tensor and must be deterministic. The
    analytic gradient is taken in ``x``'s own dtype; the reference always
    perturbs a float64 copy.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    a = analytic_grad(f, x)
    n = numerical_grad(f, x, eps, indices)
    err = relative_errors(a, n)
    if indices is not None:
        err = err.reshape(-1)[list(indices)]
    return float(err.max()) if err.size else 0.0


def param_grad_check(loss_fn, params, eps=1e-4, per_param=8, rng=None):
    """Check d(loss)/d(param) for a sample of entries of each parameter.

    Returns ``{name: worst relative error}``. ``loss_fn()`` rebuilds the graph
    from the current parameter values each call.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = {p.name: p.grad.copy() for p in params}
    report = {}
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            picks = rng.choice(flat.size, size=min(per_param, flat.size), replace=False)
            worst = 0.0
            for i in picks:
                old = flat[i]
                flat[i] = old + eps
                fp = _scalar(loss_fn())
                flat[i] = old - eps
                fm = _scalar(loss_fn())
                flat[i] = old
                num = (fp - fm) / (2 * eps)
                worst = max(worst, float(relative_errors(analytic[p.name].reshape(-1)[i], num)))
            report[p.name] = worst
    return report


def input_grad_error(f, x, eps=1e-6, max_probes=None, rng=None):
    """Norm-wise relative error of d f / d x.

    Every entry is probed unless ``max_probes`` caps it, in which case a
    random subset is compared.
    """
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    idx = None
    if max_probes is not None and x.size > max_probes:
        rng = np.random.default_rng(0) if rng is None else rng
        idx = np.sort(rng.choice(x.size, size=max_probes, replace=False))
    a = analytic_grad(f, x).reshape(-1)
    n = numerical_grad(f, x, eps, idx).reshape(-1)
    if idx is not None:
        a, n = a[idx], n[idx]
    return norm_relative_error(a, n)


def param_grad_error(loss_fn, params, eps=1e-6, per_param=4, rng=None):
    """Norm-wise relative error over a sample of entries from every parameter."""
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    a_all, n_all = [], []
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            g = p.grad.reshape(-1)
            for i in rng.choice(flat.size, size=min(per_param, flat.size), replace=False):
                old = flat[i]
                flat[i] = old + eps
                fp = _scalar(loss_fn())
                flat[i] = old - eps
                fm = _scalar(loss_fn())
                flat[i] = old
                a_all.append(g[i])
                n_all.append((fp - fm) / (2 * eps))
    return norm_relative_error(a_all, n_all)
