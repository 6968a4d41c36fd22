"""Central finite-difference verification of analytic gradients."""
import numpy as np

from lte.autodiff.engine import Graph, Tensor, precision


def analytic_gradients(op_closure, point):
    with precision(64):
        inputs = [Tensor(np.array(p, dtype=np.float64), requires_grad=True) for p in point]
        with Graph() as g:
            out = op_closure(inputs)
        if out.data.size != 1:
            raise ValueError(f"op must be scalar-valued at check time, got shape {out.shape}")
        g.backward(out)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]


def _evaluate(op_closure, arrays):
    with precision(64):
        out = op_closure([Tensor(a) for a in arrays])
    return float(out.data.reshape(-1)[0])


def finite_difference_check(op_closure, point, h=1e-4, coords=None):
    """Max over coordinates of |analytic - central difference| / max(|analytic|, 1e-8).

    ``op_closure`` maps a list of tensors to a scalar tensor. ``coords`` optionally
    limits the check to ``(input_index, flat_index)`` pairs.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    point = [np.array(p, dtype=np.float64) for p in point]
    grads = analytic_gradients(op_closure, point)
    if coords is None:
        coords = [(i, j) for i, p in enumerate(point) for j in range(p.size)]
    worst = 0.0
    for i, j in coords:
        plus = [p.copy() for p in point]
        minus = [p.copy() for p in point]
        plus[i].reshape(-1)[j] += h
        minus[i].reshape(-1)[j] -= h
        fp, fm = _evaluate(op_closure, plus), _evaluate(op_closure, minus)
        numeric = (fp - fm) / (2 * h)
        analytic = float(grads[i].reshape(-1)[j])
        if not (np.isfinite(numeric) and np.isfinite(analytic)):
            raise FloatingPointError(
                f"non-finite gradient at input {i}, coordinate {j}: analytic={analytic}, numeric={numeric}"
            )
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), 1e-8))
    return worst
