"""Central finite-difference gradient verification."""
import numpy as np

from .tensor import no_grad

STEP = 1e-5
# Below this magnitude both derivatives are treated as zero; the central
# difference itself carries ~1e-11 absolute roundoff at unit-scale losses.
ZERO_FLOOR = 1e-9


def relative_error(analytic, numeric, floor=ZERO_FLOOR):
    a, n = abs(float(analytic)), abs(float(numeric))
    denom = max(a, n)
    if denom < floor:
        return 0.0
    return abs(float(analytic) - float(numeric)) / denom


def numeric_partial(loss_fn, tensor, index, step=STEP):
    """d loss / d tensor[index] by central differences (graph recording off)."""
    flat = tensor.data.reshape(-1)
    orig = flat[index]
    with no_grad():
        flat[index] = orig + step
        plus = float(loss_fn().data)
        flat[index] = orig - step
        minus = float(loss_fn().data)
    flat[index] = orig
    return (plus - minus) / (2.0 * step)


def analytic_grads(loss_fn, tensors):
    for t in tensors:
        t.zero_grad()
    loss = loss_fn()
    loss.backward()
    return [t.grad.copy() for t in tensors]


def check(loss_fn, tensors, n_probes=None, rng=None, step=STEP):
    """Compare backward() against central differences.

    ``loss_fn`` rebuilds a scalar Tensor from the current values of
    ``tensors``.  With ``n_probes`` set, that many coordinates are drawn
    uniformly over all entries of all tensors; otherwise every coordinate is
    checked.  Returns the worst relative error and the per-probe records.
    """
    grads = analytic_grads(loss_fn, tensors)
    coords = [(ti, j) for ti, t in enumerate(tensors) for j in range(t.size)]
    if n_probes is not None and n_probes < len(coords):
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(coords), size=n_probes, replace=False)
        coords = [coords[p] for p in sorted(pick)]
    worst, records = 0.0, []
    for ti, j in coords:
        a = grads[ti].reshape(-1)[j]
        n = numeric_partial(loss_fn, tensors[ti], j, step)
        err = relative_error(a, n)
        records.append((ti, j, a, n, err))
        worst = max(worst, err)
    return worst, records
