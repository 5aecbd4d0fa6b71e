"""Finite-difference gradient verification for the autodiff tape."""

from dataclasses import dataclass

import numpy as np

# Elements whose analytic and numeric gradients are both below this magnitude
# are compared against the floor instead of their own size.
REL_FLOOR = 1e-2


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_elements: int
    tol: float

    @property
    def passed(self):
        return self.max_rel_error < self.tol


def grad_check(f, x, tol=1e-4, step=1e-3):
    """Compare backward() of scalar ``f(x)`` against central differences on ``x``.

    ``f`` must rebuild its graph on every call (a pure function of ``x``).
    Returns a report with the max elementwise relative error.
    """
    if not x.requires_grad:
        raise ValueError("grad_check target must require grad")
    x.zero_grad()
    out = f(x)
    if out.data.size != 1:
        raise ValueError("grad_check expects a scalar-valued function")
    out.backward()
    analytic = x.grad.copy()
    x.zero_grad()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x).data.item()
        flat[i] = orig - step
        lo = f(x).data.item()
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * step)

    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    rel = abs_err / denom
    return GradCheckReport(
        max_rel_error=float(rel.max()) if rel.size else 0.0,
        max_abs_error=float(abs_err.max()) if abs_err.size else 0.0,
        n_elements=int(flat.size),
        tol=tol,
    )
