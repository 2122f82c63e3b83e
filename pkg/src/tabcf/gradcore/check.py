"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tape import Tape, Tensor, differentiate


def finite_diff_check(build_loss: Callable[[], Tensor], params: Sequence[Tensor],
                      h: float = 1e-4, max_entries: int | None = None,
                      rng: np.random.Generator | None = None,
                      kink_tol: float = 1e-3) -> float:
    """Compare analytic gradients against central differences.

    ``build_loss`` must re-run the forward pass from the current parameter
    values each call. Returns the worst relative error
    |analytic − numeric| / max(|analytic|, |numeric|, 1.0) over the checked
    entries.

    Entries where the loss is locally nonsmooth are skipped: when the left and
    right one-sided slopes disagree by more than ``kink_tol`` (relative), the
    perturbation straddles a kink (relu/hinge/|·|) and the central difference
    does not estimate the subgradient there. Non-finite perturbed evaluations
    are skipped for the same reason.
    """
    with Tape() as tape:
        loss = build_loss()
    grads = differentiate(tape, loss, params)
    base = float(loss.data)

    worst = 0.0
    for p in params:
        analytic = grads[p].data
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(n, size=max_entries, replace=False)
        else:
            idxs = np.arange(n)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            up = float(build_loss().data)
            flat[i] = orig - h
            down = float(build_loss().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                continue
            d_plus = (up - base) / h
            d_minus = (base - down) / h
            if abs(d_plus - d_minus) > kink_tol * max(abs(d_plus), abs(d_minus), 1.0):
                continue
            numeric = (up - down) / (2.0 * h)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst
