"""Central-difference gradient verification for tape-built losses."""

from __future__ import annotations

import numpy as np

from .params import ParamStore
from .tensor import Tape, backward


def finite_difference_check(
    build_loss,
    store: ParamStore,
    h: float = 1e-5,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``build_loss`` must be a deterministic closure (any sampling noise fixed
    outside) returning a scalar Tensor from the store's current parameters.
    Relative error per coordinate is ``|a - n| / max(1e-6, |n|)``: the floor
    sits above central-difference roundoff (|f| * eps / h, about 1e-11 for a
    unit-scale loss), so a structurally zero gradient — a ReLU unit dead
    across the whole batch, a masked logit — is compared against noise it
    can actually clear rather than failed on unmeasurable digits.  With
    ``max_coords_per_param`` set, large tensors are spot-checked at sampled
    coordinates; small tensors are always fully checked.
    """
    store.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    backward(tape, loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in store.items()
    }
    store.zero_grad()

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for name, p in store.items():
        if store.is_frozen(name):
            continue
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        a_flat = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = float(build_loss().data)
            flat[c] = orig - h
            f_minus = float(build_loss().data)
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            rel = abs(a_flat[c] - numeric) / max(1e-6, abs(numeric))
            worst = max(worst, rel)
    return worst
