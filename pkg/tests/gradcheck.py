"""Central finite-difference gradient checking used across the test suite."""

import numpy as np

from relmatch.tensor import Tape


def numeric_grad(build_loss, t, idx, h=1e-5):
    orig = t.data[idx]
    t.data[idx] = orig + h
    lp = build_loss().item()
    t.data[idx] = orig - h
    lm = build_loss().item()
    t.data[idx] = orig
    return (lp - lm) / (2.0 * h)


def check_gradients(build_loss, tensors, rel_tol=1e-4, h=1e-5, sample=None,
                    rng=None):
    """Compare tape gradients of a scalar loss against central differences.

    `build_loss` must rebuild the loss from the current tensor values
    (deterministically).  `sample` limits each tensor to that many random
    coordinates; None checks every coordinate.
    """
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = build_loss()
        tape.backward(loss)
    analytic = {id(t): (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for t in tensors}
    worst = 0.0
    for t in tensors:
        coords = list(np.ndindex(t.data.shape))
        if sample is not None and len(coords) > sample:
            rng = rng or np.random.default_rng(0)
            coords = [coords[i] for i in
                      rng.choice(len(coords), size=sample, replace=False)]
        for idx in coords:
            num = numeric_grad(build_loss, t, idx, h)
            ana = analytic[id(t)][idx]
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            worst = max(worst, err)
            assert err < rel_tol, (
                f"gradient mismatch at {t.name or 'tensor'}{idx}: "
                f"analytic {ana:.8g} vs numeric {num:.8g} (rel err {err:.2e})")
    return worst
