"""Central finite-difference verification of loss gradients."""

from __future__ import annotations

import numpy as np

from ..errors import GradientMismatch, KinkProximity
from .common import Batch


def random_batch(rng: np.random.Generator, classes: int = 4, per_class: int = 2,
                 dim: int = 6) -> Batch:
    """Random unit-norm batch with ``classes`` classes of ``per_class`` samples."""
    b = classes * per_class
    emb = rng.standard_normal((b, dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    labels = np.repeat(np.arange(classes), per_class)
    return Batch(emb, labels)


def sample_non_kink_batch(loss_id: str, rng: np.random.Generator,
                          params: dict | None = None, step: float = 1e-6,
                          classes: int = 4, per_class: int = 2, dim: int = 6,
                          state_seed: int = 0, max_tries: int = 200) -> Batch:
    """Draw random batches until one sits clear of the loss's kinks."""
    from . import get_info, kink_slack, make_state

    for _ in range(max_tries):
        batch = random_batch(rng, classes, per_class, dim)
        state = None
        if get_info(loss_id).needs_state:
            state = make_state(loss_id, params, np.unique(batch.labels), dim,
                               np.random.default_rng(state_seed))
        if kink_slack(loss_id, batch.embeddings, batch.labels, params, state) > 10.0 * step:
            return batch
    raise KinkProximity(f"no non-kink batch found for {loss_id} in {max_tries} tries")


def gradient_check(loss_id: str, batch: Batch, params: dict | None = None,
                   step: float = 1e-6, tolerance: float | None = None,
                   state=None, state_seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Checks every embedding coordinate and every learnable loss parameter.
    The batch must sit away from hinge kinks: the loss's slack to the nearest
    non-smooth point has to exceed 10 * step.

    Raises:
        KinkProximity: if the slack check fails.
        ValueError: if step is not positive.
    """
    from . import evaluate_loss, get_info, kink_slack, make_state

    if not step > 0.0:
        raise ValueError(f"step must be positive, got {step}")
    x = batch.embeddings.copy()
    y = batch.labels
    if state is None and get_info(loss_id).needs_state:
        state = make_state(loss_id, params, np.unique(y), x.shape[1],
                           np.random.default_rng(state_seed))
    slack = kink_slack(loss_id, x, y, params, state)
    if slack <= 10.0 * step:
        raise KinkProximity(f"slack {slack:.3e} <= 10 * step {step:.0e}")

    def value_at(xv, sv):
        return evaluate_loss(loss_id, xv, y, params, sv).value

    out = evaluate_loss(loss_id, x, y, params, state)
    analytic: list[float] = []
    numeric: list[float] = []

    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            orig = x[i, j]
            x[i, j] = orig + step
            f_plus = value_at(x, state)
            x[i, j] = orig - step
            f_minus = value_at(x, state)
            x[i, j] = orig
            analytic.append(float(out.grad_embeddings[i, j]))
            numeric.append((f_plus - f_minus) / (2.0 * step))

    if state is not None:
        for name, arr in state.learnables().items():
            gflat = np.asarray(out.grad_params[name]).reshape(-1)
            flat = arr.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + step
                f_plus = value_at(x, state)
                flat[idx] = orig - step
                f_minus = value_at(x, state)
                flat[idx] = orig
                analytic.append(float(gflat[idx]))
                numeric.append((f_plus - f_minus) / (2.0 * step))

    a = np.asarray(analytic)
    n = np.asarray(numeric)
    # coordinates far below the gradient's scale only carry finite-difference
    # cancellation noise, so the denominator is floored at a fraction of it
    scale = max(1e-6, 1e-3 * float(np.maximum(np.abs(a), np.abs(n)).max(initial=0.0)))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), scale)
    worst = float((np.abs(a - n) / denom).max(initial=0.0))
    if tolerance is not None and worst > tolerance:
        raise GradientMismatch(
            f"{loss_id}: worst relative error {worst:.3e} > {tolerance:.0e}")
    return worst
