"""Finite-difference gradient checking shared by the unit and acceptance tests.

Central differences with step 1e-5 in double precision.  Instances are
rejection-sampled so no activation sits within 1e-3 of a threshold kink or
interval edge; otherwise a single-weight perturbation could flip a mask and
poison the difference quotient.
"""

import numpy as np

from dualdomain.network import (
    backward,
    dbase_backward,
    dbase_forward,
    forward,
    init_dbase_random,
    init_random,
    total_loss,
)

STEP = 1e-5
MARGIN = 1e-3


def _d3_instance(seed, p=8, n=2):
    """Seeded model/batch with comfortable kink margins."""
    for attempt in range(64):
        rng = np.random.default_rng(seed * 1000 + attempt)
        model = init_random(p, p, seed=seed * 1000 + attempt)
        model.stage1.theta[:] = rng.uniform(0.05, 0.3, p)
        model.stage2.theta[:] = rng.uniform(0.05, 0.3, p)
        x = rng.standard_normal((n, 64))
        target = rng.standard_normal((n, 64)) * 0.5
        trace = forward(model, x)
        lower = trace.z - rng.uniform(0.05, 0.5, (n, 64))
        upper = lower + rng.uniform(0.1, 0.9, (n, 64))
        m1 = np.min(np.abs(np.abs(trace.pre1) - model.stage1.theta))
        m2 = np.min(np.abs(np.abs(trace.pre2) - model.stage2.theta))
        m3 = min(np.min(np.abs(trace.z - lower)), np.min(np.abs(trace.z - upper)))
        if min(m1, m2, m3) > MARGIN:
            return model, x, target, lower, upper
    raise RuntimeError("could not sample a kink-safe instance")


def _dbase_instance(seed, p=8, n=2):
    for attempt in range(64):
        rng = np.random.default_rng(seed * 1000 + attempt)
        model = init_dbase_random(p, p, seed=seed * 1000 + attempt)
        x = rng.standard_normal((n, 64))
        target = rng.standard_normal((n, 64)) * 0.5
        masks = [
            (rng.random((n, p)) < 0.5).astype(np.float64),
            (rng.random((n, 64)) < 0.5).astype(np.float64),
            (rng.random((n, p)) < 0.5).astype(np.float64),
        ]
        trace = dbase_forward(model, x, training=True, masks=masks)
        margin = min(float(np.min(np.abs(pre))) for pre in trace.pres)
        if margin > MARGIN:
            return model, x, target, masks
    raise RuntimeError("could not sample a kink-safe instance")


def _max_rel_err(params, grads, loss_fn):
    worst = 0.0
    for prm, grd in zip(params, grads):
        flat = prm.ravel()
        gflat = grd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + STEP
            fp = loss_fn()
            flat[i] = orig - STEP
            fm = loss_fn()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * STEP)
            worst = max(worst, abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1.0))
    return worst


def d3_gradcheck(seed, p=8, loss_weights=(1.0, 1.0)):
    """Max relative error over every parameter of a random model."""
    model, x, target, lower, upper = _d3_instance(seed, p)
    trace = forward(model, x)
    g = backward(trace, target, lower, upper, model, loss_weights)
    params = [
        model.stage1.analysis, model.stage1.synthesis, model.stage1.theta,
        model.stage2.analysis, model.stage2.synthesis, model.stage2.theta,
    ]
    grads = [g.analysis1, g.synthesis1, g.theta1, g.analysis2, g.synthesis2, g.theta2]

    def loss_fn():
        return total_loss(forward(model, x), target, lower, upper, loss_weights)[0]

    return _max_rel_err(params, grads, loss_fn)


def dbase_gradcheck(seed, p=8):
    """Same for the pixel-domain baseline, dropout masks frozen."""
    model, x, target, masks = _dbase_instance(seed, p)
    trace = dbase_forward(model, x, training=True, masks=masks)
    grads = dbase_backward(trace, target, model)

    def loss_fn():
        out = dbase_forward(model, x, training=True, masks=masks).output
        diff = out - target
        return float(np.sum(diff * diff)) / x.shape[0]

    return _max_rel_err(model.weights, grads, loss_fn)
