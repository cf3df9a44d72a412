"""Central finite-difference probes that skip coordinates whose probe crosses a ReLU kink."""

import numpy as np

from freqtune.texclass import TexModel, cross_entropy


def _activation_pattern(m: TexModel, x):
    _, cache = m.forward(x, return_cache=True)
    return np.concatenate([(cache["z1"] > 0).ravel(), (cache["z3"] > 0).ravel()])


def _loss(m, x, y):
    return cross_entropy(m.forward(x), y)[0]


def _rel(a, b, floor):
    return abs(a - b) / max(abs(a), abs(b), floor)


def param_errors(m: TexModel, x, y, h=1e-4, floor=1e-6):
    """Relative errors of every parameter gradient; kinked coordinates are left out."""
    _, grads, _ = m.backward(x, y, need_input_grad=False)
    errs, skipped = [], 0
    for name, p in m.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp, ap = _loss(m, x, y), _activation_pattern(m, x)
            flat[i] = old - h
            lm, am = _loss(m, x, y), _activation_pattern(m, x)
            flat[i] = old
            if not np.array_equal(ap, am):
                skipped += 1
                continue
            errs.append(_rel(g[i], (lp - lm) / (2 * h), floor))
    return np.array(errs), skipped


def input_errors(m: TexModel, x, y, coords, h=255e-4, floor=1e-6):
    """Relative errors of the input gradient at selected pixel coordinates (code values)."""
    _, _, dx = m.backward(x, y)
    errs = []
    for c in coords:
        xp, xm = x.copy(), x.copy()
        xp[c] += h
        xm[c] -= h
        if not np.array_equal(_activation_pattern(m, xp), _activation_pattern(m, xm)):
            continue
        errs.append(_rel(dx[c], (_loss(m, xp, y) - _loss(m, xm, y)) / (2 * h), floor))
    return np.array(errs)


def random_model(seed: int, channels=3, classes=4) -> TexModel:
    r = np.random.default_rng(seed)
    m = TexModel(channels, classes, seed=seed)
    for k in ("conv1_b", "conv2_b", "fc_b"):
        m.params[k] = r.normal(0, 0.1, m.params[k].shape)
    return m
