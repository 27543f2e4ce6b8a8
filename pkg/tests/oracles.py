"""Independent reference implementations shared by unit and acceptance tests.

Each oracle is written the slow, obvious way so it shares no code with the
implementation it checks.
"""

from fractions import Fraction

import numpy as np

from gradcheck import grad_error, numeric_grad
from rrburden.model import Hyperparams, build_stage1
from rrburden.model.stage1 import to_input
from rrburden.nn import weighted_bce_logits

# two residual blocks, small enough for finite differences over every weight
MINI_HP = Hyperparams(w_s=12, n_b=2, n_f=3, f_l=3, d_r1=0.3, n_hu=8, d_r2=0.3)


def closed_form_shapes(hp):
    """Expected per-layer shapes from the doubling/halving rule alone."""
    out, length = [], hp.w_s - 1
    for i in range(hp.n_b):
        filters = hp.n_f * 2 ** (i // 2)
        out.append((f"block{i}", (length, filters)))
        if i % 2 == 1:
            length //= 2
            out += [(f"pool{i}", (length, filters)), (f"drop{i}", (length, filters))]
    flat = length * hp.n_f * 2 ** ((hp.n_b - 1) // 2)
    out.append(("flatten", (flat,)))
    for j, w in enumerate([hp.n_hu, hp.n_hu // 2, hp.n_hu // 4]):
        out += [(f"dense{j}", (w,)), (f"relu{j}", (w,)), (f"drop{j}", (w,))]
    return out


def mini_stage1_grad_errors(seed=5):
    """Worst-case gradient error per tensor of a miniature stage-1 net under weighted BCE."""
    net = build_stage1(MINI_HP, seed=seed, allow_out_of_range=True).net
    x = to_input(np.random.default_rng(0).uniform(400, 1400, (6, 11)), 12)
    y = np.array([0, 1, 1, 0, 1, 0], dtype=float)
    for name, b in net.named_params().items():
        if name.endswith(".b") or name.endswith("beta"):
            b += np.random.default_rng(len(name)).uniform(-0.1, 0.1, b.shape)

    def loss():
        z, _ = net.forward(x, True, np.random.default_rng(9))
        return weighted_bce_logits(z.ravel(), y, 1.5)[0]

    z, cache = net.forward(x, True, np.random.default_rng(9))
    _, dz = weighted_bce_logits(z.ravel(), y, 1.5)
    dx, grads = net.backward(cache, dz.reshape(z.shape))
    errors = {"input": grad_error(dx, numeric_grad(loss, x))}
    for name, p in net.named_params().items():
        errors[name] = grad_error(grads[name], numeric_grad(loss, p))
    return errors


def pairwise_auroc(s, y):
    pos = [a for a, l in zip(s, y) if l]
    neg = [b for b, l in zip(s, y) if not l]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def exact_afb(t, y):
    pos = sum((Fraction(float(a)) for a, l in zip(t, y) if l), Fraction(0))
    total = sum((Fraction(float(a)) for a in t), Fraction(0))
    return float(100 * pos / total)


def exact_eaf(t, y, y_hat):
    num = sum((Fraction(float(a)) * (int(bool(p)) - int(bool(r))) for a, r, p in zip(t, y, y_hat)), Fraction(0))
    return float(100 * num / sum((Fraction(float(a)) for a in t), Fraction(0)))


def tally_metrics(y, p):
    """Se, Sp, PPV, NPV, F1 from a per-item loop; None where undefined."""
    tp = fp = tn = fn = 0
    for a, b in zip(y, p):
        if a and b:
            tp += 1
        elif b:
            fp += 1
        elif a:
            fn += 1
        else:
            tn += 1

    def div(n, d):
        return None if d == 0 else n / d

    se, ppv = div(tp, tp + fn), div(tp, tp + fp)
    f1 = div(2 * tp, 2 * tp + fp + fn)
    return {"se": se, "sp": div(tn, tn + fp), "ppv": ppv, "npv": div(tn, tn + fn), "f1": f1}


def order_stat_quartiles(values):
    """(median, Q1, Q3) with position (n - 1) p between sorted values."""
    v = sorted(float(x) for x in values)

    def q(p):
        pos = (len(v) - 1) * p
        lo = int(pos)
        hi = min(lo + 1, len(v) - 1)
        return v[lo] + (pos - lo) * (v[hi] - v[lo])

    return q(0.5), q(0.25), q(0.75)


def literal_severity(seconds, afb):
    """The four stratum definitions, rule by rule."""
    if seconds < 30:
        return "NonAF"
    if seconds >= 30 and afb < 4:
        return "Mild"
    if 4 <= afb <= 80:
        return "Moderate"
    if afb > 80:
        return "Severe"
    raise AssertionError("rules do not cover this point")
