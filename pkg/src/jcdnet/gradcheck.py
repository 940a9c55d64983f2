"""Central-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, backward, record_branches


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    excluded: int

    def __float__(self) -> float:
        return self.max_rel_error


def grad_check(fn, params: list[Tensor], eps: float = 1e-4) -> GradCheckResult:
    """Compare backprop gradients of ``fn(*params)`` with central differences.

    Coordinates whose ``+eps`` or ``-eps`` evaluation takes a different branch
    in a non-smooth op (top-k selection, relu/abs sign) than the unperturbed
    evaluation sit on a kink and are excluded from the maximum.
    """
    for p in params:
        p.grad = None
    with record_branches() as base_branches:
        loss = fn(*params)
    base_branches = list(base_branches)
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    def evaluate():
        with record_branches() as branches:
            value = fn(*params).item()
        return value, list(branches)

    worst = 0.0
    checked = excluded = 0
    for p, grad in zip(params, analytic):
        for idx in np.ndindex(p.shape):
            orig = p.data[idx]
            p.data[idx] = orig + eps
            f_plus, b_plus = evaluate()
            p.data[idx] = orig - eps
            f_minus, b_minus = evaluate()
            p.data[idx] = orig
            if b_plus != base_branches or b_minus != base_branches:
                excluded += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(grad[idx])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
            checked += 1
    return GradCheckResult(worst, checked, excluded)



# the suite behind ``jcdnet gradcheck`` -----------------------------------
SMOOTH_TOL = 1e-5
KINKED_TOL = 1e-3


@dataclass
class GradCheck:
    """One named check; ``build(rng)`` returns ``(fn, params)`` in float64."""

    name: str
    build: object
    kinked: bool = False  # contains relu / abs / top-k / hinge

    @property
    def tolerance(self) -> float:
        return KINKED_TOL if self.kinked else SMOOTH_TOL


@dataclass
class CheckOutcome:
    name: str
    result: GradCheckResult
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.result.checked > 0 and self.result.max_rel_error < self.tolerance


def run_checks(checks=None, seed: int = 0) -> list[CheckOutcome]:
    from .rng import Xoshiro256

    outcomes = []
    for check in checks if checks is not None else default_checks():
        rng = Xoshiro256(seed)
        fn, params = check.build(rng)
        outcomes.append(CheckOutcome(check.name, grad_check(fn, params), check.tolerance))
    return outcomes


def _leaf(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True, dtype=np.float64)


def _probe(rng, shape) -> Tensor:
    # fixed random weights turn any output into a scalar with a generic gradient
    return Tensor(rng.uniform(-1.0, 1.0, shape), dtype=np.float64)


def _weighted(outputs, rng):
    probes = [_probe(rng, o.shape) for o in outputs]
    total = None
    for o, w in zip(outputs, probes):
        term = (o * w).sum()
        total = term if total is None else total + term
    return total


def op_check(op, shapes, lo=-1.0, hi=1.0):
    """Builder for ``op(*leaves)`` with leaves uniform in ``[lo, hi]``."""
    def build(rng):
        leaves = [_leaf(rng, s, lo, hi) for s in shapes]
        probe = _probe(rng, op(*leaves).shape)
        return (lambda *xs: (op(*xs) * probe).sum()), leaves
    return build


def _tiny_model(rng):
    from .model import ModelConfig, init_params

    cfg = ModelConfig(num_classes=2, feature_dim=4, hidden_dim=4, snippets_per_video=5, conv_kernel=3,
                      dropout_rate=0.0)
    params = init_params(cfg, rng, dtype=np.float64)
    # non-zero gates and biases so every path carries gradient
    for name, p in params.items():
        p.data[...] = rng.uniform(-1.0, 1.0, p.shape) if name.endswith(".w") else rng.uniform(-0.5, 0.5, p.shape)
    return cfg, params


def _model_check(part):
    def build(rng):
        from . import model as M

        cfg, params = _tiny_model(rng)
        x = Tensor(rng.uniform(-1.0, 1.0, (5, 4)), dtype=np.float64)
        prefixes = {"cad": ("embed.", "cad."), "tea": ("tea.",), "forward": ("",)}[part]
        names = [n for n in params if n.startswith(prefixes)]

        def outputs(values):
            p = {**params, **dict(zip(names, values))}
            if part == "cad":
                s_coarse, _, m_def, e_a = M.cad_forward(x, cfg, p)
                return [s_coarse, m_def, e_a]
            if part == "tea":
                _, m_e, e_e, _, a_ness = M.tea_forward(x, cfg, p)
                return [m_e, e_e, a_ness]
            out = M.forward(x, cfg, p, mode="eval")
            return [out.s_final_supp, out.s_coarse_supp]

        probes = [_probe(rng, o.shape) for o in outputs([params[n] for n in names])]

        def fn(*values):
            total = None
            for o, w in zip(outputs(values), probes):
                term = (o * w).sum()
                total = term if total is None else total + term
            return total

        return fn, [params[n] for n in names]
    return build


def _labels(B, C):
    y = np.zeros((B, C + 1))
    for b in range(B):
        y[b, b % C] = 1.0
    return y


def _mil(rng):
    from .autograd import softmax
    from .losses import full_label, topk_mil_loss

    logits = _leaf(rng, (2, 6, 3), -2.0, 2.0)
    y = full_label(_labels(2, 2))
    return (lambda z: topk_mil_loss(softmax(z, axis=-1), y, 2)), [logits]


def _supp(rng):
    from .autograd import softmax
    from .losses import foreground_label, suppressed_loss

    a, b = _leaf(rng, (6, 3), -2.0, 2.0), _leaf(rng, (6, 3), -2.0, 2.0)
    y = foreground_label(_labels(1, 2)[0])
    return (lambda a, b: suppressed_loss(softmax(a), softmax(b), y, 2, 0.8)), [a, b]


def _unsupp(rng):
    from .autograd import softmax
    from .losses import foreground_label, full_label, unsuppressed_loss

    a, t = _leaf(rng, (6, 3), -2.0, 2.0), _leaf(rng, (6, 2), -2.0, 2.0)
    y = _labels(1, 2)[0]
    return (lambda a, t: unsuppressed_loss(softmax(a), t, full_label(y), foreground_label(y), 2, 0.7)), [a, t]


def _casl(rng):
    from .losses import casl_loss

    leaves = [_leaf(rng, (6, 4)), _leaf(rng, (6, 3), 0.0, 1.0), _leaf(rng, (6, 4)), _leaf(rng, (6, 3), 0.0, 1.0)]
    return (lambda em, sm, en, sn: casl_loss(em, sm, en, sn, [0, 1], 0.5)), leaves


def _norm(rng):
    from .autograd import sigmoid
    from .losses import norm_loss

    z = _leaf(rng, (6,), -2.0, 2.0)
    return (lambda z: norm_loss(sigmoid(z))), [z]


def _guide(rng):
    from .autograd import sigmoid, softmax
    from .losses import guide_loss

    z, s = _leaf(rng, (6,), -2.0, 2.0), _leaf(rng, (6, 3), -2.0, 2.0)
    return (lambda z, s: guide_loss(sigmoid(z), softmax(s))), [z, s]


def _total(rng):
    from . import model as M
    from .losses import AblationFlags, LossWeights, total_loss

    cfg, params = _tiny_model(rng)
    names = list(params)
    x = Tensor(rng.uniform(-1.0, 1.0, (2, 5, 4)), dtype=np.float64)
    y = _labels(2, 2)
    y[1] = y[0]

    def fn(*values):
        out = M.forward(x, cfg, dict(zip(names, values)), mode="eval")
        return total_loss(out, y, [(0, 1, [0])], LossWeights(), AblationFlags())[0]

    return fn, [params[n] for n in names]


def default_checks() -> list[GradCheck]:
    """Every autograd op, the model pieces and every loss, at tiny sizes."""
    from . import autograd as ag
    from .model import attention_map, definite_features

    m = (3, 4)
    return [
        GradCheck("add", op_check(ag.add, [m, (4,)])),
        GradCheck("sub", op_check(ag.sub, [m, (4,)])),
        GradCheck("mul", op_check(ag.mul, [m, (3, 1)])),
        GradCheck("div", op_check(ag.div, [m, (4,)], 0.5, 2.0)),
        GradCheck("pow", op_check(lambda x: ag.power(x, 1.7), [m], 0.5, 2.0)),
        GradCheck("exp", op_check(ag.exp, [m])),
        GradCheck("log", op_check(ag.log, [m], 0.5, 2.0)),
        GradCheck("sqrt", op_check(ag.sqrt, [m], 0.5, 2.0)),
        GradCheck("sigmoid", op_check(ag.sigmoid, [m], -3.0, 3.0)),
        GradCheck("relu", op_check(ag.relu, [m]), kinked=True),
        GradCheck("abs", op_check(ag.tabs, [m]), kinked=True),
        GradCheck("sum", op_check(lambda x: ag.tsum(x, axis=0, keepdims=True), [m])),
        GradCheck("mean", op_check(lambda x: ag.mean(x, axis=1), [m])),
        GradCheck("reshape", op_check(lambda x: ag.reshape(x, (4, 3)), [m])),
        GradCheck("transpose", op_check(ag.transpose, [(2, 3, 4)])),
        GradCheck("getitem", op_check(lambda x: ag.getitem(x, (slice(None), [0, 2, 2, 3])), [m])),
        GradCheck("concat", op_check(lambda a, b: ag.concat([a, b], axis=-1), [(3, 2), (3, 3)])),
        GradCheck("matmul", op_check(ag.matmul, [(2, 3, 4), (4, 2)])),
        GradCheck("softmax", op_check(lambda x: ag.softmax(x, axis=0), [m], -2.0, 2.0)),
        GradCheck("topk_mean", op_check(lambda x: ag.topk_mean(x, 2, axis=0), [(5, 3)]), kinked=True),
        GradCheck("conv1d_k1", op_check(ag.conv1d, [(2, 5, 3), (1, 3, 4), (4,)])),
        GradCheck("conv1d_k3", op_check(ag.conv1d, [(2, 5, 3), (3, 3, 4), (4,)])),
        GradCheck("definite_features",
                  op_check(lambda z, x: definite_features(ag.softmax(z, axis=-1), x), [(5, 3), (5, 4)])),
        GradCheck("attention_map", op_check(attention_map, [(5, 4), (5, 4)])),
        GradCheck("cad_forward", _model_check("cad"), kinked=True),
        GradCheck("tea_forward", _model_check("tea"), kinked=True),
        GradCheck("forward", _model_check("forward"), kinked=True),
        GradCheck("topk_mil_loss", _mil, kinked=True),
        GradCheck("suppressed_loss", _supp, kinked=True),
        GradCheck("unsuppressed_loss", _unsupp, kinked=True),
        GradCheck("casl_loss", _casl, kinked=True),
        GradCheck("norm_loss", _norm, kinked=True),
        GradCheck("guide_loss", _guide, kinked=True),
        GradCheck("total_loss", _total, kinked=True),
    ]
