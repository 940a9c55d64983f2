"""Training objectives.

T-CAS tensors are ``T x classes`` (or ``B x T x classes``); labels are numpy
multi-hot arrays with the background class in the last column.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass
class LossWeights:
    lambda0: float = 0.8
    lambda1: float = 0.7
    lambda2: float = 0.9
    lambda3: float = 0.8
    lambda4: float = 0.8
    casl_margin: float = 0.5
    topk_divisor: int = 8

    def __post_init__(self):
        for name in ("lambda0", "lambda1", "lambda2", "lambda3", "lambda4", "casl_margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.topk_divisor < 1:
            raise ValueError("topk_divisor must be >= 1")

    def k_for(self, T: int) -> int:
        return max(1, T // self.topk_divisor)


@dataclass
class AblationFlags:
    """Which modules and loss terms are active (one row of the ablation table)."""

    use_cad: bool = True
    cad_supervised: bool = True
    use_tea: bool = True
    use_l_supp_mil: bool = True
    use_l_supp_coarse: bool = True
    use_l_norm: bool = True
    use_l_guide: bool = True
    use_l_cas: bool = True

    def validate(self) -> None:
        needs_tea = [n for n in ("use_l_supp_mil", "use_l_supp_coarse", "use_l_norm", "use_l_guide", "use_l_cas")
                     if getattr(self, n)]
        if needs_tea and not self.use_tea:
            raise ValueError(f"{', '.join(needs_tea)} need action-ness scores (use_tea)")
        needs_cad = [n for n in ("use_l_supp_coarse", "use_l_cas") if getattr(self, n)]
        if needs_cad and not self.use_cad:
            raise ValueError(f"{', '.join(needs_cad)} need the coarse T-CAS (use_cad)")

    def to_dict(self) -> dict:
        return asdict(self)


def foreground_label(y) -> np.ndarray:
    y = np.array(y, dtype=np.float64)
    y[..., -1] = 0.0
    return y


def full_label(y) -> np.ndarray:
    y = np.array(y, dtype=np.float64)
    y[..., -1] = 1.0
    return y


def log_softmax(v: Tensor, axis: int = -1) -> Tensor:
    shift = Tensor(np.max(v.data, axis=axis, keepdims=True))
    shifted = v - shift
    return shifted - ag.log(ag.exp(shifted).sum(axis=axis, keepdims=True))


def video_scores(s_cas: Tensor, k: int) -> Tensor:
    """Top-k mean per class column followed by a softmax over classes."""
    return ag.softmax(ag.topk_mean(s_cas, k, axis=-2), axis=-1)


def topk_mil_loss(s_cas: Tensor, y_target, k: int) -> Tensor:
    """Cross-entropy between normalized multi-hot labels and top-k video scores.

    Batched input is averaged over videos.
    """
    y = np.asarray(y_target, dtype=np.float64)
    if y.shape[-1] != s_cas.shape[-1]:
        raise ag.ShapeError(f"label width {y.shape[-1]} != T-CAS width {s_cas.shape[-1]}")
    totals = y.sum(axis=-1, keepdims=True)
    if np.any(totals <= 0):
        raise ValueError("target label has no positive class")
    y_hat = Tensor((y / totals).astype(s_cas.dtype))
    v = ag.topk_mean(s_cas, k, axis=-2)
    per_video = -(y_hat * log_softmax(v, axis=-1)).sum(axis=-1)
    return per_video.mean()


def suppressed_loss(s_final_supp: Tensor, s_coarse_supp: Tensor | None, y_fg, k: int, lambda0: float) -> Tensor:
    loss = topk_mil_loss(s_final_supp, y_fg, k)
    if s_coarse_supp is not None and lambda0:
        loss = loss + lambda0 * topk_mil_loss(s_coarse_supp, y_fg, k)
    return loss


def unsuppressed_loss(s_final: Tensor, s_temp: Tensor | None, y_full, y_fg, k: int, lambda1: float) -> Tensor:
    loss = topk_mil_loss(s_final, y_full, k)
    if s_temp is not None and lambda1:
        loss = loss + lambda1 * topk_mil_loss(s_temp, np.asarray(y_fg)[..., :-1], k)
    return loss


def _cosine_distance(u: Tensor, v: Tensor) -> Tensor:
    dot = (u * v).sum()
    norms = ag.sqrt((u * u).sum() * (v * v).sum() + 1e-12)
    return 1.0 - dot / norms


def _high_low(e_a: Tensor, s_supp: Tensor, j: int):
    T = e_a.shape[0]
    if T < 2:
        raise ValueError("co-activity loss needs at least two snippets")
    att = ag.softmax(s_supp[:, j], axis=0)
    high = (att.reshape(T, 1) * e_a).sum(axis=0)
    low = (((1.0 - att) * (1.0 / (T - 1))).reshape(T, 1) * e_a).sum(axis=0)
    return high, low


def casl_loss(e_a_m: Tensor, s_coarse_supp_m: Tensor, e_a_n: Tensor, s_coarse_supp_n: Tensor,
              shared_classes, margin: float = 0.5) -> Tensor:
    """Co-activity ranking loss for one video pair sharing ``shared_classes``.

    High/low-attention features of the two videos are compared with cosine
    distance: the two high regions should be closer than either high region
    is to the other video's low region, by ``margin``.
    """
    shared = list(shared_classes)
    if not shared:
        return Tensor(np.zeros((), dtype=e_a_m.dtype))
    total = None
    for j in shared:
        h_m, l_m = _high_low(e_a_m, s_coarse_supp_m, j)
        h_n, l_n = _high_low(e_a_n, s_coarse_supp_n, j)
        d_hh = _cosine_distance(h_m, h_n)
        hinge_a = ag.relu(d_hh - _cosine_distance(h_m, l_n) + margin)
        hinge_b = ag.relu(d_hh - _cosine_distance(l_m, h_n) + margin)
        term = 0.5 * (hinge_a + hinge_b)
        total = term if total is None else total + term
    return total * (1.0 / len(shared))


def norm_loss(a_ness: Tensor) -> Tensor:
    return ag.tabs(a_ness).mean()


def guide_loss(a_ness: Tensor, s_final: Tensor) -> Tensor:
    return ag.tabs(1.0 - a_ness - s_final[..., -1]).mean()


COMPONENTS = ("l_mil", "l_supp", "l_cas", "l_norm", "l_guide")


def total_loss(outputs, labels, pairs, weights: LossWeights, flags: AblationFlags):
    """Weighted sum of all active terms.

    ``labels`` is a ``B x (C+1)`` multi-hot array (background column ignored
    on input), ``pairs`` a list of ``(m, n, shared_classes)`` batch-index
    pairs.  Returns ``(total, components)`` where ``components`` maps each
    name in :data:`COMPONENTS` to its weighted contribution, so the values
    add up to the total.
    """
    labels = np.asarray(labels, dtype=np.float64)
    y_fg = foreground_label(labels)
    y_full = full_label(labels)
    T = outputs.s_final.shape[-2]
    k = weights.k_for(T)

    s_temp = outputs.s_temp if flags.use_tea else None
    l_mil = unsuppressed_loss(outputs.s_final, s_temp, y_full, y_fg, k, weights.lambda1)
    # without the suppressed coarse loss, the coarse T-CAS keeps a plain MIL supervision
    if flags.use_cad and flags.cad_supervised and not flags.use_l_supp_coarse and weights.lambda0:
        l_mil = l_mil + weights.lambda0 * topk_mil_loss(outputs.s_coarse, y_full, k)
    terms = {"l_mil": l_mil}

    l_supp = None
    if flags.use_l_supp_mil:
        l_supp = topk_mil_loss(outputs.s_final_supp, y_fg, k)
    if flags.use_l_supp_coarse and weights.lambda0:
        coarse = weights.lambda0 * topk_mil_loss(outputs.s_coarse_supp, y_fg, k)
        l_supp = coarse if l_supp is None else l_supp + coarse
    if l_supp is not None:
        terms["l_supp"] = l_supp

    if flags.use_l_cas and pairs and weights.lambda2:
        cas = None
        for m, n, shared in pairs:
            term = casl_loss(outputs.e_a[m], outputs.s_coarse_supp[m], outputs.e_a[n], outputs.s_coarse_supp[n],
                             shared, weights.casl_margin)
            cas = term if cas is None else cas + term
        terms["l_cas"] = cas * (weights.lambda2 / len(pairs))
    if flags.use_l_norm and weights.lambda3:
        terms["l_norm"] = weights.lambda3 * norm_loss(outputs.a_ness)
    if flags.use_l_guide and weights.lambda4:
        terms["l_guide"] = weights.lambda4 * guide_loss(outputs.a_ness, outputs.s_final)

    total = None
    for t in terms.values():
        total = t if total is None else total + t
    components = {name: (terms[name].item() if name in terms else 0.0) for name in COMPONENTS}
    return total, components
