"""JCDNet forward pass.

Two branches read the same snippet features ``x`` (``T x 2F``, optionally with
a leading batch axis):

* the class-aware branch builds a coarse T-CAS, pools per-class "definite"
  prototypes weighted by that T-CAS and mixes them back into every snippet;
* the temporal branch runs single-head self-attention over snippets and
  produces a foreground-only T-CAS whose class-mean gives the action-ness.

Both feature streams are concatenated and classified into ``C + 1`` classes
(the last one is background).  Every op is rank-agnostic so the same code
serves a ``B x T x 2F`` training batch and a single ``T x 2F`` video.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .rng import Xoshiro256


@dataclass
class ModelConfig:
    num_classes: int
    feature_dim: int = 2048
    hidden_dim: int = 1024
    snippets_per_video: int = 500
    conv_kernel: int = 3
    dropout_rate: float = 0.7
    use_cad: bool = True
    use_tea: bool = True

    def __post_init__(self):
        for name in ("num_classes", "feature_dim", "hidden_dim", "snippets_per_video", "conv_kernel"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelOutputs:
    s_final: Tensor
    a_ness: Tensor
    s_final_supp: Tensor
    x_a: Tensor
    e_a: Tensor
    s_coarse: Tensor | None = None
    m_def: Tensor | None = None
    s_coarse_supp: Tensor | None = None
    x_e: Tensor | None = None
    m_e: Tensor | None = None
    e_e: Tensor | None = None
    s_temp: Tensor | None = None


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Names and shapes of all learnable tensors, in canonical order."""
    F2, D, C, K = cfg.feature_dim, cfg.hidden_dim, cfg.num_classes, cfg.conv_kernel
    shapes = {
        "embed.w": (K, F2, D),
        "embed.b": (D,),
    }
    if cfg.use_cad:
        shapes.update({
            "cad.cls.w": (1, F2, C + 1),
            "cad.cls.b": (C + 1,),
            "cad.alpha": (1,),
        })
    if cfg.use_tea:
        shapes.update({
            "tea.embed.w": (K, F2, D),
            "tea.embed.b": (D,),
            "tea.query.w": (1, D, D),
            "tea.query.b": (D,),
            "tea.key.w": (1, D, D),
            "tea.key.b": (D,),
            "tea.value.w": (1, D, D),
            "tea.value.b": (D,),
            "tea.beta": (1,),
            "tea.cls.w": (1, D, C),
            "tea.cls.b": (C,),
        })
    fused = 2 * D if cfg.use_tea else D
    shapes.update({
        "head.w": (1, fused, C + 1),
        "head.b": (C + 1,),
    })
    return shapes


def init_params(cfg: ModelConfig, rng: Xoshiro256, dtype=None) -> dict[str, Tensor]:
    """Fan-in uniform kernels in ``+-1/sqrt(K*Cin)``; biases and gates at zero."""
    dtype = dtype or ag.get_default_dtype()
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".w"):
            bound = 1.0 / np.sqrt(shape[0] * shape[1])
            data = rng.uniform(-bound, bound, shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(np.asarray(data, dtype=dtype), requires_grad=True, name=name)
    return params


def _conv(x: Tensor, params: dict, prefix: str) -> Tensor:
    return ag.conv1d(x, params[prefix + ".w"], params[prefix + ".b"])


def _column(t: Tensor) -> Tensor:
    """Append a trailing unit axis so a per-snippet vector scales class rows."""
    return t.reshape(t.shape + (1,))


def cad_forward(x: Tensor, cfg: ModelConfig, params: dict):
    """Coarse T-CAS, task features, per-class definite prototypes, fine features."""
    if x.shape[-2] == 0:
        raise ValueError("cad_forward needs at least one snippet")
    s_coarse = ag.softmax(_conv(x, params, "cad.cls"), axis=-1)
    x_a = ag.relu(_conv(x, params, "embed"))
    m_def = definite_features(s_coarse, x_a)
    e_a = params["cad.alpha"] * (s_coarse @ m_def) + x_a
    return s_coarse, x_a, m_def, e_a


def definite_features(s_coarse: Tensor, x_a: Tensor) -> Tensor:
    """Class-probability-weighted average of snippet features, one row per class."""
    weights = ag.transpose(s_coarse)  # (C+1) x T
    totals = ag.transpose(s_coarse.sum(axis=-2, keepdims=True))  # (C+1) x 1
    return (weights @ x_a) / totals


def attention_map(x_eq: Tensor, x_ek: Tensor) -> Tensor:
    """``m[i, j] = softmax_i(q_i . k_j)``; every column sums to one."""
    return ag.softmax(x_eq @ ag.transpose(x_ek), axis=-2)


def tea_forward(x: Tensor, cfg: ModelConfig, params: dict):
    x_e = ag.relu(_conv(x, params, "tea.embed"))
    x_eq = _conv(x_e, params, "tea.query")
    x_ek = _conv(x_e, params, "tea.key")
    x_ev = _conv(x_e, params, "tea.value")
    m_e = attention_map(x_eq, x_ek)
    e_e = params["tea.beta"] * (ag.transpose(m_e) @ x_ev) + x_e
    s_temp = _conv(e_e, params, "tea.cls")
    a_ness = ag.sigmoid(s_temp.mean(axis=-1))
    return x_e, m_e, e_e, s_temp, a_ness


def fuse_and_classify(e_a: Tensor, e_e: Tensor | None, params: dict) -> Tensor:
    if e_e is not None and e_a.shape != e_e.shape:
        raise ag.ShapeError(f"cannot fuse features of shapes {e_a.shape} and {e_e.shape}")
    fused = e_a if e_e is None else ag.concat([e_a, e_e], axis=-1)
    return ag.softmax(_conv(fused, params, "head"), axis=-1)


def suppress(s_coarse: Tensor | None, s_final: Tensor, a_ness: Tensor):
    scale = _column(a_ness)
    s_coarse_supp = None if s_coarse is None else scale * s_coarse
    return s_coarse_supp, scale * s_final


def dropout(x: Tensor, rate: float, rng: Xoshiro256) -> Tensor:
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * Tensor(keep.astype(x.dtype))


def forward(x, cfg: ModelConfig, params: dict, mode: str = "eval", rng: Xoshiro256 | None = None) -> ModelOutputs:
    """Run both branches, fuse, classify and suppress.

    Without the temporal branch there is no learned action-ness; one minus the
    background probability of the final T-CAS stands in for it.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != cfg.feature_dim:
        raise ag.ShapeError(f"expected feature dim {cfg.feature_dim}, got {x.shape[-1]}")
    if mode == "train" and cfg.dropout_rate > 0:
        if rng is None:
            raise ValueError("train mode with dropout needs an rng")
        x = dropout(x, cfg.dropout_rate, rng)

    out = {}
    if cfg.use_cad:
        s_coarse, x_a, m_def, e_a = cad_forward(x, cfg, params)
        out.update(s_coarse=s_coarse, m_def=m_def)
    else:
        x_a = ag.relu(_conv(x, params, "embed"))
        e_a = x_a
    e_e = None
    if cfg.use_tea:
        x_e, m_e, e_e, s_temp, a_ness = tea_forward(x, cfg, params)
        out.update(x_e=x_e, m_e=m_e, e_e=e_e, s_temp=s_temp)
    s_final = fuse_and_classify(e_a, e_e, params)
    if not cfg.use_tea:
        a_ness = 1.0 - s_final[..., -1]
    s_coarse_supp, s_final_supp = suppress(out.get("s_coarse"), s_final, a_ness)
    return ModelOutputs(
        s_final=s_final, a_ness=a_ness, s_final_supp=s_final_supp, x_a=x_a, e_a=e_a,
        s_coarse_supp=s_coarse_supp, **out,
    )
