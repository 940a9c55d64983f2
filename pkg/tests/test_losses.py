"""Loss values against direct formula evaluation."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from jcdnet import losses as L
from jcdnet import model as M
from jcdnet.autograd import Tensor
from jcdnet.config import experiment_flags
from jcdnet.rng import Xoshiro256


def T64(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def mil_oracle(s, y, k):
    v = np.sort(s, axis=0)[::-1][:k].mean(axis=0)
    p = np.exp(v) / np.exp(v).sum()
    yh = np.asarray(y, float) / np.sum(y)
    return -float(np.sum(yh * np.log(p)))


def test_mil_analytic_case():
    s = T64([[math.log(3.0), 0.0]])
    assert L.topk_mil_loss(s, [1, 0], 1).item() == pytest.approx(-math.log(0.75), abs=1e-12)


def test_mil_uniform_is_log_classes():
    s = T64(np.full((6, 4), 0.3))
    assert L.topk_mil_loss(s, [0, 1, 0, 0], 2).item() == pytest.approx(math.log(4))


def test_mil_multilabel_matches_oracle(nprng):
    s = nprng.uniform(size=(4, 3))
    y = [1, 1, 0]
    assert L.topk_mil_loss(T64(s), y, 2).item() == pytest.approx(mil_oracle(s, y, 2), abs=1e-12)


def test_mil_rejects_empty_label():
    with pytest.raises(ValueError):
        L.topk_mil_loss(T64(np.ones((3, 2))), [0, 0], 1)


@given(arrays(np.float64, (5, 3), elements=st.floats(-5, 5)), st.floats(-10, 10), st.integers(1, 5))
def test_mil_nonnegative_and_shift_invariant(s, shift, k):
    y = [0, 1, 1]
    a = L.topk_mil_loss(T64(s), y, k).item()
    b = L.topk_mil_loss(T64(s + shift), y, k).item()
    assert a >= 0
    assert a == pytest.approx(b, abs=1e-9)


def test_mil_batch_is_mean_of_videos(nprng):
    s = nprng.uniform(size=(3, 5, 3))
    y = np.eye(3)[[0, 1, 0]]
    each = [mil_oracle(s[i], y[i], 2) for i in range(3)]
    assert L.topk_mil_loss(T64(s), y, 2).item() == pytest.approx(np.mean(each), abs=1e-12)


def test_labels_force_background_bit():
    y = np.array([1.0, 0.0, 1.0])
    np.testing.assert_array_equal(L.foreground_label(y), [1, 0, 0])
    np.testing.assert_array_equal(L.full_label(y), [1, 0, 1])


def test_suppressed_loss_terms(nprng):
    a, b = nprng.uniform(size=(6, 3)), nprng.uniform(size=(6, 3))
    y = [1, 0, 0]
    single = L.topk_mil_loss(T64(a), y, 2).item()
    assert L.suppressed_loss(T64(a), T64(b), y, 2, 0.0).item() == pytest.approx(single)
    assert L.suppressed_loss(T64(a), T64(a), y, 2, 0.8).item() == pytest.approx(1.8 * single)
    want = mil_oracle(a, y, 2) + 0.8 * mil_oracle(b, y, 2)
    assert L.suppressed_loss(T64(a), T64(b), y, 2, 0.8).item() == pytest.approx(want, abs=1e-12)


def test_unsuppressed_loss_terms(nprng):
    s, t = nprng.uniform(size=(6, 3)), nprng.normal(size=(6, 2))
    y = np.array([0.0, 1.0, 0.0])
    y_full, y_fg = L.full_label(y), L.foreground_label(y)
    first = mil_oracle(s, y_full, 2)
    assert L.unsuppressed_loss(T64(s), T64(t), y_full, y_fg, 2, 0.0).item() == pytest.approx(first)
    want = first + 0.7 * mil_oracle(t, y_fg[:-1], 2)
    assert L.unsuppressed_loss(T64(s), T64(t), y_full, y_fg, 2, 0.7).item() == pytest.approx(want, abs=1e-12)
    saturated = np.zeros((6, 2))
    saturated[:, 1] = 50.0
    second = L.unsuppressed_loss(T64(s), T64(saturated), y_full, y_fg, 2, 1.0).item() - first
    assert second == pytest.approx(0.0, abs=1e-12)


def casl_oracle(em, sm, en, sn, shared, margin):
    def hl(e, s, j):
        a = np.exp(s[:, j] - s[:, j].max())
        a /= a.sum()
        return (a[:, None] * e).sum(0), (((1 - a) / (len(a) - 1))[:, None] * e).sum(0)

    def d(u, v):
        return 1 - u @ v / (np.linalg.norm(u) * np.linalg.norm(v))

    vals = []
    for j in shared:
        hm, lm = hl(em, sm, j)
        hn, ln = hl(en, sn, j)
        vals.append(0.5 * (max(0, d(hm, hn) - d(hm, ln) + margin) + max(0, d(hm, hn) - d(lm, hn) + margin)))
    return float(np.mean(vals))


def test_casl_matches_oracle(nprng):
    em, en = nprng.normal(size=(5, 4)), nprng.normal(size=(5, 4))
    sm, sn = nprng.uniform(size=(5, 3)), nprng.uniform(size=(5, 3))
    got = L.casl_loss(T64(em), T64(sm), T64(en), T64(sn), [0, 2], 0.5).item()
    assert got == pytest.approx(casl_oracle(em, sm, en, sn, [0, 2], 0.5), abs=1e-9)


def test_casl_separated_and_degenerate_cases():
    # two snippets with near one-hot attention make high/low land on e1/e2
    e = T64([[1.0, 0.0], [0.0, 1.0]])
    s = T64([[40.0], [0.0]])
    assert L.casl_loss(e, s, e, s, [0], 0.5).item() == pytest.approx(0.0, abs=1e-6)
    same = T64([[1.0, 0.0], [1.0, 0.0]])
    assert L.casl_loss(same, s, same, s, [0], 0.5).item() == pytest.approx(0.5, abs=1e-6)
    assert L.casl_loss(e, s, e, s, [], 0.5).item() == 0.0


@given(st.integers(0, 10_000))
def test_casl_bounds(seed):
    rng = np.random.default_rng(seed)
    args = [T64(rng.normal(size=(4, 3))), T64(rng.uniform(size=(4, 2))),
            T64(rng.normal(size=(4, 3))), T64(rng.uniform(size=(4, 2)))]
    v = L.casl_loss(*args, [0, 1], 0.5).item()
    assert 0.0 <= v <= 1.5 + 1e-9


def test_norm_and_guide_examples():
    assert L.norm_loss(T64([0.2, 0.4])).item() == pytest.approx(0.3)
    assert L.norm_loss(T64([1e-9, 1e-9])).item() == pytest.approx(0.0, abs=1e-8)
    assert L.guide_loss(T64([0.3]), T64([[0.1, 0.2, 0.7]])).item() == pytest.approx(0.0, abs=1e-12)
    assert L.guide_loss(T64([1.0 - 1e-9]), T64([[0.0, 1.0]])).item() == pytest.approx(1.0, abs=1e-8)


def test_guide_matches_formula(nprng):
    a = nprng.uniform(size=6)
    s = nprng.dirichlet(np.ones(3), size=6)
    assert L.guide_loss(T64(a), T64(s)).item() == pytest.approx(np.mean(np.abs(1 - a - s[:, -1])))


@given(st.integers(0, 10_000))
def test_norm_loss_monotone_in_sigmoid_inputs(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=5)
    lower = z - rng.uniform(0.01, 2.0, size=5)
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    assert L.norm_loss(T64(sig(lower))).item() < L.norm_loss(T64(sig(z))).item()


def _batch_outputs(seed=0, **kw):
    cfg = M.ModelConfig(num_classes=2, feature_dim=5, hidden_dim=4, dropout_rate=0.0, **kw)
    params = M.init_params(cfg, Xoshiro256(seed), dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = T64(rng.normal(size=(4, 8, 5)))
    labels = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 0]])
    return M.forward(x, cfg, params), labels, [(0, 1, [0]), (2, 3, [1])]


def test_total_loss_components_sum_and_recompute():
    out, y, pairs = _batch_outputs()
    w = L.LossWeights()
    total, comps = L.total_loss(out, y, pairs, w, L.AblationFlags())
    assert sum(comps.values()) == pytest.approx(total.item(), abs=1e-6)
    k = w.k_for(8)
    y_fg, y_full = L.foreground_label(y), L.full_label(y)
    mil = L.unsuppressed_loss(out.s_final, out.s_temp, y_full, y_fg, k, w.lambda1).item()
    supp = L.suppressed_loss(out.s_final_supp, out.s_coarse_supp, y_fg, k, w.lambda0).item()
    cas = np.mean([L.casl_loss(out.e_a[m], out.s_coarse_supp[m], out.e_a[n], out.s_coarse_supp[n], s).item()
                   for m, n, s in pairs])
    expected = mil + supp + w.lambda2 * cas + w.lambda3 * L.norm_loss(out.a_ness).item() \
        + w.lambda4 * L.guide_loss(out.a_ness, out.s_final).item()
    assert total.item() == pytest.approx(expected, abs=1e-9)
    assert comps["l_mil"] == pytest.approx(mil) and comps["l_supp"] == pytest.approx(supp)


def test_baseline_flags_leave_only_mil():
    out, y, pairs = _batch_outputs(use_cad=False, use_tea=False)
    total, comps = L.total_loss(out, y, pairs, L.LossWeights(), experiment_flags(1))
    assert {k for k, v in comps.items() if v != 0.0} == {"l_mil"}
    direct = L.topk_mil_loss(out.s_final, L.full_label(y), L.LossWeights().k_for(8)).item()
    assert total.item() == pytest.approx(direct)


def test_k_rule_and_weight_validation():
    w = L.LossWeights()
    assert (w.k_for(500), w.k_for(60), w.k_for(5)) == (62, 7, 1)
    with pytest.raises(ValueError):
        L.LossWeights(lambda2=-1.0)
    with pytest.raises(ValueError):
        L.AblationFlags(use_tea=False, use_l_norm=True, use_l_supp_mil=False, use_l_supp_coarse=False,
                        use_l_guide=False, use_l_cas=False).validate()
