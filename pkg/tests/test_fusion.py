import math

import numpy as np
import pytest
import torch

from endemic.coattn import CoAttention
from endemic.fusion import (
    ClassifierHead,
    ContextEncoder,
    FeatureStandardizer,
    NumericError,
    SchemaError,
    classify,
    dropout,
    encode_context,
)
from endemic.model import ModelDims
from oracles import grad_check


def test_zero_features_zero_bias_zero_preactivation():
    enc = ContextEncoder(2, 3, 5).double()
    with torch.no_grad():
        enc.linear.bias.zero_()
    out = encode_context(np.zeros(2), np.zeros(3), enc)
    assert out.shape == (5,)
    assert torch.equal(out, torch.zeros(5, dtype=torch.float64))


def test_scalar_ffn_equals_affine_plus_tanh():
    enc = ContextEncoder(1, 1, 1).double()
    with torch.no_grad():
        enc.linear.weight.copy_(torch.tensor([[0.7, -1.3]], dtype=torch.float64))
        enc.linear.bias.fill_(0.2)
    enc.standardizer.fit(np.array([[1.0, 4.0], [3.0, 8.0]]))
    x_tf, x_uf = 2.5, 5.0
    z = [(x_tf - 2.0) / 1.0, (x_uf - 6.0) / 2.0]
    expected = math.tanh(0.7 * z[0] - 1.3 * z[1] + 0.2)
    assert encode_context([x_tf], [x_uf], enc).item() == pytest.approx(expected, abs=1e-15)


def test_schema_length_mismatch():
    enc = ContextEncoder(2, 2, 4).double()
    with pytest.raises(SchemaError):
        encode_context(np.zeros(3), np.zeros(2), enc)


def test_standardizer_ignores_nan_and_maps_mask_to_mean():
    s = FeatureStandardizer(2).double()
    s.fit(np.array([[1.0, np.nan], [3.0, 2.0], [np.nan, 4.0]]))
    assert s.mean.tolist() == [2.0, 3.0]
    out = s(torch.tensor([[np.nan, 3.0], [2.0, np.nan]], dtype=torch.float64))
    assert torch.equal(out, torch.zeros(2, 2, dtype=torch.float64))
    const = FeatureStandardizer(1).double().fit(np.array([[5.0], [5.0]]))
    assert const.std.item() == 1.0


def parts(K=3, G=2, C=2, n=4, seed=0):
    rng = np.random.default_rng(seed)
    return [torch.as_tensor(rng.standard_normal((n, d))) for d in (K, K, G, G, C)]


def test_probabilities_sum_to_one_and_eval_deterministic():
    head = ClassifierHead(12).double()
    for seed in range(10):
        p = classify(*parts(seed=seed), head=head)
        assert torch.allclose(p.sum(-1), torch.ones(4, dtype=torch.float64), atol=1e-9, rtol=0)
        assert torch.equal(p, classify(*parts(seed=seed), head=head))
    g = torch.Generator().manual_seed(0)
    pt = classify(*parts(), head=head, mode="train", generator=g)
    assert torch.allclose(pt.sum(-1), torch.ones(4, dtype=torch.float64), atol=1e-9, rtol=0)


def test_head_input_width():
    assert ModelDims(vocab_size=10, n_tf=4, n_uf=4).head_in == 2688 == 2 * 512 + 2 * 768 + 128


def test_nonfinite_component_named():
    ps = parts()
    ps[2][0, 0] = float("nan")
    with pytest.raises(NumericError, match="tg_hat"):
        classify(*ps, head=ClassifierHead(12).double())


def test_dropout_expectation_matches_eval():
    torch.manual_seed(0)
    head = ClassifierHead(12, p_drop=0.2).double()
    d = torch.cat(parts(n=1, seed=3), dim=-1)
    g = torch.Generator().manual_seed(1)
    n = 10_000
    samples = torch.stack([head.logits(d, train=True, generator=g)[0] for _ in range(n)])
    eval_logits = head.logits(d)[0]
    mean = samples.mean(0)
    se = samples.std(0) / math.sqrt(n)
    assert torch.all((mean - eval_logits).abs() <= 3 * se)
    assert dropout(d, 0.0, g) is d


def test_dropout_rate_and_scaling():
    g = torch.Generator().manual_seed(0)
    x = torch.ones(100_000, dtype=torch.float64)
    y = dropout(x, 0.2, g)
    kept = (y != 0).double().mean().item()
    assert abs(kept - 0.8) < 3 * math.sqrt(0.16 / 100_000)
    assert set(torch.unique(y).tolist()) == {0.0, 1.25}


@pytest.mark.parametrize("seed", range(3))
def test_end_to_end_gradient_through_classify_and_coattend(seed):
    torch.manual_seed(seed)
    K, G, C = 3, 2, 2
    ek = CoAttention(K, 2).double()
    gu = CoAttention(G, 2).double()
    ctx = ContextEncoder(2, 1, C).double()
    head = ClassifierHead(2 * K + 2 * G + C).double()
    rng = np.random.default_rng(seed)
    d_ek = torch.as_tensor(rng.standard_normal((4, K)), dtype=torch.float64).requires_grad_(True)
    d_tt = torch.as_tensor(rng.standard_normal((3, K)), dtype=torch.float64).requires_grad_(True)
    d_tg = torch.as_tensor(rng.standard_normal((1, G)), dtype=torch.float64).requires_grad_(True)
    d_ug = torch.as_tensor(rng.standard_normal((1, G)), dtype=torch.float64).requires_grad_(True)
    x_tf = torch.as_tensor(rng.standard_normal(2))
    x_uf = torch.as_tensor(rng.standard_normal(1))

    def loss():
        a = ek(d_ek, d_tt)
        b = gu(d_tg, d_ug)
        p = classify(a.a_hat, a.b_hat, b.a_hat, b.b_hat, ctx(x_tf, x_uf), head)
        return -torch.log(p[1])

    tensors = [d_ek, d_tt, d_tg, d_ug] + [p for m in (ek, ctx, head) for p in m.parameters()]
    assert grad_check(loss, tensors) < 1e-3
