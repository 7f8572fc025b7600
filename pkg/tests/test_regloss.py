import math

import numpy as np
import pytest
import torch

from morphdet.grlnet import BackboneSpec, DiscriminatorBank, LevelOutputs
from morphdet.regloss import (
    LossWeights,
    js_divergence,
    kl_divergence,
    loss_cls,
    loss_emb,
    loss_label,
    loss_total,
    tempered_softmax,
)

LN2 = math.log(2.0)


def _outputs(heads):
    """LevelOutputs stub carrying only classifier logits."""
    heads = [torch.as_tensor(h, dtype=torch.float64) for h in heads]
    return LevelOutputs(
        features=tuple(),
        f_cat=torch.zeros(heads[0].shape[0], 1, dtype=torch.float64),
        logits_aux=tuple(heads[:-2]),
        logits_final=heads[-2],
        logits_cat=heads[-1],
    )


class TestTemperedSoftmax:
    def test_symmetric_logits(self):
        for tau in (0.1, 1.0, 25.0):
            p = tempered_softmax(np.array([0.0, 0.0]), tau)
            assert torch.allclose(p, torch.tensor([0.5, 0.5], dtype=p.dtype))

    def test_infinite_temperature_limit(self):
        p = tempered_softmax(np.array([3.0, 1.0]), 1e6)
        assert np.abs(p.numpy() - [0.5, 0.5]).max() <= 1e-5

    def test_formula_value(self):
        p = tempered_softmax(np.array([1.0, 0.0]), 1.0)
        assert np.abs(p.numpy() - [0.73106, 0.26894]).max() <= 1e-5

    def test_direction_of_temperature(self):
        sharp = tempered_softmax(np.array([1.0, 0.0]), 0.1)
        soft = tempered_softmax(np.array([1.0, 0.0]), 10.0)
        assert sharp[0] > 0.99
        assert soft[0] < 0.55

    def test_normalization_extreme_logits(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            z = rng.uniform(-1e4, 1e4, rng.integers(2, 8))
            p = tempered_softmax(z, 0.1)
            assert torch.isfinite(p).all()
            assert abs(float(p.sum()) - 1.0) <= 1e-12

    def test_tau_guard(self):
        with pytest.raises(ValueError):
            tempered_softmax(np.array([1.0, 0.0]), 0.0)
        with pytest.raises(ValueError):
            LossWeights(tau=-1.0)


class TestDivergences:
    def test_self_divergence_zero(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = rng.dirichlet(np.ones(rng.integers(2, 6)))
            assert float(kl_divergence(p, p)) == pytest.approx(0.0, abs=1e-12)
            assert float(js_divergence(p, p)) == pytest.approx(0.0, abs=1e-12)

    def test_js_disjoint_support(self):
        val = float(js_divergence(np.array([1.0, 0.0]), np.array([0.0, 1.0])))
        assert abs(val - LN2) <= 1e-9

    def test_kl_point_mass_vs_uniform(self):
        val = float(kl_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5])))
        assert abs(val - LN2) <= 1e-12

    def test_js_symmetric_and_bounded(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            k = rng.integers(2, 8)
            p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
            ab = float(js_divergence(p, q))
            ba = float(js_divergence(q, p))
            assert abs(ab - ba) <= 1e-12
            assert -1e-12 <= ab <= LN2 + 1e-12

    def test_kl_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            k = rng.integers(2, 8)
            p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
            assert float(kl_divergence(p, q)) >= -1e-12

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            kl_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.25, 0.25]))


class TestLossCls:
    def test_uniform_heads(self):
        out = _outputs([np.zeros((1, 2))] * 5)
        val = float(loss_cls(out, [0], LossWeights()))
        assert abs(val - 5 * LN2) <= 1e-9

    def test_saturated_heads(self):
        out = _outputs([np.array([[100.0, 0.0]])] * 5)
        val = float(loss_cls(out, [0], LossWeights(tau=0.1)))
        assert val <= 1e-6

    def test_scalar_oracle_single_head(self):
        z = np.array([[0.7, -0.3]])
        tau = 0.4
        out = _outputs([np.zeros((1, 2)), z, np.zeros((1, 2))])
        # hand-computed CE for the middle head at label 1
        zt = z[0] / tau
        expect = -(zt[1] - np.log(np.exp(zt[0]) + np.exp(zt[1]))) + 2 * LN2
        val = float(loss_cls(out, [1], LossWeights(tau=tau)))
        assert abs(val - expect) <= 1e-9

    def test_batch_average(self):
        out1 = _outputs([np.array([[1.0, 0.0]])] * 3)
        out2 = _outputs([np.array([[1.0, 0.0], [1.0, 0.0]])] * 3)
        w = LossWeights(tau=1.0)
        assert float(loss_cls(out1, [0], w)) == pytest.approx(
            float(loss_cls(out2, [0, 0], w)), abs=1e-12
        )


class TestLossLabel:
    def test_identical_outputs_zero(self):
        heads = [np.random.default_rng(4).normal(size=(3, 2)) for _ in range(5)]
        out = _outputs(heads)
        val = float(loss_label(out, _outputs(heads), LossWeights()))
        assert abs(val) <= 1e-12

    def test_single_head_contribution(self):
        w = LossWeights(tau=1.0)
        base = [np.zeros((1, 2))] * 4
        out_s = _outputs(base + [np.array([[1.0, 0.0]])])
        out_t = _outputs(base + [np.array([[0.0, 1.0]])])
        ps = tempered_softmax(np.array([1.0, 0.0]), 1.0)
        pt = tempered_softmax(np.array([0.0, 1.0]), 1.0)
        expect = float(kl_divergence(ps, pt))
        assert float(loss_label(out_s, out_t, w)) == pytest.approx(expect, abs=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(5)
        w = LossWeights()
        for _ in range(20):
            hs = [rng.normal(size=(2, 2)) for _ in range(5)]
            ht = [rng.normal(size=(2, 2)) for _ in range(5)]
            assert float(loss_label(_outputs(hs), _outputs(ht), w)) >= -1e-12

    def test_stop_gradient_on_source(self):
        w = LossWeights(tau=1.0)
        zs = torch.randn(2, 2, dtype=torch.float64, requires_grad=True)
        zt = torch.randn(2, 2, dtype=torch.float64, requires_grad=True)
        heads_s = [zs] * 5
        heads_t = [zt] * 5
        val = loss_label(_outputs(heads_s), _outputs(heads_t), w)
        val.backward()
        assert zs.grad is None or torch.all(zs.grad == 0)
        assert torch.any(zt.grad != 0)

    def test_pairing_mismatch(self):
        w = LossWeights()
        out_s = _outputs([np.zeros((2, 2))] * 5)
        out_t = _outputs([np.zeros((3, 2))] * 5)
        with pytest.raises(ValueError):
            loss_label(out_s, out_t, w)


def _bank(levels=4, d=8):
    spec = BackboneSpec(levels=levels, channels=tuple(8 for _ in range(levels)), aligned_dim=d)
    return DiscriminatorBank(spec).double()


class TestLossEmb:
    def test_equal_features_untrained_bank(self):
        w = LossWeights()
        bank = _bank()
        feats = [torch.randn(3, 8, dtype=torch.float64) for _ in range(3)]
        feats.append(torch.randn(3, 32, dtype=torch.float64))
        f_loss, d_loss = loss_emb(feats, [f.clone() for f in feats], bank, w)
        # JSD term vanishes; adversarial term is 2*eta*ln(0.5) per level
        assert float(f_loss) == pytest.approx(4 * 2 * w.eta * math.log(0.5), abs=1e-9)
        assert float(d_loss) == pytest.approx(4 * 2 * LN2, abs=1e-9)

    def test_jsd_term_bounded(self):
        w = LossWeights(eta=0.0)
        bank = _bank()
        rng = np.random.default_rng(6)
        fs = [torch.tensor(rng.normal(size=(2, 8)) * 50) for _ in range(3)]
        fs.append(torch.tensor(rng.normal(size=(2, 32)) * 50))
        ft = [torch.tensor(rng.normal(size=(2, 8)) * 50) for _ in range(3)]
        ft.append(torch.tensor(rng.normal(size=(2, 32)) * 50))
        f_loss, _ = loss_emb(fs, ft, bank, w)
        assert float(f_loss) <= 4 * LN2 + 1e-9

    def test_perfect_discrimination_ce(self):
        w = LossWeights()
        bank = _bank()
        # saturate the final layers so probs clamp at the boundaries
        for disc in bank.discs:
            torch.nn.init.constant_(disc[0].weight, 1.0)
            torch.nn.init.constant_(disc[0].bias, 1.0)
            torch.nn.init.constant_(disc[2].weight, 1e6)
            torch.nn.init.zeros_(disc[2].bias)
        feats = [torch.ones(1, 8, dtype=torch.float64) for _ in range(3)]
        feats.append(torch.ones(1, 32, dtype=torch.float64))
        probs = [bank.prob(i, f) for i, f in enumerate(feats)]
        assert all(float(p) == pytest.approx(1 - 1e-7) for p in probs)
        # disc CE with source right (p~1) and target wrong (p~1): the source
        # side contributes ~0, the target side the clamped -log(1e-7)
        _, d_loss = loss_emb(feats, [f.clone() for f in feats], bank, w)
        assert float(d_loss) == pytest.approx(4 * -math.log(1e-7), rel=1e-6)

    def test_length_mismatch(self):
        w = LossWeights()
        bank = _bank()
        feats = [torch.zeros(1, 8, dtype=torch.float64)] * 2
        with pytest.raises(ValueError):
            loss_emb(feats, feats, bank, w)


class TestLossTotal:
    def test_degenerate_weights(self):
        w = LossWeights(mu=0.0, delta=0.0)
        val = loss_total(torch.tensor(1.7), torch.tensor(5.0), torch.tensor(9.0), w)
        assert float(val) == pytest.approx(1.7)

    def test_paper_weights_arithmetic(self):
        w = LossWeights(tau=0.1, eta=0.1, mu=0.05, delta=0.1)
        val = loss_total(torch.tensor(1.0), torch.tensor(1.0), torch.tensor(1.0), w)
        assert float(val) == pytest.approx(1.15, abs=1e-12)

    def test_linearity_in_label_term(self):
        w = LossWeights()
        one = float(loss_total(torch.tensor(0.0), torch.tensor(1.0), torch.tensor(0.0), w))
        two = float(loss_total(torch.tensor(0.0), torch.tensor(2.0), torch.tensor(0.0), w))
        assert two == pytest.approx(2 * one, abs=1e-12)

    def test_non_finite_raises(self):
        w = LossWeights()
        with pytest.raises(FloatingPointError):
            loss_total(torch.tensor(float("nan")), torch.tensor(0.0), torch.tensor(0.0), w)
        with pytest.raises(FloatingPointError):
            loss_total(torch.tensor(0.0), torch.tensor(float("inf")), torch.tensor(0.0), w)


def _fd_grad(fn, x, eps=1e-5):
    """Central finite differences of a scalar function at x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(x.size):
        orig = xf[i]
        xf[i] = orig + eps
        hi = fn(x)
        xf[i] = orig - eps
        lo = fn(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2 * eps)
    return grad


def _rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


class TestGradientChecks:
    """Analytic (autograd) gradients vs central finite differences."""

    def test_loss_cls_grad(self):
        w = LossWeights(tau=0.3)
        rng = np.random.default_rng(10)
        for trial in range(20):
            z = rng.normal(size=(2, 5, 2))  # 5 heads, batch 2
            y = rng.integers(0, 2, 2)

            def value(zv):
                heads = [torch.as_tensor(zv[:, i]) for i in range(5)]
                return float(loss_cls(_outputs(heads), y, w))

            zt = torch.tensor(z, requires_grad=True)
            heads = [zt[:, i] for i in range(5)]
            loss = loss_cls(_outputs(heads), y, w)
            loss.backward()
            assert _rel_err(zt.grad.numpy(), _fd_grad(value, z.copy())) <= 1e-4

    def test_loss_label_grad_target_side(self):
        w = LossWeights(tau=0.5)
        rng = np.random.default_rng(11)
        for trial in range(20):
            zs = rng.normal(size=(2, 5, 2))
            zt = rng.normal(size=(2, 5, 2))

            def value(ztv):
                hs = [torch.as_tensor(zs[:, i]) for i in range(5)]
                ht = [torch.as_tensor(ztv[:, i]) for i in range(5)]
                return float(loss_label(_outputs(hs), _outputs(ht), w))

            t = torch.tensor(zt, requires_grad=True)
            hs = [torch.as_tensor(zs[:, i]) for i in range(5)]
            ht = [t[:, i] for i in range(5)]
            loss = loss_label(_outputs(hs), _outputs(ht), w)
            loss.backward()
            assert _rel_err(t.grad.numpy(), _fd_grad(value, zt.copy())) <= 1e-4

    def test_loss_emb_feature_grad(self):
        w = LossWeights()
        rng = np.random.default_rng(12)
        spec = BackboneSpec(levels=3, channels=(8, 8, 8), aligned_dim=6)
        torch.manual_seed(5)
        bank = DiscriminatorBank(spec).double()
        for disc in bank.discs:  # move probs off the 0.5 saddle
            torch.nn.init.normal_(disc[2].weight, std=0.5)
        dims = [6, 6, 18]
        for trial in range(20):
            fs = [rng.normal(size=(2, d)) for d in dims]
            ft = [rng.normal(size=(2, d)) for d in dims]

            def value(flat, side):
                fs_v = [torch.as_tensor(f) for f in fs]
                ft_v = [torch.as_tensor(f) for f in ft]
                (fs_v if side == "s" else ft_v)[1] = torch.as_tensor(flat)
                out, _ = loss_emb(fs_v, ft_v, bank, w)
                return float(out)

            for side, arrs in (("s", fs), ("t", ft)):
                leaf = torch.tensor(arrs[1], requires_grad=True)
                fs_v = [torch.as_tensor(f) for f in fs]
                ft_v = [torch.as_tensor(f) for f in ft]
                (fs_v if side == "s" else ft_v)[1] = leaf
                out, _ = loss_emb(fs_v, ft_v, bank, w)
                out.backward()
                fd = _fd_grad(lambda a, s=side: value(a, s), arrs[1].copy())
                assert _rel_err(leaf.grad.numpy(), fd) <= 1e-4
