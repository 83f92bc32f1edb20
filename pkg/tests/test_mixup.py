import math

import numpy as np
import numpy.testing as npt
import pytest
from scipy import stats

from mran.autodiff import Graph, Tensor, add_bias, interpolate, l1_distance, log_softmax, matmul
from mran.errors import ConfigError, DimensionError, UsageError, ValidationError
from mran.losses import adversarial_loss, classification_loss, one_hot
from mran.mixup import (
    MixPair,
    domain_mixup_adv_loss,
    labeled_category_mixup_loss,
    make_pairs,
    mix,
    sample_lambda,
    unlabeled_consistency_loss,
)
from mran.network import NUM_CLASSES, class_log_probs

CASES = 1000


@pytest.mark.parametrize("alpha", [0.2, 1.0, 2.0])
def test_beta_mean_is_one_half(alpha):
    draws = sample_lambda(alpha, np.random.default_rng(0), size=100_000)
    assert draws.mean() == pytest.approx(0.5, abs=0.01)
    assert ((draws >= 0.0) & (draws <= 1.0)).all()


def test_beta_variance_at_published_alpha():
    draws = sample_lambda(0.2, np.random.default_rng(1), size=100_000)
    assert draws.var() == pytest.approx(1.0 / (4.0 * 1.4), rel=0.05)


def test_beta_one_one_is_uniform():
    draws = sample_lambda(1.0, np.random.default_rng(2), size=100_000)
    assert stats.kstest(draws, "uniform").statistic < 0.02


def test_scalar_draw_and_alpha_guard(rng):
    lam = sample_lambda(0.2, rng)
    assert isinstance(lam, float) and 0.0 <= lam <= 1.0
    with pytest.raises(ConfigError):
        sample_lambda(0.0, rng)


def test_mix_examples():
    pair = MixPair(Tensor([[0.0, 2.0]]), Tensor([[2.0, 0.0]]), 0.5)
    x, y = mix(pair)
    npt.assert_array_equal(x.values, [[1.0, 1.0]])
    assert y is None

    pair = MixPair(Tensor([[1.0]]), Tensor([[3.0]]), 0.3, np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    _, y = mix(pair)
    npt.assert_allclose(y, [[0.3, 0.7]])

    x, y = mix(MixPair(Tensor([[4.0, 5.0]]), Tensor([[1.0, 1.0]]), 1.0, np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]])))
    npt.assert_array_equal(x.values, [[4.0, 5.0]])
    npt.assert_array_equal(y, [[0.0, 1.0]])


def test_mix_pair_validation():
    with pytest.raises(DimensionError):
        MixPair(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), 0.5)
    with pytest.raises(ValidationError):
        MixPair(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), 1.5)
    with pytest.raises(ValidationError):
        MixPair(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), 0.5, np.array([[1.0, 0.0]]), None)
    with pytest.raises(ValidationError):
        MixPair(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), 0.5, np.array([[0.6, 0.6]]), np.array([[1.0, 0.0]]))


def test_mixed_labels_stay_on_simplex(rng):
    for _ in range(CASES):
        y_k = rng.dirichlet(np.ones(NUM_CLASSES), size=3)
        y_s = rng.dirichlet(np.ones(NUM_CLASSES), size=3)
        _, y = mix(MixPair(Tensor(np.zeros((3, 1))), Tensor(np.zeros((3, 1))), rng.random(), y_k, y_s))
        assert (y >= 0.0).all()
        npt.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)


def test_make_pairs_permutes_within_batch(rng):
    x = np.arange(12.0).reshape(6, 2)
    labels = one_hot([0, 1, 0, 1, 1, 0], 2)
    pair = make_pairs(x, rng, 0.4, labels, domain=2)
    assert sorted(map(tuple, pair.x_s.values)) == sorted(map(tuple, x))
    assert pair.domain_k == pair.domain_s == 2
    rows = [int(r[0]) // 2 for r in pair.x_s.values]
    npt.assert_array_equal(pair.y_s, labels[rows])
    with pytest.raises(UsageError):
        make_pairs(np.zeros((0, 2)), rng, 0.5)


def _random_pair(rng, rows=3, dim=6, lam=None):
    y_k = one_hot(rng.integers(0, 2, size=rows), 2)
    y_s = one_hot(rng.integers(0, 2, size=rows), 2)
    lam = rng.random() if lam is None else lam
    return MixPair(Tensor(rng.standard_normal((rows, dim))), Tensor(rng.standard_normal((rows, dim))), lam, y_k, y_s, 0, 0)


@pytest.mark.parametrize("lam", [0.0, 1.0])
def test_endpoints_collapse_to_unmixed_losses(tiny_model, rng, lam):
    for _ in range(CASES // 2):
        pair = _random_pair(rng, lam=lam)
        end_x, end_y = (pair.x_k, pair.y_k) if lam == 1.0 else (pair.x_s, pair.y_s)
        labels = end_y.argmax(axis=1)
        assert labeled_category_mixup_loss(tiny_model, 0, pair).item() == pytest.approx(
            classification_loss(tiny_model, 0, end_x, labels).item(), abs=1e-10
        )
        assert unlabeled_consistency_loss(tiny_model, 0, pair).item() == pytest.approx(0.0, abs=1e-10)
        assert domain_mixup_adv_loss(tiny_model, [pair]).item() == pytest.approx(
            adversarial_loss(tiny_model, [(0, end_x)]).item(), abs=1e-10
        )


def test_swapping_roles_leaves_losses_unchanged(tiny_model, rng):
    for _ in range(CASES):
        pair = _random_pair(rng)
        swapped = pair.swapped()
        for loss in (labeled_category_mixup_loss, unlabeled_consistency_loss):
            assert loss(tiny_model, 0, pair).item() == pytest.approx(loss(tiny_model, 0, swapped).item(), abs=1e-10)
        assert domain_mixup_adv_loss(tiny_model, [pair]).item() == pytest.approx(
            domain_mixup_adv_loss(tiny_model, [swapped]).item(), abs=1e-10
        )


def test_soft_label_loss_is_linear_in_the_label_mix(tiny_model, rng):
    for _ in range(CASES):
        pair = _random_pair(rng)
        x_mix, _ = mix(pair)
        log_probs = class_log_probs(tiny_model, 0, x_mix, training=False).values
        nll_k = -(pair.y_k * log_probs).sum(axis=1).mean()
        nll_s = -(pair.y_s * log_probs).sum(axis=1).mean()
        assert labeled_category_mixup_loss(tiny_model, 0, pair).item() == pytest.approx(
            pair.lam * nll_k + (1.0 - pair.lam) * nll_s, abs=1e-10
        )


def test_identical_pairs_have_zero_consistency_penalty(tiny_model, rng):
    for _ in range(CASES):
        x = Tensor(rng.standard_normal((3, 6)))
        pair = MixPair(x, x, rng.random(), domain_k=1, domain_s=1)
        assert unlabeled_consistency_loss(tiny_model, 1, pair).item() == pytest.approx(0.0, abs=1e-10)


def test_identical_labeled_pairs_reduce_to_plain_loss(tiny_model, rng):
    x = Tensor(rng.standard_normal((4, 6)))
    y = one_hot([0, 1, 1, 0], 2)
    pair = MixPair(x, x, 0.37, y, y, 0, 0)
    assert labeled_category_mixup_loss(tiny_model, 0, pair).item() == pytest.approx(
        classification_loss(tiny_model, 0, x, np.array([0, 1, 1, 0])).item(), abs=1e-12
    )


def test_consistency_vanishes_for_linear_maps_only(rng):
    w, b = Tensor(rng.standard_normal((5, 3))), Tensor(rng.standard_normal(3))
    x_k, x_s, lam = Tensor(rng.standard_normal((4, 5))), Tensor(rng.standard_normal((4, 5))), 0.3

    def linear(x):
        return add_bias(matmul(x, w), b)

    target = interpolate(linear(x_k), linear(x_s), lam)
    assert l1_distance(linear(interpolate(x_k, x_s, lam)), target).item() == pytest.approx(0.0, abs=1e-12)

    target = interpolate(log_softmax(linear(x_k)), log_softmax(linear(x_s)), lam)
    assert l1_distance(log_softmax(linear(interpolate(x_k, x_s, lam))), target).item() > 1e-6


def test_uniform_discriminator_gives_m_log_m(tiny_model, rng):
    for weight, bias in tiny_model.discriminator.layers:
        weight.values[...] = 0.0
        bias.values[...] = 0.0
    pairs = [make_pairs(rng.standard_normal((4, 6)), rng, 0.6, domain=i) for i in range(3)]
    assert domain_mixup_adv_loss(tiny_model, pairs).item() == pytest.approx(3 * math.log(3))


def test_domain_mixup_rejects_cross_domain_pairs(tiny_model, rng):
    pair = MixPair(Tensor(rng.standard_normal((2, 6))), Tensor(rng.standard_normal((2, 6))), 0.5, domain_k=0, domain_s=1)
    with pytest.raises(UsageError):
        domain_mixup_adv_loss(tiny_model, [pair])


def test_per_pair_lambda(tiny_model, rng):
    lam = np.array([1.0, 0.0, 1.0])
    pair = _random_pair(rng, lam=lam)
    x, _ = mix(pair)
    npt.assert_array_equal(x.values[0], pair.x_k.values[0])
    npt.assert_array_equal(x.values[1], pair.x_s.values[1])
    assert unlabeled_consistency_loss(tiny_model, 0, pair).item() == pytest.approx(0.0, abs=1e-10)


def test_identical_pairs_give_no_consistency_gradient(tiny_model, rng):
    for _ in range(200):
        x = Tensor(rng.standard_normal((3, 6)))
        pair = MixPair(x, x, rng.random(), domain_k=1, domain_s=1)
        tiny_model.zero_grad()
        with Graph() as graph:
            loss = unlabeled_consistency_loss(tiny_model, 1, pair)
        graph.backward(loss)
        assert loss.item() == 0.0
        for name, param in tiny_model.parameters().items():
            assert not param.grad.any(), name


def test_fixed_point_rows_add_no_consistency_gradient(tiny_model, rng):
    x = rng.standard_normal((4, 6))
    fixed = make_pairs(x, rng, 0.3, domain=0, order=np.array([0, 2, 1, 3]))
    swapped_only = MixPair(Tensor(x[1:3]), Tensor(x[[2, 1]]), 0.3, domain_k=0, domain_s=0)
    grads = []
    for pair, rows in ((fixed, 4), (swapped_only, 2)):
        tiny_model.zero_grad()
        with Graph() as graph:
            loss = unlabeled_consistency_loss(tiny_model, 0, pair) * rows
        graph.backward(loss)
        grads.append({name: p.grad.copy() for name, p in tiny_model.parameters().items()})
    for name in grads[0]:
        npt.assert_allclose(grads[0][name], grads[1][name], atol=1e-12, err_msg=name)


def test_make_pairs_with_explicit_order(rng):
    x = np.arange(8.0).reshape(4, 2)
    pair = make_pairs(x, rng, 0.5, order=np.array([1, 0, 3, 2]))
    npt.assert_array_equal(pair.x_s.values, x[[1, 0, 3, 2]])
    with pytest.raises(UsageError):
        make_pairs(x, rng, 0.5, order=np.array([0, 0, 1, 2]))
