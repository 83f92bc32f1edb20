import numpy as np
import numpy.testing as npt
import pytest

from mran.autodiff import Graph, finite_diff_check
from mran.errors import GradientCheckError, UsageError
from mran.gradcheck import (
    KINK_MARGIN,
    TERMS,
    Probe,
    TermCheck,
    assert_gradients,
    derangement,
    report_rows,
    run_gradcheck,
)
from mran.mixup import consistency_target, unlabeled_consistency_loss


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_term_passes(seed):
    results = run_gradcheck(seed=seed)
    assert [r.term for r in results] == list(TERMS)
    for check in results:
        assert check.error < 1e-4, check
    assert_gradients(results)


def test_term_filter_and_guards():
    assert [r.term for r in run_gradcheck(["l_u"])] == ["l_u"]
    with pytest.raises(UsageError):
        run_gradcheck(["l_zz"])
    with pytest.raises(UsageError):
        run_gradcheck(dropout=0.4)


def test_failures_name_the_term():
    results = [TermCheck("l_c", 1e-6, 1, 1), TermCheck("l_u", 0.5, 1, 1)]
    with pytest.raises(GradientCheckError) as info:
        assert_gradients(results)
    assert info.value.term == "l_u"
    assert [row["ok"] for row in report_rows(results)] == ["✓", "✗"]


def test_derangement_has_no_fixed_points():
    rng = np.random.default_rng(0)
    for n in range(2, 12):
        for _ in range(50):
            order = derangement(n, rng)
            assert sorted(order) == list(range(n))
            assert (order != np.arange(n)).all()


@pytest.mark.parametrize("seed", range(5))
def test_consistency_pairs_stay_clear_of_the_l1_kink(seed):
    bench = Probe(seed=seed)
    for pair, target in zip(bench.pairs.unlabeled, bench.targets):
        assert not np.any((pair.x_k.values == pair.x_s.values).all(axis=1))
        assert bench.kink_margin(pair, target) >= KINK_MARGIN


def _consistency_grads(bench, pair, detach):
    bench.model.zero_grad()
    with Graph() as graph:
        loss = unlabeled_consistency_loss(bench.model, pair.domain_k, pair, detach_target=detach)
    graph.backward(loss)
    return {name: p.grad.copy() for name, p in bench.model.parameters().items()}


def test_gradient_flows_through_an_attached_target():
    bench = Probe(seed=3)
    pair = bench.pairs.unlabeled[0]
    params = bench.model.parameters()
    for name in ("shared.0.weight", "domain.0.0.weight", "classifier.1.weight"):
        error = finite_diff_check(
            lambda _: unlabeled_consistency_loss(bench.model, pair.domain_k, pair, detach_target=False), params[name]
        )
        assert error < 1e-4, name

    attached = _consistency_grads(bench, pair, detach=False)
    detached = _consistency_grads(bench, pair, detach=True)
    assert any(not np.allclose(attached[name], detached[name]) for name in attached)
    assert not any(name.startswith("discriminator.") and attached[name].any() for name in attached)


def test_detached_target_is_a_constant():
    bench = Probe(seed=4)
    pair = bench.pairs.unlabeled[1]
    with Graph() as graph:
        target = consistency_target(bench.model, pair.domain_k, pair)
    assert not target.requires_grad
    assert len(graph) == 0
    attached = consistency_target(bench.model, pair.domain_k, pair, detach=False)
    npt.assert_array_equal(target.values, attached.values)
