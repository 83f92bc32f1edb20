"""
Gradient oracle - central-difference checks of every loss term on a tiny model.
"""
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence
import logging

import numpy as np

from mran.autodiff import Tensor, finite_diff_check, log_softmax, nll_soft, no_grad
from mran.errors import GradientCheckError, UsageError
from mran.losses import adversarial_loss, classification_loss, one_hot
from mran.mixup import (
    MixPair,
    consistency_target,
    domain_mixup_adv_loss,
    labeled_category_mixup_loss,
    make_pairs,
    mix,
    unlabeled_consistency_loss,
)
from mran.models.config_model import LossWeights
from mran.network import NUM_CLASSES, ModelSpec, MranModel, class_log_probs, init_model
from mran.training import Batch, StepPairs, main_objective

logger = logging.getLogger(__name__)

TERMS = ("l_adv", "l_c", "mix_x", "mix_y", "l_a", "l_u", "l_adv_mix", "l_total")
DEFAULT_TOLERANCE = 1e-4
DEFAULT_STEP = 1e-5
PROBE_LAMBDA = 0.37
# smallest |p(x~) - target| entry allowed in the probed consistency terms
KINK_MARGIN = 1e-3
MAX_PAIR_DRAWS = 100
# unit-order weights so every term is visible in the composite
COMPOSITE_WEIGHTS = LossWeights(lambda_d=1.0, lambda_a=0.5, lambda_u=0.5, lambda_m=0.5)


class TermCheck(NamedTuple):
    term: str
    error: float
    tensors: int
    coordinates: int

    def passed(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return self.error < tolerance


class Probe:
    """A tiny model with fixed batches, pairs and consistency targets"""

    def __init__(self, seed: int = 0, num_domains: int = 3, rows: int = 4, dropout: float = 0.0):
        if dropout > 0.0:
            raise UsageError("gradient checks need a deterministic graph: dropout must be 0")
        if rows < 2:
            raise UsageError("gradient checks need at least 2 rows per batch")
        rng = np.random.default_rng(seed)
        spec = ModelSpec(input_dim=8, extractor_hidden=(8, 6), shared_dim=4, domain_dim=3, dropout=0.0)
        self.model: MranModel = init_model(num_domains, spec, rng)
        for name, param in self.model.parameters().items():
            if name.endswith(".bias"):
                param.values[...] = 0.1 * rng.standard_normal(param.shape)

        self.batches = [
            Batch(
                domain=i,
                labeled_x=rng.standard_normal((rows, spec.input_dim)),
                labels=rng.integers(0, NUM_CLASSES, size=rows),
                adversarial_x=rng.standard_normal((rows, spec.input_dim)),
                unlabeled_x=rng.standard_normal((rows, spec.input_dim)),
            )
            for i in range(num_domains)
        ]
        self.pairs = StepPairs(
            labeled=[make_pairs(b.labeled_x, rng, PROBE_LAMBDA, one_hot(b.labels, NUM_CLASSES), b.domain) for b in self.batches],
            unlabeled=[self._unlabeled_pair(b, rng) for b in self.batches],
            adversarial=[make_pairs(b.adversarial_x, rng, PROBE_LAMBDA, domain=b.domain) for b in self.batches],
        )
        self.targets = [consistency_target(self.model, p.domain_k, p) for p in self.pairs.unlabeled]

    def kink_margin(self, pair: MixPair, target: Tensor) -> float:
        """Smallest entry of |p(x~) - target|; the l1 term is smooth only away from 0"""
        with no_grad():
            x_mix, _ = mix(pair)
            residual = class_log_probs(self.model, pair.domain_k, x_mix, training=False).values - target.values
        return float(np.abs(residual).min())

    def _unlabeled_pair(self, batch: Batch, rng: np.random.Generator) -> MixPair:
        """Fixed-point-free pairs whose consistency residual stays clear of the l1 kink"""
        for _ in range(MAX_PAIR_DRAWS):
            order = derangement(len(batch.unlabeled_x), rng)
            pair = make_pairs(batch.unlabeled_x, rng, PROBE_LAMBDA, domain=batch.domain, order=order)
            if self.kink_margin(pair, consistency_target(self.model, batch.domain, pair)) >= KINK_MARGIN:
                return pair
        raise UsageError(f"no unlabeled pairing of domain {batch.domain} keeps the l1 residual above {KINK_MARGIN:.0e}")

    def loss_fn(self, term: str) -> Callable[[], Tensor]:
        """Deterministic eval-mode loss of one term as a function of the model parameters"""
        model, batches, pairs = self.model, self.batches, self.pairs
        if term == "l_adv":
            return lambda: adversarial_loss(model, [(b.domain, b.adversarial_x) for b in batches])
        if term == "l_c":
            return lambda: _sum(classification_loss(model, b.domain, b.labeled_x, b.labels) for b in batches)
        if term == "l_a":
            return lambda: _sum(labeled_category_mixup_loss(model, p.domain_k, p) for p in pairs.labeled)
        if term == "l_u":
            return lambda: _sum(
                unlabeled_consistency_loss(model, p.domain_k, p, target=t) for p, t in zip(pairs.unlabeled, self.targets)
            )
        if term == "l_adv_mix":
            return lambda: domain_mixup_adv_loss(model, pairs.adversarial)
        if term == "l_total":
            return lambda: main_objective(model, batches, pairs, COMPOSITE_WEIGHTS, training=False, targets=self.targets)[0]
        raise UsageError(f"'{term}' is not a parameter-level term")


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """A random permutation of 0..n-1 without fixed points (one n-cycle)"""
    cycle = rng.permutation(n)
    order = np.empty(n, dtype=np.int64)
    order[cycle] = np.roll(cycle, -1)
    return order


def _sum(terms) -> Tensor:
    total = None
    for term in terms:
        total = term if total is None else total + term
    return total


def _check_tensor(f: Callable[[], Tensor], x: Tensor, others: Sequence[Tensor], step: float) -> float:
    """finite_diff_check for a tensor that f reads through closure rather than its argument"""
    for other in others:
        other.zero_grad()
    return finite_diff_check(lambda _: f(), x, step)


def check_parameters(probe: Probe, term: str, step: float = DEFAULT_STEP) -> TermCheck:
    f = probe.loss_fn(term)
    params = list(probe.model.parameters().values())
    error = max(_check_tensor(f, p, params, step) for p in params)
    return TermCheck(term, error, len(params), sum(p.size for p in params))


def check_mixing(probe: Probe, term: str, step: float = DEFAULT_STEP) -> TermCheck:
    """
    mix_x: the classification NLL at a mixed instance, as a function of x_k.
    mix_y: the soft-label NLL with mixed labels, as a function of the logits.
    """
    model = probe.model
    pair = probe.pairs.labeled[0]
    _, y_mix = mix(pair)
    if term == "mix_x":
        x_k = Tensor(pair.x_k.values.copy(), requires_grad=True)

        def f(x: Tensor) -> Tensor:
            mixed, _ = mix(MixPair(x, pair.x_s, pair.lam, pair.y_k, pair.y_s, pair.domain_k, pair.domain_s))
            return nll_soft(class_log_probs(model, pair.domain_k, mixed, training=False), y_mix)

        target = x_k
    elif term == "mix_y":
        rng = np.random.default_rng(len(term))
        target = Tensor(rng.standard_normal((pair.size, NUM_CLASSES)), requires_grad=True)

        def f(z: Tensor) -> Tensor:
            return nll_soft(log_softmax(z), y_mix)
    else:
        raise UsageError(f"'{term}' is not a mixing term")

    model.zero_grad()
    return TermCheck(term, finite_diff_check(f, target, step), 1, target.size)


def run_gradcheck(
    terms: Optional[Sequence[str]] = None,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    dropout: float = 0.0,
) -> List[TermCheck]:
    """
    Max relative error per term, analytic vs central differences.

    Raises:
        UsageError: unknown term, or dropout > 0
    """
    selected = list(terms) if terms else list(TERMS)
    unknown = [t for t in selected if t not in TERMS]
    if unknown:
        raise UsageError(f"unknown gradcheck term(s) {unknown}; choose from {', '.join(TERMS)}")
    probe = Probe(seed=seed, dropout=dropout)

    results = []
    for term in selected:
        check = check_mixing(probe, term, step) if term in ("mix_x", "mix_y") else check_parameters(probe, term, step)
        logger.debug(f"{term}: max relative error {check.error:.3e} over {check.coordinates} coordinates")
        results.append(check)
    return results


def assert_gradients(results: Sequence[TermCheck], tolerance: float = DEFAULT_TOLERANCE):
    """Raises GradientCheckError naming the first term over the tolerance"""
    for check in results:
        if not check.passed(tolerance):
            raise GradientCheckError(check.term, check.error, tolerance)


def report_rows(results: Sequence[TermCheck], tolerance: float = DEFAULT_TOLERANCE) -> List[Dict[str, object]]:
    return [
        {"term": c.term, "max rel error": f"{c.error:.3e}", "coordinates": c.coordinates, "ok": "✓" if c.passed(tolerance) else "✗"}
        for c in results
    ]
