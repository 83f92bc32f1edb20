"""
Training - alternating min-max optimization of the full objective.

Each iteration draws one mixup coefficient, runs k_d discriminator steps (D descends the
domain NLL on constant shared features), then one main step that updates F_s, every
F_d^i and C on

    L_c + lambda_a L_a + lambda_u L_u - lambda_d (L_adv + lambda_m L_adv_mix)

with D frozen. A term whose weight is 0 is never built into the graph.
"""
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from tqdm import tqdm

from mran.autodiff import Graph, Tensor
from mran.data import Features, take_rows
from mran.errors import TermIsolationError, UsageError
from mran.losses import adversarial_loss, classification_loss, domain_nll, one_hot
from mran.metrics_stream import MetricsStream
from mran.mixup import (
    MixPair,
    Lambda,
    domain_mixup_adv_loss,
    labeled_category_mixup_loss,
    make_pairs,
    sample_lambda,
    unlabeled_consistency_loss,
)
from mran.models.config_model import ExperimentConfig, LossWeights
from mran.models.records import LOSS_TERMS, EpochMetrics, EpochRecord, EvaluationResult, LossBreakdown
from mran.network import NUM_CLASSES, MranModel, ModelSpec, init_model, predict
from mran.optim import AdamState

logger = logging.getLogger(__name__)

EVAL_CHUNK = 256

# weight gating each term; l_adv_mix needs both lambda_d and lambda_m
TERM_WEIGHTS = {"l_a": ("lambda_a",), "l_u": ("lambda_u",), "l_adv": ("lambda_d",), "l_adv_mix": ("lambda_d", "lambda_m")}


@dataclass
class Batch:
    """One domain's share of a training step"""
    domain: int
    labeled_x: np.ndarray
    labels: np.ndarray
    adversarial_x: np.ndarray  # from L_i and U_i
    unlabeled_x: np.ndarray    # from U_i


class PoolSampler:
    """Walks a pool in shuffled order, reshuffling whenever it wraps around"""

    def __init__(self, size: int, rng: np.random.Generator):
        if size < 1:
            raise UsageError("cannot sample from an empty pool")
        self.size = size
        self.rng = rng
        self._order = rng.permutation(size)
        self._cursor = 0

    def draw(self, n: int) -> np.ndarray:
        n = min(n, self.size)
        if self._cursor + n > self.size:
            self._order = self.rng.permutation(self.size)
            self._cursor = 0
        picked = self._order[self._cursor:self._cursor + n]
        self._cursor += n
        return picked


class DomainPool:
    """Training rows of one domain: labeled set L_i and unlabeled set U_i"""

    def __init__(self, domain: int, labeled: Features, labels: np.ndarray, unlabeled: Features, rng: np.random.Generator):
        if labeled.shape[0] == 0 or unlabeled.shape[0] == 0:
            raise UsageError(f"domain {domain} needs non-empty labeled and unlabeled pools")
        self.domain = domain
        self.labeled = labeled
        self.labels = np.asarray(labels, dtype=np.int64)
        self.unlabeled = unlabeled
        self._labeled = PoolSampler(labeled.shape[0], rng)
        self._unlabeled = PoolSampler(unlabeled.shape[0], rng)
        self._adversarial = PoolSampler(labeled.shape[0] + unlabeled.shape[0], rng)

    @property
    def num_labeled(self) -> int:
        return self.labeled.shape[0]

    def draw(self, batch_size: int) -> Batch:
        labeled_idx = self._labeled.draw(batch_size)
        union_idx = self._adversarial.draw(batch_size)
        n = self.num_labeled
        from_labeled = union_idx[union_idx < n]
        from_unlabeled = union_idx[union_idx >= n] - n
        adversarial = np.concatenate(
            [take_rows(self.labeled, from_labeled), take_rows(self.unlabeled, from_unlabeled)], axis=0
        )
        return Batch(
            domain=self.domain,
            labeled_x=take_rows(self.labeled, labeled_idx),
            labels=self.labels[labeled_idx],
            adversarial_x=adversarial,
            unlabeled_x=take_rows(self.unlabeled, self._unlabeled.draw(batch_size)),
        )


@dataclass
class TrainState:
    model: MranModel
    optimizers: Dict[str, AdamState]
    config: ExperimentConfig
    data_rng: np.random.Generator
    dropout_rng: np.random.Generator
    mixup_rng: np.random.Generator
    step: int = 0
    epoch: int = 0
    best_snapshot: Optional[Dict[str, np.ndarray]] = None
    best_validation: float = -math.inf
    best_epoch: int = 0


def create_train_state(config: ExperimentConfig, num_domains: int, input_dim: int, seed_key: Sequence[int] = ()) -> TrainState:
    """Independent init / data / dropout / mixup streams spawned from the experiment seed"""
    init_seq, data_seq, dropout_seq, mixup_seq = np.random.SeedSequence([config.seed, *seed_key]).spawn(4)
    model = init_model(num_domains, ModelSpec.from_config(config, input_dim), np.random.default_rng(init_seq))
    optimizers = {
        name: AdamState(
            learning_rate=config.learning_rate,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            epsilon=config.adam_epsilon,
            weight_decay=config.weight_decay,
            grad_clip=config.grad_clip,
        )
        for name in model.components()
    }
    return TrainState(
        model=model,
        optimizers=optimizers,
        config=config,
        data_rng=np.random.default_rng(data_seq),
        dropout_rng=np.random.default_rng(dropout_seq),
        mixup_rng=np.random.default_rng(mixup_seq),
    )


def draw_batches(pools: Sequence[DomainPool], batch_size: int) -> List[Batch]:
    return [pool.draw(batch_size) for pool in pools]


def _check_batches(model: MranModel, batches: Sequence[Batch]):
    domains = sorted(b.domain for b in batches)
    if domains != list(range(model.num_domains)):
        raise UsageError(f"a step needs exactly one batch per domain 0..{model.num_domains - 1}, got {domains}")


def _pair_lambda(state: TrainState, lam: Lambda, size: int) -> Lambda:
    if state.config.per_pair_lambda:
        return sample_lambda(state.config.alpha, state.mixup_rng, size=size)
    return lam


@dataclass
class StepPairs:
    """Mix pairs of one step, one per domain and per pool"""
    labeled: List[MixPair] = field(default_factory=list)
    unlabeled: List[MixPair] = field(default_factory=list)
    adversarial: List[MixPair] = field(default_factory=list)


def build_pairs(state: TrainState, batches: Sequence[Batch], lam: Lambda, weights: LossWeights) -> StepPairs:
    """Pairs only for the terms that are switched on"""
    rng = state.mixup_rng
    pairs = StepPairs()
    for b in batches:
        if weights.lambda_a > 0.0:
            lam_b = _pair_lambda(state, lam, len(b.labeled_x))
            pairs.labeled.append(make_pairs(b.labeled_x, rng, lam_b, one_hot(b.labels, NUM_CLASSES), b.domain))
        if weights.lambda_u > 0.0:
            pairs.unlabeled.append(make_pairs(b.unlabeled_x, rng, _pair_lambda(state, lam, len(b.unlabeled_x)), domain=b.domain))
        if weights.lambda_d > 0.0 and weights.lambda_m > 0.0:
            pairs.adversarial.append(make_pairs(b.adversarial_x, rng, _pair_lambda(state, lam, len(b.adversarial_x)), domain=b.domain))
    return pairs


def _accumulate(total: Optional[Tensor], term: Tensor) -> Tensor:
    return term if total is None else total + term


def main_objective(
    model: MranModel,
    batches: Sequence[Batch],
    pairs: StepPairs,
    weights: LossWeights,
    training: bool = True,
    rng: Optional[np.random.Generator] = None,
    detach_target: bool = True,
    targets: Optional[Sequence[Tensor]] = None,
) -> Tuple[Tensor, LossBreakdown]:
    """
    The feature-side objective of one step and the value of each term.

    targets, when given, are precomputed consistency targets (one per unlabeled pair).
    """
    values: Dict[str, float] = {}
    active = ["l_c"]

    l_c = None
    for b in batches:
        l_c = _accumulate(l_c, classification_loss(model, b.domain, b.labeled_x, b.labels, training, rng))
    values["l_c"] = l_c.item()
    total = l_c

    if weights.lambda_a > 0.0:
        l_a = None
        for pair in pairs.labeled:
            l_a = _accumulate(l_a, labeled_category_mixup_loss(model, pair.domain_k, pair, training, rng))
        values["l_a"] = l_a.item()
        total = total + weights.lambda_a * l_a
        active.append("l_a")

    if weights.lambda_u > 0.0:
        l_u = None
        for j, pair in enumerate(pairs.unlabeled):
            target = targets[j] if targets is not None else None
            l_u = _accumulate(l_u, unlabeled_consistency_loss(model, pair.domain_k, pair, training, rng, detach_target, target))
        values["l_u"] = l_u.item()
        total = total + weights.lambda_u * l_u
        active.append("l_u")

    if weights.lambda_d > 0.0:
        l_adv = adversarial_loss(model, [(b.domain, b.adversarial_x) for b in batches], training, rng)
        values["l_adv"] = l_adv.item()
        adversary = l_adv
        active.append("l_adv")
        if weights.lambda_m > 0.0:
            l_adv_mix = domain_mixup_adv_loss(model, pairs.adversarial, training, rng)
            values["l_adv_mix"] = l_adv_mix.item()
            adversary = adversary + weights.lambda_m * l_adv_mix
            active.append("l_adv_mix")
        total = total - weights.lambda_d * adversary

    return total, LossBreakdown(**values, total=total.item(), active_terms=active)


class DiscriminatorStep(NamedTuple):
    loss: float
    accuracy: float


def discriminator_step(state: TrainState, batches: Sequence[Batch], lam: Lambda, weights: LossWeights) -> DiscriminatorStep:
    """
    One descent step of D on L_adv + lambda_m L_adv_mix over constant shared features.

    Only D's parameters change. Returns the loss and D's domain accuracy on the unmixed rows.
    """
    model = state.model
    _check_batches(model, batches)
    model.zero_grad()
    rng = state.dropout_rng
    correct = seen = 0

    with Graph() as graph:
        loss = None
        for b in batches:
            term, log_probs = domain_nll(model, b.domain, b.adversarial_x, True, rng, detach_features=True)
            correct += int((np.argmax(log_probs, axis=1) == b.domain).sum())
            seen += log_probs.shape[0]
            loss = _accumulate(loss, term)
        if weights.lambda_m > 0.0:
            pairs = [
                make_pairs(b.adversarial_x, state.mixup_rng, _pair_lambda(state, lam, len(b.adversarial_x)), domain=b.domain)
                for b in batches
            ]
            loss = loss + weights.lambda_m * domain_mixup_adv_loss(model, pairs, True, rng, detach_features=True)
    graph.backward(loss)
    state.optimizers["discriminator"].step(model.parameters("discriminator"))
    return DiscriminatorStep(loss.item(), correct / seen)


def main_step(state: TrainState, batches: Sequence[Batch], weights: LossWeights, lam: Lambda) -> LossBreakdown:
    """One descent step of F_s, every F_d^i and C with D frozen"""
    model = state.model
    _check_batches(model, batches)
    model.zero_grad()
    pairs = build_pairs(state, batches, lam, weights)
    with Graph() as graph:
        total, breakdown = main_objective(
            model, batches, pairs, weights, True, state.dropout_rng, state.config.detach_consistency_target
        )
    graph.backward(total)
    for name, component in model.components().items():
        if name != "discriminator":
            state.optimizers[name].step(component.parameters())
    return breakdown


def check_term_isolation(breakdown: LossBreakdown, weights: LossWeights):
    for term, gates in TERM_WEIGHTS.items():
        if term in breakdown.active_terms and any(getattr(weights, g) == 0.0 for g in gates):
            raise TermIsolationError(f"term '{term}' contributed to a step although its weight is 0")


def train_epoch(state: TrainState, pools: Sequence[DomainPool], weights: LossWeights, k_d: int) -> EpochMetrics:
    """
    One pass over the largest labeled pool; smaller pools reshuffle and repeat.

    Every iteration: draw lambda, k_d discriminator steps on fresh batches, one main step.
    """
    if k_d < 1:
        raise UsageError(f"k_d must be at least 1, got {k_d}")
    config = state.config
    steps = max(1, math.ceil(max(p.num_labeled for p in pools) / config.batch_size))
    d_losses: List[float] = []
    d_accuracy: List[float] = []
    sums = {term: 0.0 for term in (*LOSS_TERMS, "total")}

    for _ in tqdm(range(steps), desc=f"epoch {state.epoch + 1}", leave=False, disable=config.quiet or None):
        lam = sample_lambda(config.alpha, state.mixup_rng)
        for _ in range(k_d):
            outcome = discriminator_step(state, draw_batches(pools, config.batch_size), lam, weights)
            d_losses.append(outcome.loss)
            d_accuracy.append(outcome.accuracy)
        breakdown = main_step(state, draw_batches(pools, config.batch_size), weights, lam)
        check_term_isolation(breakdown, weights)
        for term in sums:
            sums[term] += getattr(breakdown, term)
        state.step += 1

    state.epoch += 1
    return EpochMetrics(
        epoch=state.epoch,
        steps=steps,
        d_loss=float(np.mean(d_losses)),
        d_accuracy=float(np.mean(d_accuracy)),
        **{term: value / steps for term, value in sums.items()},
    )


def average_accuracy(per_domain: Sequence[float]) -> float:
    """Unweighted mean over domains"""
    if not per_domain:
        raise UsageError("no domain accuracies to average")
    return float(np.mean(per_domain))


def evaluate(model: MranModel, split: Sequence[Tuple[Features, np.ndarray]], domain_names: Optional[Sequence[str]] = None) -> EvaluationResult:
    """Eval-mode accuracy per domain; split[i] holds domain i's (rows, labels)"""
    if not split:
        raise UsageError("evaluation split is empty")
    names = list(domain_names) if domain_names else [f"domain{i}" for i in range(len(split))]
    accuracies = []
    for domain, (features, labels) in enumerate(split):
        if len(labels) == 0:
            raise UsageError(f"evaluation split for domain '{names[domain]}' is empty")
        correct = 0
        for start in range(0, len(labels), EVAL_CHUNK):
            chunk = slice(start, start + EVAL_CHUNK)
            correct += int((predict(model, domain, take_rows(features, chunk)) == labels[chunk]).sum())
        accuracies.append(correct / len(labels))
    return EvaluationResult(domain_names=names, per_domain=accuracies, average=average_accuracy(accuracies))


@dataclass
class FoldData:
    """Everything one train/validate/test cycle consumes"""
    domain_names: List[str]
    input_dim: int
    train_labeled: List[Features]
    train_labels: List[np.ndarray]
    unlabeled: List[Features]
    validation: List[Tuple[Features, np.ndarray]]
    test: List[Tuple[Features, np.ndarray]]
    unlabeled_substituted: bool = False


@dataclass
class FitResult:
    model: MranModel
    history: List[EpochRecord]
    best_epoch: int
    best_validation: float
    test: EvaluationResult


def fit(
    config: ExperimentConfig,
    data: FoldData,
    seed_key: Sequence[int] = (),
    metrics: Optional[MetricsStream] = None,
) -> FitResult:
    """
    Train up to max_epochs, keeping the parameters with the best validation average.

    Epoch 0 is the initialized model, so max_epochs=0 reports its test accuracy.
    """
    num_domains = len(data.domain_names)
    state = create_train_state(config, num_domains, data.input_dim, seed_key)
    weights = LossWeights.from_config(config)
    pools = [
        DomainPool(i, data.train_labeled[i], data.train_labels[i], data.unlabeled[i], state.data_rng)
        for i in range(num_domains)
    ]

    history: List[EpochRecord] = []

    def record(train_metrics: Optional[EpochMetrics]) -> float:
        validation = evaluate(state.model, data.validation, data.domain_names)
        entry = EpochRecord(train=train_metrics, validation=validation)
        history.append(entry)
        if metrics is not None:
            metrics.log_epoch(state.epoch, entry)
        if validation.average > state.best_validation:
            state.best_validation = validation.average
            state.best_epoch = state.epoch
            state.best_snapshot = state.model.snapshot()
        return validation.average

    record(None)
    for _ in range(config.max_epochs):
        epoch_metrics = train_epoch(state, pools, weights, config.k_d)
        average = record(epoch_metrics)
        logger.debug(
            f"epoch {state.epoch}: L_c={epoch_metrics.l_c:.4f} D acc={epoch_metrics.d_accuracy:.3f} val={average:.4f}"
        )
        if config.patience is not None and state.epoch - state.best_epoch >= config.patience:
            logger.info(f"Stopping after epoch {state.epoch}: no validation gain for {config.patience} epochs")
            break

    state.model.restore(state.best_snapshot)
    test = evaluate(state.model, data.test, data.domain_names)
    if metrics is not None:
        metrics.log_evaluation(state.best_epoch, "test", test)
    return FitResult(state.model, history, state.best_epoch, state.best_validation, test)
