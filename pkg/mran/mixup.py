"""
Mixup - Beta-distributed interpolation of instances and labels, and the three
mixup regularizers: labeled category mixup, unlabeled consistency and domain mixup.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from mran.autodiff import Tensor, interpolate, l1_distance, nll_soft, no_grad
from mran.errors import ConfigError, DimensionError, UsageError, ValidationError
from mran.losses import domain_nll
from mran.network import MranModel, class_log_probs

Lambda = Union[float, np.ndarray]


@dataclass
class MixPair:
    """
    A batch of instance pairs (x_k[j], x_s[j]) sharing one mixing coefficient.

    lam is a float, or one coefficient per row when per-pair mixing is enabled.
    """
    x_k: Tensor
    x_s: Tensor
    lam: Lambda
    y_k: Optional[np.ndarray] = None
    y_s: Optional[np.ndarray] = None
    domain_k: Optional[int] = None
    domain_s: Optional[int] = None

    def __post_init__(self):
        if self.x_k.shape != self.x_s.shape:
            raise DimensionError(f"mix pair shapes differ: {self.x_k.shape} vs {self.x_s.shape}")
        lam = np.asarray(self.lam)
        if lam.ndim > 0 and lam.shape != self.x_k.shape[:1]:
            raise DimensionError(f"per-pair lambda {lam.shape} vs batch of {self.x_k.shape[0]}")
        if ((lam < 0.0) | (lam > 1.0)).any():
            raise ValidationError(f"lambda must lie in [0, 1], got {self.lam}")
        if (self.y_k is None) != (self.y_s is None):
            raise ValidationError("either both or neither pair label sets must be given")
        for labels in (self.y_k, self.y_s):
            if labels is None:
                continue
            if (labels < 0.0).any() or not np.allclose(labels.sum(axis=-1), 1.0, rtol=0.0, atol=1e-9):
                raise ValidationError("pair labels must be probability distributions")

    @property
    def size(self) -> int:
        return self.x_k.shape[0]

    def swapped(self) -> "MixPair":
        """Same mixture with the roles of k and s exchanged (lam -> 1 - lam)"""
        lam = 1.0 - self.lam if np.ndim(self.lam) == 0 else 1.0 - np.asarray(self.lam)
        return MixPair(self.x_s, self.x_k, lam, self.y_s, self.y_k, self.domain_s, self.domain_k)


def sample_lambda(alpha: float, rng: np.random.Generator, size: Optional[int] = None) -> Lambda:
    """Draw from Beta(alpha, alpha) as g1 / (g1 + g2) with g1, g2 ~ Gamma(alpha, 1)"""
    if alpha <= 0.0:
        raise ConfigError(f"Beta(alpha, alpha) needs alpha > 0, got {alpha}")
    g1 = rng.gamma(alpha, 1.0, size=size)
    g2 = rng.gamma(alpha, 1.0, size=size)
    total = g1 + g2
    # both draws can underflow to 0 for tiny alpha
    if size is None:
        return float(g1 / total) if total > 0.0 else 0.5
    return np.where(total > 0.0, g1 / np.where(total > 0.0, total, 1.0), 0.5)


def make_pairs(
    x: np.ndarray,
    rng: np.random.Generator,
    lam: Lambda,
    labels: Optional[np.ndarray] = None,
    domain: Optional[int] = None,
    order: Optional[np.ndarray] = None,
) -> MixPair:
    """
    Pair every row with a row of a random permutation of the same batch (fixed points allowed).

    order, when given, replaces the random permutation.
    """
    if len(x) == 0:
        raise UsageError("cannot build mix pairs from an empty batch")
    if order is None:
        order = rng.permutation(len(x))
    elif sorted(np.asarray(order).tolist()) != list(range(len(x))):
        raise UsageError(f"pair order must be a permutation of 0..{len(x) - 1}")
    y_k = y_s = None
    if labels is not None:
        y_k = labels
        y_s = labels[order]
    return MixPair(Tensor(x), Tensor(x[order]), lam, y_k, y_s, domain, domain)


def _mix_labels(y_k: np.ndarray, y_s: np.ndarray, lam: Lambda) -> np.ndarray:
    lam = lam if np.ndim(lam) == 0 else np.asarray(lam)[:, None]
    return lam * y_k + (1.0 - lam) * y_s


def mix(pair: MixPair) -> Tuple[Tensor, Optional[np.ndarray]]:
    """x~ = lam x_k + (1 - lam) x_s and, when labels are present, y~ = lam y_k + (1 - lam) y_s"""
    x_mix = interpolate(pair.x_k, pair.x_s, pair.lam)
    if pair.y_k is None:
        return x_mix, None
    return x_mix, _mix_labels(pair.y_k, pair.y_s, pair.lam)


def labeled_category_mixup_loss(
    model: MranModel,
    domain: int,
    pair: MixPair,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Soft-label NLL of C on the mixed labeled instances of one domain"""
    if pair.size == 0:
        raise UsageError("labeled category mixup needs a non-empty batch")
    if pair.y_k is None:
        raise UsageError("labeled category mixup needs labels on both sides of the pair")
    x_mix, y_mix = mix(pair)
    return nll_soft(class_log_probs(model, domain, x_mix, training, rng), y_mix)


def consistency_target(
    model: MranModel,
    domain: int,
    pair: MixPair,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    detach: bool = True,
) -> Tensor:
    """lam p(x_k) + (1 - lam) p(x_s) with p(x) = log C(F^i(x)); a constant when detached"""
    if detach:
        with no_grad():
            return _interpolated_predictions(model, domain, pair, training, rng)
    return _interpolated_predictions(model, domain, pair, training, rng)


def _interpolated_predictions(model, domain, pair, training, rng) -> Tensor:
    p_k = class_log_probs(model, domain, pair.x_k, training, rng)
    p_s = class_log_probs(model, domain, pair.x_s, training, rng)
    return interpolate(p_k, p_s, pair.lam)


def unlabeled_consistency_loss(
    model: MranModel,
    domain: int,
    pair: MixPair,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    detach_target: bool = True,
    target: Optional[Tensor] = None,
) -> Tensor:
    """
    l1 discrepancy (in log space) between p(x~) and the interpolated predictions.

    A precomputed target may be passed in; otherwise it is built from the pair.
    """
    if pair.size == 0:
        raise UsageError("unlabeled consistency needs a non-empty batch")
    if target is None:
        target = consistency_target(model, domain, pair, training, rng, detach_target)
    x_mix, _ = mix(pair)
    return l1_distance(class_log_probs(model, domain, x_mix, training, rng), target)


def domain_mixup_adv_loss(
    model: MranModel,
    pairs: Sequence[MixPair],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    detach_features: bool = False,
) -> Tensor:
    """Sum over domains of the mean NLL of D assigning F_s(x~_i) to domain i"""
    if not pairs:
        raise UsageError("domain mixup needs at least one domain batch")
    total = None
    for pair in pairs:
        if pair.domain_k is None or pair.domain_k != pair.domain_s:
            raise UsageError(f"domain mixup pairs must come from a single domain, got {pair.domain_k} and {pair.domain_s}")
        if pair.size == 0:
            raise UsageError("domain mixup needs non-empty batches")
        x_mix, _ = mix(pair)
        loss, _ = domain_nll(model, pair.domain_k, x_mix, training, rng, detach_features)
        total = loss if total is None else total + loss
    return total
