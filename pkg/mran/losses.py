"""
Unmixed objectives: the classification NLL on labeled instances and the
multinomial adversarial NLL of the discriminator on shared features.
"""
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from mran.autodiff import Tensor, detach, nll_soft, no_grad
from mran.errors import UsageError
from mran.network import NUM_CLASSES, MranModel, class_log_probs, forward_discriminator, forward_shared


def one_hot(indices: Union[Sequence[int], np.ndarray], width: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.shape[0], width))
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out


def classification_loss(
    model: MranModel,
    domain: int,
    x: Union[Tensor, np.ndarray],
    labels: np.ndarray,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Mean NLL of C on F^i(x) for the labeled instances of one domain"""
    if len(labels) == 0:
        raise UsageError("classification loss needs a non-empty batch")
    return nll_soft(class_log_probs(model, domain, x, training, rng), one_hot(labels, NUM_CLASSES))


def domain_nll(
    model: MranModel,
    domain: int,
    x: Union[Tensor, np.ndarray],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    detach_features: bool = False,
) -> Tuple[Tensor, np.ndarray]:
    """
    Mean NLL of D assigning F_s(x) to `domain`.

    Returns the loss and D's log-probs. With detach_features the shared
    features enter as constants, so no gradient reaches F_s.
    """
    model.check_domain(domain)
    if detach_features:
        with no_grad():
            features = detach(forward_shared(model, x, training, rng))
    else:
        features = forward_shared(model, x, training, rng)
    log_probs = forward_discriminator(model, features, training, rng)
    target = one_hot(np.full(log_probs.shape[0], domain), model.num_domains)
    return nll_soft(log_probs, target), log_probs.values


def adversarial_loss(
    model: MranModel,
    batches: Sequence[Tuple[int, Union[Tensor, np.ndarray]]],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    detach_features: bool = False,
) -> Tensor:
    """Sum over domains of the mean discriminator NLL; batches are (domain, x) pairs"""
    if not batches:
        raise UsageError("adversarial loss needs at least one domain batch")
    total = None
    for domain, x in batches:
        loss, _ = domain_nll(model, domain, x, training, rng, detach_features)
        total = loss if total is None else total + loss
    return total
