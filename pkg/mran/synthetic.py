"""
Synthetic multi-domain corpus for verification runs.

Per domain i: x = class_mean * y' + domain_offset_i + noise * N(0, I), with y' in {-1, +1}.
The class direction is shared by all domains; domain offsets carry the domain shift.
"""
from typing import Optional, Sequence

import numpy as np

from mran.data import DomainData, MultiDomainDataset
from mran.errors import ConfigError
from mran.models.config_model import ExperimentConfig


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def synth_generate(
    num_domains: int = 4,
    n_labeled: int = 200,
    n_unlabeled: int = 400,
    dim: int = 64,
    shared_signal: float = 1.0,
    domain_shift: float = 1.0,
    noise: float = 1.0,
    seed: int = 0,
    domain_names: Optional[Sequence[str]] = None,
) -> MultiDomainDataset:
    """Deterministic given the seed; labeled sets are balanced between the two classes"""
    if num_domains < 2:
        raise ConfigError(f"synthetic corpus needs at least 2 domains, got {num_domains}")
    if dim < 4:
        raise ConfigError(f"synthetic dimension must be at least 4, got {dim}")
    if n_labeled < 1 or n_unlabeled < 0:
        raise ConfigError(f"invalid synthetic sizes: {n_labeled} labeled, {n_unlabeled} unlabeled")
    if min(shared_signal, domain_shift, noise) < 0.0:
        raise ConfigError("shared_signal, domain_shift and noise must be nonnegative")
    names = list(domain_names) if domain_names else [f"domain{i}" for i in range(num_domains)]
    if len(names) != num_domains:
        raise ConfigError(f"got {len(names)} domain names for {num_domains} domains")

    rng = np.random.default_rng(seed)
    class_mean = shared_signal * _unit(rng, dim)
    offsets = [domain_shift * _unit(rng, dim) for _ in range(num_domains)]

    def draw(offset: np.ndarray, labels: np.ndarray) -> np.ndarray:
        signs = 2.0 * labels - 1.0
        return signs[:, None] * class_mean + offset + noise * rng.standard_normal((len(labels), dim))

    domains = []
    for name, offset in zip(names, offsets):
        labels = rng.permutation(np.arange(n_labeled) % 2)
        labeled = draw(offset, labels)
        unlabeled = draw(offset, rng.permutation(np.arange(n_unlabeled) % 2))
        domains.append(DomainData(name, labeled, labels.astype(np.int64), unlabeled))
    return MultiDomainDataset(domains, dim)


def synth_from_config(config: ExperimentConfig) -> MultiDomainDataset:
    return synth_generate(
        num_domains=config.synth_domains,
        n_labeled=config.synth_labeled,
        n_unlabeled=config.synth_unlabeled,
        dim=config.synth_dim,
        shared_signal=config.synth_shared_signal,
        domain_shift=config.synth_domain_shift,
        noise=config.synth_noise,
        seed=config.seed,
        domain_names=config.domain_names,
    )
