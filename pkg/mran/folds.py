"""
Stratified k-fold plan per domain: each rotation uses three folds for training,
one for validation and one for testing.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from mran.errors import ConfigError, UsageError


@dataclass
class FoldSplit:
    """Row indices of one rotation for one domain"""
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


@dataclass
class FoldPlan:
    """assignments[d][j] is the fold of labeled example j of domain d"""
    assignments: List[np.ndarray]
    num_folds: int

    def fold_indices(self, domain: int, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments[domain] == fold)

    def rotation(self, domain: int, test_fold: int) -> FoldSplit:
        """Test fold r, validation fold r+1 (mod k), the rest for training"""
        if not 0 <= test_fold < self.num_folds:
            raise UsageError(f"fold {test_fold} out of range for {self.num_folds} folds")
        validation_fold = (test_fold + 1) % self.num_folds
        folds = self.assignments[domain]
        train_mask = (folds != test_fold) & (folds != validation_fold)
        return FoldSplit(
            train=np.flatnonzero(train_mask),
            validation=self.fold_indices(domain, validation_fold),
            test=self.fold_indices(domain, test_fold),
        )


def make_folds(labels_per_domain: Sequence[np.ndarray], seed: int, num_folds: int = 5) -> FoldPlan:
    """
    Deal each domain's examples into folds, label by label, after a seeded shuffle.

    Dealing positives then negatives round-robin keeps every fold's label counts
    within 1 of each other and fold sizes within 1 overall.
    """
    assignments = []
    for domain, labels in enumerate(labels_per_domain):
        labels = np.asarray(labels)
        if len(labels) < num_folds:
            raise ConfigError(f"domain {domain} has {len(labels)} labeled examples, need at least {num_folds}")
        rng = np.random.default_rng([seed, domain])
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == value)) for value in np.unique(labels)])
        folds = np.empty(len(labels), dtype=np.int64)
        folds[order] = np.arange(len(labels)) % num_folds
        assignments.append(folds)
    return FoldPlan(assignments, num_folds)
