"""
Records produced by training and evaluation, serialized into metrics files and summaries.
"""
from pydantic import BaseModel, Field
from typing import List, Optional

LOSS_TERMS = ("l_c", "l_adv", "l_a", "l_u", "l_adv_mix")


class LossBreakdown(BaseModel):
    """Value of every term of one main step"""
    l_c: float = 0.0
    l_adv: float = 0.0
    l_a: float = 0.0
    l_u: float = 0.0
    l_adv_mix: float = 0.0
    total: float = 0.0
    active_terms: List[str] = Field(default_factory=list, description="Terms that were built into the gradient graph")


class EpochMetrics(BaseModel):
    """Means over one training epoch"""
    epoch: int
    steps: int
    d_loss: float
    d_accuracy: float = Field(..., description="Domain accuracy of D on its own training batches")
    l_c: float
    l_adv: float
    l_a: float
    l_u: float
    l_adv_mix: float
    total: float


class EvaluationResult(BaseModel):
    """Per-domain classification accuracy (fractions in [0, 1])"""
    domain_names: List[str]
    per_domain: List[float]
    average: float


class EpochRecord(BaseModel):
    train: Optional[EpochMetrics] = None
    validation: EvaluationResult


class FoldResult(BaseModel):
    """Outcome of one train/validate/test cycle"""
    repeat: int
    fold: int
    seed: int
    best_epoch: int
    best_validation: float
    test: EvaluationResult
    unlabeled_substituted: bool = False
