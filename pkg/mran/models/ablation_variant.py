from enum import Enum


class AblationVariant(str, Enum):
    """Regularization terms that can be switched off for an ablation run"""
    DM = "dm"    # domain mixup on the discriminator
    CM = "cm"    # category mixup, labeled and unlabeled
    LCM = "lcm"  # labeled category mixup
    UCM = "ucm"  # unlabeled consistency

    @property
    def label(self) -> str:
        return f"w/o {self.value.upper()}"
