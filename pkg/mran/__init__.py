"""
mran - mixup regularized adversarial networks for multi-domain text classification
"""
__version__ = "1.0.0"
