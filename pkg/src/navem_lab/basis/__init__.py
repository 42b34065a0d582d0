"""Learned local basis functions: encodings, harmonic members, losses, training and bundles."""

from navem_lab.basis.bundle import STRATEGIES, BasisBundle
from navem_lab.basis.training import PRESETS, Architecture, Protocol, train_strategy

__all__ = ["STRATEGIES", "BasisBundle", "PRESETS", "Architecture", "Protocol", "train_strategy"]
