"""Attention-enhanced mini CNN ensemble for binary breast-density classification."""

__version__ = "0.1.0"
