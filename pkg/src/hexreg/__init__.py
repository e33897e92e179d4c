"""hexreg: hierarchy-aware contrastive-loss regularization with collapse
diagnostics and a deterministic desk-scale trainer."""

__version__ = "0.1.0"
