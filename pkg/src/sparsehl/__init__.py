"""Sparse hierarchical loss, gradient-boosted trees and reconciliation baselines."""

__version__ = "0.1.0"
