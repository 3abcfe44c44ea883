"""Finite-time coherent sets from unlabeled snapshots via regularized and unbalanced optimal transport."""
