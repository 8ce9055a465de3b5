"""Relation-aware latent-space Bayesian optimization for configuration tuning.

Pipeline: build a parameter relational graph from description embeddings
(:mod:`reltune.relgraph`), learn a performance-aware latent representation
with a graph-attention autoencoder (:mod:`reltune.gnn`), tune in the
latent space with hybrid-score-guided Bayesian optimization
(:mod:`reltune.hbo`), and evaluate everything against a synthetic
DBMS-performance simulator with planted parameter interactions
(:mod:`reltune.simbench`, :mod:`reltune.reports`).
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND

__all__ = ["KERNEL_BACKEND", "__version__"]
