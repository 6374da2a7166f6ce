"""
Adaptive graph contrastive learning for recommendation.
This package contains the data pipeline, the differentiable engine, the
models, the bilevel trainer and the evaluation harness.
"""

__version__ = "0.1.0"
