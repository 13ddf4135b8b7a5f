"""Multi-resolution operator-network surrogates for 1-D periodic PDEs.

The package bundles a small float64 neural-network substrate, branch/trunk
operator models with an optional LSTM sequence head, a self-adaptive weighted
loss, implicit-midpoint PDE data generators, and a CLI for running the full
generate / train / evaluate pipeline.
"""

__version__ = "0.1.0"
