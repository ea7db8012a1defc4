"""Graph neural networks with neighborhood edge aggregation, built on numpy.

Modules: ``graph`` (graph type and structural queries), ``synth`` (the
synthetic family generator and toy labels), ``nn`` (dense layers with
hand-written backward passes), ``layers`` (message passing and the model),
``data`` (TU-format datasets), ``harness`` (training, cross-validation and
collapse checks) and ``cli``.
"""

__version__ = "0.1.0"
