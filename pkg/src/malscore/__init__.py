"""Score functions of SDE marginals via variation-process machinery.

Exact scores for linear SDEs with additive noise, Monte Carlo
Skorokhod-integral scores for nonlinear SDEs with state-independent
diffusion, and reverse-time SDE sampling on 2D toy datasets.
"""

__version__ = "0.1.0"
