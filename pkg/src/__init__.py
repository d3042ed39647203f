"""
sbm-spectra: spectral statistics of stochastic block models.

This package samples balanced SBMs and their centered/deformed noise,
computes spectra and linear spectral statistics, predicts their limiting
laws from Chebyshev coefficients, runs the optimal-LSS community detection
test and reproduces the accompanying Monte Carlo experiments:
- BBP outlier transition (dense and sparse)
- Gaussian fluctuations of the detection statistic and its error curve
- Sparse-regime scale and location of linear statistics
- Local-law diagnostics of the resolvent
"""

__version__ = "1.0.0"
__author__ = "sbm-spectra maintainers"
__description__ = "Spectral statistics and LSS detection for stochastic block models"
