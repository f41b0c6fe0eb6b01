"""Likelihood-free Bayesian inference: dropout networks for posterior-mean
estimation, split conformal calibration for frequentist confidence sets,
and rejection-ABC baselines over three benchmark simulators."""

__version__ = "0.1.0"
