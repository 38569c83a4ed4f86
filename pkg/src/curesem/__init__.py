"""Bernoulli cure-rate model with exponentiated-Weibull lifetimes, fitted by EM and stochastic EM."""

__version__ = "0.1.0"
