"""Experiment runners: two-stage rate, GMM mode regression, bias probe, ecological study."""

from distreg.experiments.bias import BiasProbeReport, run_bias_probe
from distreg.experiments.ecological import EcoReport, EcoSettings, run_ecological_experiment
from distreg.experiments.gmm import CVConfig, GmmReport, run_gmm_experiment
from distreg.experiments.rate import RateReport, run_rate_experiment
from distreg.experiments.scoring import ScoreReport, explained_variance, fit_loglog, mean_absolute_error
from distreg.experiments.truth import Gaussian, GaussianMeanTask, Uniform1D

__all__ = [
    "BiasProbeReport", "CVConfig", "EcoReport", "EcoSettings", "Gaussian", "GaussianMeanTask",
    "GmmReport", "RateReport", "ScoreReport", "Uniform1D", "explained_variance", "fit_loglog",
    "mean_absolute_error", "run_bias_probe", "run_ecological_experiment", "run_gmm_experiment",
    "run_rate_experiment",
]
