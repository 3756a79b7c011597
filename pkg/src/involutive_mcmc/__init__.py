"""Involutive neural MCMC: exactly invertible self-inverse networks as
Metropolis-Hastings proposals, trained adversarially to mix quickly.

Submodules: ``autodiff`` (reverse-mode engine), ``invertible`` (additive
coupling nets), ``involutive`` (involutive blocks and networks), ``targets``,
``kernels`` (MH kernels and chain runner), ``training`` (adversarial
training), ``universality`` (explicit construction), ``diagnostics``,
``verify`` (property suites) and ``cli``.
"""
from .errors import InvolutiveMCMCError
from .involutive import InvolutiveNetwork, build_generator
from .kernels import gaussian_shift_kernel, hmc_kernel, neural_kernel, run_chain
from .targets import get_target
from .training import TrainingConfig, train

__version__ = "0.1.0"

__all__ = ["InvolutiveMCMCError", "InvolutiveNetwork", "build_generator",
           "gaussian_shift_kernel", "hmc_kernel", "neural_kernel", "run_chain",
           "get_target", "TrainingConfig", "train", "__version__"]
