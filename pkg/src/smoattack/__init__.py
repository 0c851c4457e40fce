"""Sliding-mode observers for secure state estimation and attack reconstruction.

Modules
-------
model               plants (generic LTI, the WECC network), Kron reduction, attack signals
transforms          coordinate chain for the unit-vector observer, relative degrees
smo                 unit-vector sliding-mode observer with fixed or adaptive gain
stw_observer        super-twisting observer on an auxiliary-output cascade
hosm_diff           arbitrary-order robust exact differentiators
sparse              shrinkage dynamics for sparse sensor-attack recovery, RIP checks
nonlinear_observer  differentiator-based observer for input-affine plants
engine              scenario files, simulation runner, traces, figures, CLI
"""

from . import errors
from .model import (AttackSignal, DescriptorPowerNetwork, LinearPlant, build_wecc,
                    eval_attack, kron_reduce)

__version__ = "0.1.0"

__all__ = ["errors", "AttackSignal", "DescriptorPowerNetwork", "LinearPlant", "build_wecc",
           "eval_attack", "kron_reduce", "__version__"]
