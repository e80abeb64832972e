"""Distributionally robust emergency frequency control on a Koopman predictor."""

from .ambiguity import AmbiguitySet, membership, mw2
from .control import (ControlProblem, ControlSolution, DcConfig, closed_loop_dc,
                      one_shot_load_shed, solve_drefc_u)
from .dro import VarSpec, approx_icdf, exact_icdf, worst_case_margin
from .gmm import Gmm, JointGmm, condition, fit_em, marginal
from .koopman import DictionarySpec, KoopmanModel, collect_errors, predict, train_edmd
from .sfr import Disturbance, SfrParams, generate_dataset, simulate

__version__ = "0.1.0"

__all__ = [
    "AmbiguitySet", "ControlProblem", "ControlSolution", "DcConfig", "DictionarySpec",
    "Disturbance", "Gmm", "JointGmm", "KoopmanModel", "SfrParams", "VarSpec",
    "approx_icdf", "closed_loop_dc", "collect_errors", "condition", "exact_icdf", "fit_em",
    "generate_dataset", "marginal", "membership", "mw2", "one_shot_load_shed", "predict",
    "simulate", "solve_drefc_u", "train_edmd", "worst_case_margin",
]
