"""Catalytic branching processes on discrete spaces: taboo passage
transforms, criticality and the Malthusian parameter, extinction
probabilities, the Laplace transform of the limit variable, and a Monte Carlo
simulator with empirical verdicts."""

from .extinction import ExtinctionReport, extinction_report, solve_Q, solve_q, survival_phase
from .limit_laws import PhiSolution, solve_phi, tail_limit
from .model import (Catalyst, ModelError, ModelSpec, OffspringLaw, StateSpace, ValidatedModel,
                    load_model, spec_from_dict, validate)
from .simulator import Caps, EnsembleStats, mean_counts, run_ensemble, simulate, simulate_events
from .spectral import (CriticalityReport, NotSupercriticalError, build_D, classify,
                       criticality_report, malthusian, perron_root)
from .taboo import bd_passage_transform, hitting_prob, taboo_transform, taboo_transforms

__version__ = "0.1.0"

__all__ = [
    "Caps", "Catalyst", "CriticalityReport", "EnsembleStats", "ExtinctionReport", "ModelError",
    "ModelSpec", "NotSupercriticalError", "OffspringLaw", "PhiSolution", "StateSpace",
    "ValidatedModel", "bd_passage_transform", "build_D", "classify", "criticality_report",
    "extinction_report", "hitting_prob", "load_model", "malthusian", "mean_counts",
    "perron_root", "run_ensemble", "simulate", "simulate_events", "solve_Q", "solve_phi",
    "solve_q", "spec_from_dict", "survival_phase", "taboo_transform", "taboo_transforms",
    "tail_limit", "validate",
]
