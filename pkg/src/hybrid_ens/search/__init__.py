"""Pareto search over architecture codes."""
from .ehvi import ehvi, hypervolume_improvement, psi
from .ens import (EnsConfig, Observation, SearchError, SearchResult, initial_design, propose_next,
                  read_history_csv, reference_point, run_ens, write_front_json, write_history_csv)
from .objectives import make_objective, psnr_difference
from .gp import GPModel, NumericalError, gp_condition, gp_fit, gp_predict
from .pareto import KneeWarning, ParetoArchive, dominates, hypervolume, knee_select, nondominated, pareto_update
from .space import bin_center, decode, decode_many, embed, network_penalty, penalty, sub_specs

__all__ = [name for name in dir() if not name.startswith("_")]
