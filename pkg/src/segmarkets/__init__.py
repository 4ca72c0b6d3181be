"""Segregation of learning zero-intelligence traders across two double-auction
markets: stochastic ensemble simulator plus mean-field bifurcation analysis."""

from .core import (ACTIONS, Action, AgentState, ModelParams, Order, ParamError,
                   Side, Variant, initial_agents, run_stream, validate_params)
from .auction import ClearingResult, clear_market, set_price
from .learning import choice_probabilities, update_attractions
from .engine import (EnsembleStats, RecordingSchedule, Trajectory, run_ensemble,
                     run_period, run_simulation)
from .observables import (PersistenceRecord, ReducedCoords, binder_cumulant,
                          count_modes, persistence_times, quadrant_labels,
                          reduce_coords)
from .meanfield import (FixedPoint, critical_temperature, expected_returns,
                        find_fixed_points, flow, flow_field, phase_diagram,
                        truncated_surplus)

__version__ = "0.1.0"
