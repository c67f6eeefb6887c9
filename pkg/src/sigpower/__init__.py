"""Joint recovery of graph signals and sparse transmit powers in energy-harvesting sensor networks."""

from .bench import ExperimentConfig, MseTable, compute_mse, emit_csv, read_csv, run_experiment
from .graph import GmrfModel, Graph, GraphSpectrum, build_knn_graph, eigendecompose, sample_gmrf
from .simplex import Basis, StandardLp, simplex_optimize, solve, two_phase_solve
from .solver import RestorationResult, SolverConfig, restore, signal_step
from .wsn import Frame, SensorField, draw_channels, synthesize_frame

__version__ = "0.1.0"
