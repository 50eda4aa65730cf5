"""Articulated 3D reconstruction from orthographic 2D joint tracks.

The pipeline recovers per-frame cameras from a rank-3K factorization of the
registered tracks (:mod:`sfam.camera`), then alternates a nuclear-norm
fixed-point step on the 3D shapes with a Levenberg-Marquardt bone-length
subproblem (:mod:`sfam.solver`).
"""

from .camera import recover_cameras, select_rank
from .evaluation import evaluate, rigid_align
from .exceptions import (ConfigurationError, ConvergenceWarning, ParseError, PipelineError,
                         SchemaError, SfamError, SkeletonError, SolverAbort)
from .io import load_shapes, load_skeleton, load_tracks, save_shapes, save_tracks
from .model import CameraPoses, MeasurementMatrix, ShapeSequence, Skeleton
from .pipeline import RunConfig, run_pipeline, split_windows
from .solver import SolverConfig, initialize_shape, reconstruct_window

__version__ = "0.1.0"
