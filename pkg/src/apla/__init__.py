"""Attention projection layer adaptation for small vision transformers in numpy."""

from .adaptation import AdaptationPlan, build_plan, sample_columns, score_columns, select_columns
from .checkpoint import checkpoint_load, checkpoint_save
from .costs import CostModel, cost_model, measure_throughput
from .data import Dataset, gen_teacher_task, load_dataset, save_dataset
from .errors import (AplaError, ConfigError, ConsistencyError, DataError, DimensionError, FormatError,
                     GenerationError)
from .experiments import (ExperimentReport, RunConfig, SweepTable, ablate_components, ablate_selection,
                          load_config, sweep_blocks, sweep_rank, train)
from .optim import Schedule, adamw_step, init_state, lr_at
from .rng import Rng
from .vit import ViTConfig, ViTParams, accuracy, forward, init_params, loss_and_backward, predict

__version__ = "0.1.0"
