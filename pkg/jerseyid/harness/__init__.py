from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .metrics import MetricsLog, accuracy, read_metrics, weighted_f1
from .evaluator import EvaluationResult, MissingShiftDbError, evaluate, evaluate_games
from .trainer import TrainResult, train
from .experiments import ABLATION_GRIDS, ablate, compare_models, convergence_compare
