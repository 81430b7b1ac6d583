from .checkpoint import CheckpointModel
from .experiment import ExperimentModel
from .metrics import MetricsModel
from .sample_set import SampleSetModel
