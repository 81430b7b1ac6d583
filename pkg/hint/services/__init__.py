from .benchmark_service import BenchmarkService
from .transport_service import TrainingService
