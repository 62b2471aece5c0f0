from .harness import ablation, evaluate, lambda_sweep, predict_dataset, separability_study
from .metrics import (EvalReport, Predictions, SeparabilityReport, average_precision, map_report,
                      sample_variance, separability, silhouette)

__all__ = [
    "EvalReport", "Predictions", "SeparabilityReport", "ablation", "average_precision", "evaluate",
    "lambda_sweep", "map_report", "predict_dataset", "sample_variance", "separability",
    "separability_study", "silhouette",
]
