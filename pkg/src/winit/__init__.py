"""Feature importance for recurrent time-series classifiers: FIT, IFIT and WinIT."""

from .evaluation import MaskSpec, auc_drop, carry_forward_mask, dataset_ranking_report, ranking_metrics
from .explainers import (
    ExplainConfig,
    ImportanceResult,
    WindowedScores,
    explain_dataset,
    explain_sample,
    fit_score,
    ifit_score,
    kl_divergence,
    partial_prediction,
    winit_aggregate,
    winit_windowed_scores,
)
from .seqdata import Dataset, SpikeConfig, TimeSeriesSample, make_spike_dataset, read_dataset, write_dataset
from .seqmodels import (
    GeneratorModel,
    PredictorModel,
    TrainConfig,
    load_model,
    predictor_forward,
    save_model,
    train_generator,
    train_predictor,
)

__version__ = "0.1.0"
