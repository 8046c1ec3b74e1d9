"""Desk-scale lab for debiasing a toy VQA classifier.

The training objective pairs each instance with counterparts that share
its question type but not its answer, real ones sampled from the batch
and synthetic ones built by re-pairing donor images with the anchor's
question, and pushes the anchor to out-score them on its own answer.
Everything runs on a small hand-rolled autodiff engine over numpy.
"""

from .counterparts import (CounterpartIndex, CounterpartPlan,
                           build_counterpart_index, enumerate_real_counterparts,
                           enumerate_synthetic_counterparts, index_stats,
                           real_counterparts, sample_counterparts,
                           synthetic_collision_rate, synthetic_counterparts)
from .data import (AnswerVocab, Dataset, Instance, QuestionTypeTable,
                   SyntheticConfig, argmax_score, generate_synthetic,
                   ingest_vqa_json, load_dataset, question_type, save_dataset,
                   tokenize)
from .engine import (Adam, Parameter, SGD, Tensor, constant,
                     finite_diff_gradient, relative_error)
from .errors import ConfigError, DataError
from .features import read_feature_file, write_feature_file
from .losses import (LossBreakdown, LossConfig, combine, pair_sum_modulated,
                     pair_sum_simplified, pair_sum_symmetric, real_pair_sum,
                     synthetic_pair_sum, vqa_loss)
from .metrics import (ClassDistances, GroupedDivergence, PredictionRecord,
                      answer_distribution, class_distances, export_answer_space,
                      fused_features, js_by_group, js_divergence, pca_2d,
                      predicted_answer_indices, total_variation,
                      true_answer_indices)
from .model import (ModelConfig, TwoStreamClassifier, load_checkpoint,
                    save_checkpoint)
from .reference import ReferenceResult, train_reference
from .train import (EvalResult, RunRecord, TrainConfig, TrainResult, evaluate,
                    run_lambda_sweep, train_model)

__version__ = "0.1.0"
