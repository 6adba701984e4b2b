"""Item-embedding recommender for implicit-feedback click data."""

from .data import (
    ClickDataset,
    DataError,
    DatasetSplit,
    InteractionRecord,
    SparseClickMatrix,
    binarize,
    build_matrix,
    load_interactions,
    split,
)
from .evaluation import EvalReport, evaluate, ndcg_at_n, recall_at_n, segment_users
from .model import ModelParams, hidden, init_params, load_checkpoint, predict_prob, save_checkpoint, score
from .query import ScoredItem, co_purchased, recommend_top_n, similar_items
from .trainer import (
    AdamState,
    NumericalError,
    TrainConfig,
    TrainExample,
    TrainReport,
    adam_step,
    batch_gradients,
    example_loss,
    make_example,
    sample_negatives,
    train,
)

__version__ = "0.1.0"
