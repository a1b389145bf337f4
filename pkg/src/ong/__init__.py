"""Targeted opinion word extraction with ON-LSTM syntax consistency and dependency GCNs."""
from .corpus import Sentence, decode_bio, encode_bio, gen_synthetic, parse_corpus, split_train_dev
from .objective import VARIANTS, AblationMask
from .trainer import Checkpoint, Metrics, TrainConfig, evaluate, predict, train

__all__ = [
    "AblationMask", "Checkpoint", "Metrics", "Sentence", "TrainConfig", "VARIANTS",
    "decode_bio", "encode_bio", "evaluate", "gen_synthetic", "parse_corpus", "predict",
    "split_train_dev", "train",
]
