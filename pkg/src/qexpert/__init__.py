"""Expert identification in QA communities: convolutional question encoders
matched against DeepWalk user vectors, plus a question/answer baseline."""

from .corpus import (CandidatePool, Dataset, QuestionRecord, SyntheticConfig, Triple, Vocab, build_vocab,
                     encode_text, generate_synthetic, make_triples, parse_dataset,
                     sample_candidate_pool, tokenize)
from .embed import EmbeddingTable, deepwalk, load_vectors, save_vectors, train_skipgram
from .estimators import DeepWalkEmbedder, QACNN, QUserCNN, SkipGramEmbedder
from .train import EvalReport, TrainConfig, evaluate_top1, hinge_loss

__version__ = "0.1.0"

__all__ = [
    "CandidatePool", "Dataset", "QuestionRecord", "SyntheticConfig", "Triple", "Vocab", "build_vocab",
    "encode_text", "generate_synthetic", "make_triples", "parse_dataset", "sample_candidate_pool",
    "tokenize", "EmbeddingTable", "deepwalk", "load_vectors", "save_vectors", "train_skipgram",
    "DeepWalkEmbedder", "QACNN", "QUserCNN", "SkipGramEmbedder", "EvalReport", "TrainConfig",
    "evaluate_top1", "hinge_loss",
]
