"""Open-vocabulary lightweight detection transformer at desk scale."""
from .config import ModelConfig, RunConfig, SourceConfig, TrainConfig, preset
from .detector import OVLWDETR, DetectionOutput, count_parameters
from .errors import (ConfigError, DataError, EncodingError, FormatError, InvalidInputError, NumericalError,
                     OVLWError)
from .losses import LossWeights, group_detr_loss, ia_bce_loss
from .matching import hungarian_match, matching_cost
from .open_vocab_head import AlignmentHead, compute_alignment_logits
from .text_embedding import EmbeddingTable, VocabularySpec, encode_vocabulary, toy_text_encoder

__version__ = "0.1.0"

__all__ = [
    "AlignmentHead", "ConfigError", "DataError", "DetectionOutput", "EmbeddingTable", "EncodingError",
    "FormatError", "InvalidInputError", "LossWeights", "ModelConfig", "NumericalError", "OVLWDETR",
    "OVLWError", "RunConfig", "SourceConfig", "TrainConfig", "VocabularySpec", "compute_alignment_logits",
    "count_parameters", "encode_vocabulary", "group_detr_loss", "hungarian_match", "ia_bce_loss",
    "matching_cost", "preset", "toy_text_encoder",
]
