from factline.encoder.cache import read_embedding_cache, write_embedding_cache
from factline.encoder.model import (
    EMBED_DIM,
    ENTITY_TYPES,
    MULTI_LABEL_HEADS,
    NLI_LABELS,
    RELATION_TYPES,
    EmbeddingBackend,
    EncoderConfig,
    EncoderNet,
    EntityGraph,
    FactEncoder,
)

__all__ = [
    "EMBED_DIM", "ENTITY_TYPES", "MULTI_LABEL_HEADS", "NLI_LABELS", "RELATION_TYPES", "EmbeddingBackend",
    "EncoderConfig", "EncoderNet", "EntityGraph", "FactEncoder", "read_embedding_cache", "write_embedding_cache",
]
