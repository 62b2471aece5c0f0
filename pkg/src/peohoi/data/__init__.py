from .embeddings import EmbeddingTable, load_embeddings
from .io import load_dataset, write_dataset
from .schema import BBox, Dataset, FrameRecord, LabelSpace, PairRecord
from .stats import FrequencyTable, compute_frequencies, split_rare
from .synth import SynthConfig, generate_synthetic

__all__ = [
    "BBox", "Dataset", "EmbeddingTable", "FrameRecord", "FrequencyTable", "LabelSpace",
    "PairRecord", "SynthConfig", "compute_frequencies", "generate_synthetic", "load_dataset",
    "load_embeddings", "split_rare", "write_dataset",
]
