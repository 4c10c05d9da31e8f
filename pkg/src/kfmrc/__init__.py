"""Knowledge-fused extractive reading comprehension at desk scale."""

from .autodiff import ParameterSet, Tensor, backward, grad_check
from .data import QuadRecord, load_dataset
from .kg import EntityEmbedding, KgTrainConfig, KnowledgeBase, load_triples, train_embeddings
from .model import KnowledgeMRC, ModelConfig
from .retrieval import RetrievalConfig
from .synth import synth_generate
from .train import TrainConfig, evaluate, load_model, predict, save_model, train

__version__ = "0.1.0"
