"""Generalized discrete diffusion trained from noised snapshots.

Exact CTMC noising by uniformization for arbitrary jump kernels, snapshot,
path-wise and Campbell objectives, a dense oracle for small vocabularies,
ancestral samplers, metrics and a latency benchmark.
"""

from .config import ConfigError, Corpus, KernelSpec, RunConfig, build_kernel, load_corpus
from .denoiser import PathPredictor, SmoothJumpNet, TabularDenoiser, TrainConfig, train
from .embeddings import EmbeddingTable, NeighborGraph, build_neighbor_graph
from .kernels import (AbsorbKernel, DenseKernel, InterpolatedKernel, JumpKernel, Mixture,
                      SikDenseKernel, SikKnnKernel, Temperature, UniformKernel)
from .metrics import EvalReport, distinct_n, nll_bound_snapshot, unigram_entropy
from .schedules import Custom, Linear, LogLinear, Schedule, schedule_from_dict
from .uniformize import PathBatch, noise_batch, noise_sequence, noise_token

__version__ = "0.1.0"
