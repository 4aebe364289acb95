"""Run configuration, kernel construction and corpus ingestion."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from .denoiser import TrainConfig
from .embeddings import (EmbeddingTable, build_neighbor_graph, cluster_embeddings, grid_embeddings,
                         load_embeddings, load_embeddings_csv)
from .kernels import AbsorbKernel, Mixture, SikDenseKernel, SikKnnKernel, Temperature, UniformKernel
from .schedules import schedule_from_dict

__all__ = [
    "ConfigError",
    "RunConfig",
    "KernelSpec",
    "build_kernel",
    "Corpus",
    "load_corpus",
    "save_tokens",
    "load_tokens",
]

_TOK_MAGIC = b"TOK1"


class ConfigError(ValueError):
    pass


def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class KernelSpec:
    kind: str = "uniform"
    m: int = 6
    mask_id: int | None = None
    metric: str = "gauss"
    k: int = 8
    bandwidth_k: int | None = None
    tau0: float = 1.0
    tau_rate: float = 4.0
    mix_coef: float = 1.0
    mix_power: float = 2.0
    block_size: int = 4096
    embeddings: str | None = None
    embedding_kind: str = "clusters"
    embedding_dim: int = 8
    embedding_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "absorb", "sik_knn", "sik_dense"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.metric not in ("gauss", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.embedding_kind not in ("clusters", "grid"):
            raise ValueError(f"unknown embedding kind {self.embedding_kind!r}")
        if self.m < 2:
            raise ValueError("vocabulary needs at least two tokens")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _embeddings(spec: KernelSpec) -> EmbeddingTable:
    if spec.embeddings:
        path = spec.embeddings
        emb = load_embeddings_csv(path) if path.endswith(".csv") else load_embeddings(path)
        if emb.m != spec.m:
            raise ConfigError(f"embedding table has {emb.m} rows, vocabulary has {spec.m}")
        return emb
    if spec.embedding_kind == "grid":
        return grid_embeddings(spec.m)
    return cluster_embeddings(spec.m, spec.embedding_dim, seed=spec.embedding_seed)


def build_kernel(spec: KernelSpec | dict):
    if isinstance(spec, dict):
        spec = _strict(KernelSpec, spec, "kernel")
    if spec.kind == "uniform":
        return UniformKernel(spec.m)
    if spec.kind == "absorb":
        return AbsorbKernel(spec.m, spec.mask_id)
    emb = _embeddings(spec)
    tau = Temperature(spec.tau0, spec.tau_rate)
    k = min(spec.k, spec.m - 1)
    bk = k if spec.bandwidth_k is None else min(spec.bandwidth_k, k)
    g = build_neighbor_graph(emb, k, spec.metric, bk)
    if spec.kind == "sik_knn":
        return SikKnnKernel(emb, g, tau, Mixture(spec.mix_coef, spec.mix_power))
    return SikDenseKernel(emb, spec.metric, tau, rho=g.rho, bandwidth_k=bk, block_size=spec.block_size)


@dataclass
class SamplerSpec:
    steps: int = 256
    length: int = 16
    num: int = 8
    plugin: str = "mixture"

    def __post_init__(self):
        if self.plugin not in ("mixture", "bridge"):
            raise ValueError(f"unknown plug-in rule {self.plugin!r}")
        if self.steps < 1 or self.length < 1 or self.num < 1:
            raise ValueError("sampler sizes must be positive")


@dataclass
class RunConfig:
    """Everything a CLI run needs; unknown keys are rejected at every level."""

    kernel: KernelSpec = field(default_factory=KernelSpec)
    schedule: dict = field(default_factory=lambda: {"kind": "loglinear", "eps": 1e-3})
    data: dict = field(default_factory=lambda: {"kind": "synthetic", "num": 64, "length": 32})
    objective: str = "snapshot"
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    bench: dict = field(default_factory=dict)
    seed: int = 0
    workers: int = 1
    output_dir: str = "."

    def __post_init__(self):
        if self.objective not in ("snapshot", "campbell"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        try:
            schedule_from_dict(self.schedule)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"schedule: {exc}") from None

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        nested = {"kernel": KernelSpec, "train": TrainConfig, "sampler": SamplerSpec}
        for key, sub in nested.items():
            if key in data:
                data[key] = _strict(sub, data[key], key)
        return _strict(cls, data, "config")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def to_dict(self) -> dict:
        return {"kernel": self.kernel.to_dict(), "schedule": dict(self.schedule), "data": dict(self.data),
                "objective": self.objective, "train": self.train.to_dict(),
                "sampler": {f.name: getattr(self.sampler, f.name) for f in fields(self.sampler)},
                "bench": dict(self.bench), "seed": self.seed, "workers": self.workers,
                "output_dir": self.output_dir}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def build_schedule(self):
        return schedule_from_dict(self.schedule)


@dataclass
class Corpus:
    sequences: np.ndarray
    m: int
    alphabet: str | None = None
    probs: np.ndarray | None = None

    def __post_init__(self):
        if self.sequences.size and (self.sequences.min() < 0 or self.sequences.max() >= self.m):
            raise ValueError("corpus token outside the vocabulary")

    def decode(self, tokens) -> str:
        if self.alphabet is None:
            raise ValueError("corpus has no alphabet")
        return "".join(self.alphabet[t] if t < len(self.alphabet) else "_" for t in tokens)


def encode_text(text: str, alphabet: str) -> np.ndarray:
    index = {c: i for i, c in enumerate(alphabet)}
    out = np.empty(len(text), dtype=np.int64)
    for pos, ch in enumerate(text):
        if ch not in index:
            offset = len(text[:pos].encode("utf-8"))
            raise ValueError(f"character {ch!r} at byte offset {offset} is not in the alphabet")
        out[pos] = index[ch]
    return out


def _chunk(tokens, length):
    n = len(tokens) // length
    if n == 0:
        raise ValueError(f"corpus of {len(tokens)} tokens is shorter than one chunk of {length}")
    return tokens[: n * length].reshape(n, length)


def load_corpus(spec: dict, m: int | None = None) -> Corpus:
    """Build a corpus from ``{"kind": "synthetic" | "text" | "tokens", ...}``.

    Text and token files are concatenated and cut into fixed-length chunks;
    a trailing partial chunk is dropped.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "synthetic":
        allowed = {"probs", "num", "length", "seed"}
        if set(spec) - allowed:
            raise ConfigError(f"data: unknown keys {sorted(set(spec) - allowed)}")
        probs = np.asarray(spec.get("probs") or np.full(m or 6, 1.0 / (m or 6)), dtype=np.float64)
        if abs(probs.sum() - 1.0) > 1e-9 or np.any(probs < 0):
            raise ConfigError("data: probs must be a probability vector")
        rng = np.random.default_rng(spec.get("seed", 0))
        seqs = rng.choice(len(probs), size=(spec.get("num", 64), spec.get("length", 32)), p=probs)
        if m is not None and len(probs) != m:
            raise ConfigError(f"data: probs has {len(probs)} entries, vocabulary has {m}")
        return Corpus(seqs, len(probs), probs=probs)
    if kind == "text":
        allowed = {"path", "alphabet", "length"}
        if set(spec) - allowed:
            raise ConfigError(f"data: unknown keys {sorted(set(spec) - allowed)}")
        with open(spec["path"], encoding="utf-8") as fh:
            text = fh.read()
        alphabet = spec.get("alphabet") or "".join(sorted(set(text)))
        tokens = encode_text(text, alphabet)
        return Corpus(_chunk(tokens, spec.get("length", len(tokens))), m or len(alphabet), alphabet)
    if kind == "tokens":
        allowed = {"path", "length"}
        if set(spec) - allowed:
            raise ConfigError(f"data: unknown keys {sorted(set(spec) - allowed)}")
        vocab, tokens = load_tokens(spec["path"])
        return Corpus(_chunk(tokens, spec.get("length", len(tokens))), m or vocab)
    raise ConfigError(f"data: unknown corpus kind {kind!r}")


def save_tokens(path, tokens, m: int) -> None:
    tokens = np.asarray(tokens).reshape(-1)
    with open(path, "wb") as fh:
        fh.write(_TOK_MAGIC + struct.pack("<IQ", m, tokens.size))
        fh.write(tokens.astype("<u4").tobytes())


def load_tokens(path):
    """Returns ``(m, tokens)``."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != _TOK_MAGIC:
            raise ValueError(f"{path}: not a TOK1 file")
        m, count = struct.unpack("<IQ", head[4:])
        raw = fh.read()
    if len(raw) != 4 * count:
        raise ValueError(f"{path}: expected {count} token ids")
    tokens = np.frombuffer(raw, dtype="<u4").astype(np.int64)
    if tokens.size and tokens.max() >= m:
        raise ValueError(f"{path}: token id out of range")
    return m, tokens
