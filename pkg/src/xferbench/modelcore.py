"""Trainable text-to-text model contract, training step, and checkpoint format.

A model owns a single named parameter store; every forward pass within a
training step reads and updates the same tensors (no copies), which is what
lets two passes of one step share weights. Checkpoints are a directory with a
JSON manifest, a flat binary parameter blob, a sidecar index and, for
vocabulary-bearing backends, the vocabulary itself.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
import torch

CHECKPOINT_FORMAT_VERSION = 1


class ModelError(RuntimeError):
    pass


class EmptyTarget(ValueError):
    pass


class NonFiniteLoss(ModelError):
    """Raised when a training step receives a NaN/inf loss; runs must abort."""


class CheckpointError(ModelError):
    pass


class VocabularyMismatch(CheckpointError):
    """Checkpoint vocabulary hash does not match the corpus vocabulary."""


@dataclass(frozen=True)
class GenerationConfig:
    """Decoding knobs. ``seed`` is reserved for stochastic backends; the toy
    backend decodes deterministically regardless."""

    num_beams: int = 4
    max_output_tokens: int = 48
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_beams < 1:
            raise ValueError(f"num_beams must be >= 1, got {self.num_beams}")
        if self.max_output_tokens < 1:
            raise ValueError(f"max_output_tokens must be >= 1, got {self.max_output_tokens}")


@dataclass(frozen=True)
class TrainStepResult:
    loss_value: float
    gradient_norm: float


class TextToTextModel(ABC):
    """Contract for any trainable conditional text generator.

    Implementations expose their parameters through ``named_parameters`` (the
    single source of truth), a differentiable loss, and deterministic
    generation. ``snapshot_state``/``load_state`` give bytewise-exact
    checkpointing in memory.
    """

    backend_id: str = "abstract"

    @abstractmethod
    def compute_loss(self, source: str, target: str) -> torch.Tensor:
        """Token-mean conditional likelihood loss for one (source, target) pair."""

    def compute_loss_batch(self, pairs: Sequence[tuple[str, str]]) -> torch.Tensor:
        """Mean of per-example losses. Backends may override with a padded batch."""
        if not pairs:
            raise ValueError("empty batch")
        losses = [self.compute_loss(src, tgt) for src, tgt in pairs]
        return torch.stack(losses).mean()

    @abstractmethod
    def generate(self, source: str, cfg: GenerationConfig) -> str:
        """Deterministic decoding; output token count <= cfg.max_output_tokens."""

    def generate_batch(self, sources: Sequence[str], cfg: GenerationConfig) -> list[str]:
        """Decode many sources; backends may override with a batched fast path."""
        return [self.generate(s, cfg) for s in sources]

    @abstractmethod
    def named_parameters(self) -> Iterator[tuple[str, torch.Tensor]]:
        ...

    @property
    @abstractmethod
    def vocab_hash(self) -> str:
        ...

    @abstractmethod
    def config_dict(self) -> dict:
        """Backend configuration for the checkpoint manifest."""

    def vocab_tokens(self) -> tuple[str, ...] | None:
        """Vocabulary tokens to persist with checkpoints; None if not applicable."""
        return None

    def parameters(self) -> list[torch.Tensor]:
        return [p for _, p in self.named_parameters()]

    def snapshot_state(self) -> dict[str, torch.Tensor]:
        return {name: p.detach().clone() for name, p in self.named_parameters()}

    def load_state(self, state: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name, p in self.named_parameters():
                p.copy_(state[name])


def make_optimizer(model: TextToTextModel, name: str, lr: float) -> torch.optim.Optimizer:
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    params = list(model.parameters())
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")


def train_step(
    model: TextToTextModel,
    loss: torch.Tensor,
    lr: float,
    optimizer: torch.optim.Optimizer | None = None,
) -> TrainStepResult:
    """Backward + parameter update; returns the loss value and global grad norm.

    With no optimizer this is a plain SGD step at rate ``lr``; with one, the
    optimizer's own rate applies and ``lr`` is ignored.
    """
    if not bool(torch.isfinite(loss)):
        raise NonFiniteLoss(f"non-finite loss {float(loss.detach())!r}; aborting run")
    params = list(model.parameters())
    for p in params:
        p.grad = None
    loss.backward()
    sq_sum = 0.0
    for p in params:
        if p.grad is not None:
            sq_sum += float((p.grad.detach() ** 2).sum())
    if optimizer is not None:
        optimizer.step()
    else:
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        with torch.no_grad():
            for p in params:
                if p.grad is not None:
                    p.add_(p.grad, alpha=-lr)
    return TrainStepResult(loss_value=float(loss.detach()), gradient_norm=math.sqrt(sq_sum))


def save_checkpoint(model: TextToTextModel, out_dir: str | Path) -> Path:
    """Persist a model: manifest.json + params.bin + index.json (+ vocab.txt)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    blob = bytearray()
    for name, p in sorted(model.named_parameters()):
        arr = np.ascontiguousarray(p.detach().cpu().numpy())
        index.append(
            {
                "name": name,
                "offset": len(blob),
                "shape": list(arr.shape),
                "dtype": str(arr.dtype),
            }
        )
        blob.extend(arr.tobytes())
    (out_dir / "params.bin").write_bytes(bytes(blob))
    (out_dir / "index.json").write_text(json.dumps(index, indent=2), encoding="utf-8")
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "backend": model.backend_id,
        "vocab_sha256": model.vocab_hash,
        "config": model.config_dict(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    tokens = model.vocab_tokens()
    if tokens is not None:
        (out_dir / "vocab.txt").write_text("\n".join(tokens) + "\n", encoding="utf-8")
    return out_dir


def read_checkpoint_manifest(ckpt_dir: str | Path) -> dict:
    path = Path(ckpt_dir) / "manifest.json"
    if not path.exists():
        raise CheckpointError(f"{ckpt_dir}: not a checkpoint (no manifest.json)")
    return json.loads(path.read_text(encoding="utf-8"))


def load_parameter_blob(ckpt_dir: str | Path) -> dict[str, torch.Tensor]:
    """Read the flat parameter blob back into named tensors."""
    ckpt_dir = Path(ckpt_dir)
    index = json.loads((ckpt_dir / "index.json").read_text(encoding="utf-8"))
    blob = (ckpt_dir / "params.bin").read_bytes()
    tensors: dict[str, torch.Tensor] = {}
    for entry in index:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=start).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.copy())
    return tensors


# Backend loaders register themselves here keyed by backend_id; see toymodel.
BACKEND_LOADERS: dict[str, Callable[..., TextToTextModel]] = {}


def load_checkpoint(ckpt_dir: str | Path, expected_vocab_hash: str | None = None) -> TextToTextModel:
    """Rebuild a model from a checkpoint directory.

    Rejects the checkpoint when ``expected_vocab_hash`` (the corpus vocabulary)
    does not match the one recorded in the manifest.
    """
    manifest = read_checkpoint_manifest(ckpt_dir)
    if expected_vocab_hash is not None and manifest["vocab_sha256"] != expected_vocab_hash:
        raise VocabularyMismatch(
            f"{ckpt_dir}: checkpoint vocabulary {manifest['vocab_sha256'][:12]}... does not "
            f"match corpus vocabulary {expected_vocab_hash[:12]}..."
        )
    backend = manifest["backend"]
    loader = BACKEND_LOADERS.get(backend)
    if loader is None:
        raise CheckpointError(f"no loader registered for backend {backend!r}")
    return loader(ckpt_dir, manifest)
