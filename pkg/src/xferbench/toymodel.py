"""Self-contained toy encoder-decoder backend over a whitespace vocabulary.

A small pre-LN transformer held in float64 so that loss values are bit-stable
across identical runs and analytic gradients can be checked against central
finite differences. It exists so every trainer and test runs without external
pretrained weights; larger backends plug into the same contract.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .modelcore import (
    BACKEND_LOADERS,
    CheckpointError,
    EmptyTarget,
    GenerationConfig,
    TextToTextModel,
    load_parameter_blob,
)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

DTYPE = torch.float64

# The backend's matrices are tiny; intra-op threading costs ~3x here and
# single-threaded reductions keep loss values bit-stable across runs.
torch.set_num_threads(1)


class Vocabulary:
    """Word-level vocabulary built from whitespace-split corpus text."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the four special tokens")
        self.tokens: tuple[str, ...] = tuple(tokens)
        self.index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        seen = set()
        for text in texts:
            seen.update(text.split())
        corpus = sorted(seen - set(SPECIAL_TOKENS))
        return cls(SPECIAL_TOKENS + tuple(corpus))

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in text.split()]

    def decode(self, ids: Iterable[int]) -> str:
        words = []
        for i in ids:
            if i == EOS_ID:
                break
            if i in (PAD_ID, BOS_ID, UNK_ID):
                continue
            words.append(self.tokens[i])
        return " ".join(words)

    @property
    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(lines))


@dataclass(frozen=True)
class ToyConfig:
    d_model: int = 64
    n_heads: int = 2
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_ff: int = 128
    max_len: int = 64

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")


class _Attention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def forward(self, query: torch.Tensor, kv: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # mask: [B, 1, Tq, Tk] bool, True where attention is allowed
        B, Tq, _ = query.shape
        Tk = kv.shape[1]
        q = self.q(query).view(B, Tq, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.k(kv).view(B, Tk, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.v(kv).view(B, Tk, self.n_heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~mask, float("-inf"))
        out = torch.softmax(scores, dim=-1) @ v
        out = out.transpose(1, 2).reshape(B, Tq, -1)
        return self.o(out)


class _FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.up = nn.Linear(d_model, d_ff)
        self.down = nn.Linear(d_ff, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.down(F.relu(self.up(x)))


class _EncoderLayer(nn.Module):
    def __init__(self, cfg: ToyConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = _Attention(cfg.d_model, cfg.n_heads)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ffn = _FeedForward(cfg.d_model, cfg.d_ff)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, mask)
        x = x + self.ffn(self.norm2(x))
        return x


class _DecoderLayer(nn.Module):
    def __init__(self, cfg: ToyConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = _Attention(cfg.d_model, cfg.n_heads)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = _Attention(cfg.d_model, cfg.n_heads)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ffn = _FeedForward(cfg.d_model, cfg.d_ff)

    def forward(
        self,
        x: torch.Tensor,
        enc_out: torch.Tensor,
        self_mask: torch.Tensor,
        cross_mask: torch.Tensor,
    ) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.self_attn(h, h, self_mask)
        x = x + self.cross_attn(self.norm2(x), enc_out, cross_mask)
        x = x + self.ffn(self.norm3(x))
        return x


class ToySeq2Seq(nn.Module, TextToTextModel):
    """Two-layer encoder-decoder with a shared token embedding, in float64."""

    backend_id = "toy"

    def __init__(self, vocab: Vocabulary, config: ToyConfig = ToyConfig(), seed: int = 0):
        super().__init__()
        self.vocab = vocab
        self.config = config
        V, d = len(vocab), config.d_model
        self.embed = nn.Embedding(V, d)
        self.enc_pos = nn.Parameter(torch.zeros(config.max_len, d))
        self.dec_pos = nn.Parameter(torch.zeros(config.max_len, d))
        self.encoder = nn.ModuleList(_EncoderLayer(config) for _ in range(config.n_encoder_layers))
        self.enc_norm = nn.LayerNorm(d)
        self.decoder = nn.ModuleList(_DecoderLayer(config) for _ in range(config.n_decoder_layers))
        self.dec_norm = nn.LayerNorm(d)
        self.out_proj = nn.Linear(d, V)
        self.to(DTYPE)
        self._init_weights(seed)

    def _init_weights(self, seed: int) -> None:
        # Sorted name order makes initialization independent of registration order.
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in sorted(self.named_parameters()):
                if "norm" in name and name.endswith(".weight"):
                    p.fill_(1.0)
                elif name.endswith(".bias"):
                    p.zero_()
                else:
                    p.copy_(torch.randn(p.shape, generator=g, dtype=DTYPE) * 0.02)

    # -- contract surface -----------------------------------------------

    @property
    def vocab_hash(self) -> str:
        return self.vocab.sha256

    def config_dict(self) -> dict:
        return asdict(self.config)

    def vocab_tokens(self) -> tuple[str, ...]:
        return self.vocab.tokens

    def compute_loss(self, source: str, target: str) -> torch.Tensor:
        return self.compute_loss_batch([(source, target)])

    def compute_loss_batch(self, pairs: Sequence[tuple[str, str]]) -> torch.Tensor:
        """Mean over examples of the per-example token-mean NLL (EOS included)."""
        if not pairs:
            raise ValueError("empty batch")
        for _, target in pairs:
            if not target.strip():
                raise EmptyTarget("target text must be non-empty")
        max_tgt = self.config.max_len - 1
        src_ids = [self._source_ids(src) for src, _ in pairs]
        tgt_ids = [self.vocab.encode(tgt)[:max_tgt] for _, tgt in pairs]
        dec_in = [[BOS_ID] + t for t in tgt_ids]
        labels = [t + [EOS_ID] for t in tgt_ids]

        src, src_mask = self._pad(src_ids)
        dec, _ = self._pad(dec_in)
        lab, lab_mask = self._pad(labels)

        enc_out = self._encode(src, src_mask)
        logits = self._decode(dec, enc_out, src_mask)
        logp = F.log_softmax(logits, dim=-1)
        nll = -logp.gather(-1, lab.unsqueeze(-1)).squeeze(-1)
        mask = lab_mask.to(DTYPE)
        per_example = (nll * mask).sum(dim=-1) / mask.sum(dim=-1)
        return per_example.mean()

    def generate(self, source: str, cfg: GenerationConfig) -> str:
        """Exact beam search (greedy when num_beams=1) with deterministic ties.

        Beams are ranked by summed log-probability; ties break toward the
        lexicographically smaller token sequence.
        """
        with torch.no_grad():
            src, src_mask = self._pad([self._source_ids(source)])
            enc_out = self._encode(src, src_mask)
            max_steps = min(cfg.max_output_tokens, self.config.max_len - 1)
            beams: list[tuple[float, list[int], bool]] = [(0.0, [BOS_ID], False)]
            for _ in range(max_steps):
                if all(done for _, _, done in beams):
                    break
                candidates: list[tuple[float, list[int], bool]] = []
                for score, seq, done in beams:
                    if done:
                        candidates.append((score, seq, True))
                        continue
                    dec, _ = self._pad([seq])
                    logits = self._decode(dec, enc_out, src_mask)[0, -1]
                    logprobs = F.log_softmax(logits, dim=-1).numpy()
                    top = np.argsort(-logprobs, kind="stable")[: cfg.num_beams]
                    for t in top:
                        t = int(t)
                        candidates.append((score + float(logprobs[t]), seq + [t], t == EOS_ID))
                candidates.sort(key=lambda c: (-c[0], c[1]))
                beams = candidates[: cfg.num_beams]
            finished = [b for b in beams if b[2]]
            best = finished[0] if finished else beams[0]
            return self.vocab.decode(best[1][1:])

    def generate_batch(self, sources: Sequence[str], cfg: GenerationConfig) -> list[str]:
        """Batched greedy decoding; falls back to per-source beam search when
        num_beams > 1. Row results match single-source greedy decoding."""
        if cfg.num_beams != 1 or not sources:
            return [self.generate(s, cfg) for s in sources]
        with torch.no_grad():
            src, src_mask = self._pad([self._source_ids(s) for s in sources])
            enc_out = self._encode(src, src_mask)
            B = len(sources)
            seqs = [[BOS_ID] for _ in range(B)]
            alive = [True] * B
            max_steps = min(cfg.max_output_tokens, self.config.max_len - 1)
            for _ in range(max_steps):
                if not any(alive):
                    break
                dec, _ = self._pad(seqs)
                logits = self._decode(dec, enc_out, src_mask)[:, -1]
                nxt = logits.numpy().argmax(axis=1)
                for i in range(B):
                    if alive[i]:
                        t = int(nxt[i])
                        seqs[i].append(t)
                        if t == EOS_ID:
                            alive[i] = False
                    else:
                        seqs[i].append(PAD_ID)
            return [self.vocab.decode(s[1:]) for s in seqs]

    # -- internals --------------------------------------------------------

    def _source_ids(self, source: str) -> list[int]:
        ids = self.vocab.encode(source)[: self.config.max_len]
        return ids or [UNK_ID]

    @staticmethod
    def _pad(seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
        width = max(len(s) for s in seqs)
        ids = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
        return ids, ids != PAD_ID

    def _encode(self, src: torch.Tensor, src_mask: torch.Tensor) -> torch.Tensor:
        T = src.shape[1]
        x = self.embed(src) + self.enc_pos[:T]
        attn_mask = src_mask[:, None, None, :]
        for layer in self.encoder:
            x = layer(x, attn_mask)
        return self.enc_norm(x)

    def _decode(self, dec: torch.Tensor, enc_out: torch.Tensor, src_mask: torch.Tensor) -> torch.Tensor:
        B, T = dec.shape
        x = self.embed(dec) + self.dec_pos[:T]
        causal = torch.tril(torch.ones(T, T, dtype=torch.bool))
        self_mask = causal[None, None, :, :].expand(B, 1, T, T)
        cross_mask = src_mask[:, None, None, :]
        for layer in self.decoder:
            x = layer(x, enc_out, self_mask, cross_mask)
        return self.out_proj(self.dec_norm(x))


def _load_toy(ckpt_dir: str | Path, manifest: dict) -> ToySeq2Seq:
    ckpt_dir = Path(ckpt_dir)
    vocab_path = ckpt_dir / "vocab.txt"
    if not vocab_path.exists():
        raise CheckpointError(f"{ckpt_dir}: toy checkpoint lacks vocab.txt")
    vocab = Vocabulary.load(vocab_path)
    if vocab.sha256 != manifest["vocab_sha256"]:
        raise CheckpointError(f"{ckpt_dir}: vocab.txt does not match manifest hash")
    model = ToySeq2Seq(vocab, ToyConfig(**manifest["config"]), seed=0)
    model.load_state(load_parameter_blob(ckpt_dir))
    return model


BACKEND_LOADERS["toy"] = _load_toy
