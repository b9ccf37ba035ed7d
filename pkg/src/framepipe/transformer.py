"""Minimal causal-masked transformer with a KV cache.

Small enough for sub-second property tests, real enough to check that a
single merged prefill over a shared token prefix reproduces, position by
position, the hidden states that separate shorter prefills (or prefill +
decodes) would produce. Weights come from a seeded initializer; the merge
equivalence is weight-independent, so nothing is trained.

All math is float64 numpy. Masked attention scores are forced to -inf
before the softmax, so a masked position contributes an exact 0.0 to every
reduction: perturbing a later token therefore leaves earlier hidden states
bit-identical (the causal-isolation property). Prefills of different
lengths may still differ by reduction order, which is why cross-length
comparisons use a relative tolerance instead of equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .context import ContextKind, PublicContext
from .errors import KindMismatch, LengthExceeded


@dataclass(frozen=True)
class TransformerConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 4
    vocab_size: int = 64
    max_len: int = 256
    seed: int = 0

    def __post_init__(self):
        if min(self.d_model, self.n_heads, self.n_layers, self.vocab_size, self.max_len) <= 0:
            raise ValueError("all transformer dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class KvCache:
    """Per-layer key/value tensors for the positions seen so far."""

    keys: list[np.ndarray] = field(default_factory=list)    # [m, H, hd] per layer
    values: list[np.ndarray] = field(default_factory=list)

    @property
    def length(self) -> int:
        return 0 if not self.keys else self.keys[0].shape[0]


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5) * gain + bias


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


class CausalTransformer:
    """Pre-norm transformer; owns its seeded weights, shareable read-only."""

    def __init__(self, config: TransformerConfig | None = None):
        self.config = config or TransformerConfig()
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        s = 0.08
        d, h, dh = cfg.d_model, cfg.n_heads, cfg.head_dim
        self.tok_emb = rng.normal(0.0, s, (cfg.vocab_size, d))
        self.pos_emb = rng.normal(0.0, s, (cfg.max_len, d))
        self.layers = []
        for _ in range(cfg.n_layers):
            self.layers.append({
                "ln1_g": np.ones(d), "ln1_b": np.zeros(d),
                "wq": rng.normal(0.0, s, (d, d)),
                "wk": rng.normal(0.0, s, (d, d)),
                "wv": rng.normal(0.0, s, (d, d)),
                "wo": rng.normal(0.0, s, (d, d)),
                "ln2_g": np.ones(d), "ln2_b": np.zeros(d),
                "w1": rng.normal(0.0, s, (d, 4 * d)), "b1": np.zeros(4 * d),
                "w2": rng.normal(0.0, s, (4 * d, d)), "b2": np.zeros(d),
            })
        self.lnf_g, self.lnf_b = np.ones(d), np.zeros(d)
        self._h = h
        self._dh = dh

    # -- embeddings ---------------------------------------------------------

    def embed_tokens(self, token_ids) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError("token id outside vocabulary")
        return self.tok_emb[ids]

    # -- full-sequence prefill ------------------------------------------------

    def prefill(self, token_ids) -> tuple[np.ndarray, KvCache]:
        """Hidden states and KV cache for a full token sequence."""
        return self.prefill_embedded(self.embed_tokens(token_ids))

    def prefill_embedded(self, embeddings: np.ndarray) -> tuple[np.ndarray, KvCache]:
        x = np.asarray(embeddings, dtype=np.float64)
        m = x.shape[0]
        if m < 1:
            raise ValueError("prefill requires at least one token")
        if m > self.config.max_len:
            raise LengthExceeded(f"sequence length {m} > max {self.config.max_len}")
        if x.shape[1] != self.config.d_model:
            raise ValueError("embedding width must equal d_model")
        h, dh = self._h, self._dh
        x = x + self.pos_emb[:m]
        mask = np.tril(np.ones((m, m), dtype=bool))
        cache = KvCache()
        for p in self.layers:
            a = _layer_norm(x, p["ln1_g"], p["ln1_b"])
            q = (a @ p["wq"]).reshape(m, h, dh)
            k = (a @ p["wk"]).reshape(m, h, dh)
            v = (a @ p["wv"]).reshape(m, h, dh)
            cache.keys.append(k)
            cache.values.append(v)
            # [h, m, m] scores; masked entries forced to -inf pre-softmax
            scores = np.einsum("qhd,khd->hqk", q, k) / np.sqrt(dh)
            scores = np.where(mask[None, :, :], scores, -np.inf)
            scores = scores - scores.max(axis=-1, keepdims=True)
            w = np.exp(scores)
            w = w / w.sum(axis=-1, keepdims=True)
            attn = np.einsum("hqk,khd->qhd", w, v).reshape(m, self.config.d_model)
            x = x + attn @ p["wo"]
            a2 = _layer_norm(x, p["ln2_g"], p["ln2_b"])
            x = x + _gelu(a2 @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]
        return _layer_norm(x, self.lnf_g, self.lnf_b), cache

    # -- single-token decode ----------------------------------------------------

    def decode(self, token_id: int, cache: KvCache) -> tuple[np.ndarray, KvCache]:
        """Hidden state for the next position, extending the cache by one."""
        if cache is None or cache.length == 0:
            raise ValueError("decode requires a cache produced by prefill")
        m = cache.length
        if m + 1 > self.config.max_len:
            raise LengthExceeded(f"cache full at max length {self.config.max_len}")
        h, dh = self._h, self._dh
        x = self.embed_tokens([token_id])[0] + self.pos_emb[m]
        new = KvCache()
        for li, p in enumerate(self.layers):
            a = _layer_norm(x, p["ln1_g"], p["ln1_b"])
            q = (a @ p["wq"]).reshape(h, dh)
            k = (a @ p["wk"]).reshape(h, dh)
            v = (a @ p["wv"]).reshape(h, dh)
            ks = np.concatenate([cache.keys[li], k[None]], axis=0)
            vs = np.concatenate([cache.values[li], v[None]], axis=0)
            new.keys.append(ks)
            new.values.append(vs)
            scores = np.einsum("hd,khd->hk", q, ks) / np.sqrt(dh)
            scores = scores - scores.max(axis=-1, keepdims=True)
            w = np.exp(scores)
            w = w / w.sum(axis=-1, keepdims=True)
            attn = np.einsum("hk,khd->hd", w, vs).reshape(self.config.d_model)
            x = x + attn @ p["wo"]
            a2 = _layer_norm(x, p["ln2_g"], p["ln2_b"])
            x = x + _gelu(a2 @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]
        return _layer_norm(x, self.lnf_g, self.lnf_b), new

    # -- merged computation --------------------------------------------------

    def merged_generate(self, ctx: PublicContext, positions) -> dict[int, np.ndarray]:
        """One prefill over the whole public context serving many requests.

        `positions` are 0-based sequence indices inside the action-token
        region; each returned hidden state equals what a separate, shorter
        prefill up to that position would produce (causal masking keeps a
        position independent of everything after it).
        """
        if ctx.kind != ContextKind.AUTOREGRESSIVE:
            raise KindMismatch("merged generation requires an autoregressive context")
        emb = self.context_embeddings(ctx)
        l = emb.shape[0] - len(ctx.action_tokens)
        total = emb.shape[0]
        positions = sorted(set(int(p) for p in positions))
        for p in positions:
            if not (l <= p < total):
                raise ValueError(f"position {p} outside action region [{l}, {total})")
        hidden, _ = self.prefill_embedded(emb)
        return {p: hidden[p] for p in positions}

    def context_embeddings(self, ctx: PublicContext) -> np.ndarray:
        """[X_V; X_L; embed(X_A)] stacked into one embedding sequence."""
        if ctx.kind != ContextKind.AUTOREGRESSIVE:
            raise KindMismatch("token embeddings only exist on autoregressive contexts")
        parts = [np.asarray(ctx.vision_tokens, dtype=np.float64),
                 np.asarray(ctx.language_tokens, dtype=np.float64)]
        if ctx.action_tokens:
            parts.append(self.embed_tokens(list(ctx.action_tokens)))
        return np.concatenate(parts, axis=0)

    # -- readout ------------------------------------------------------------------

    def logits(self, hidden: np.ndarray) -> np.ndarray:
        return hidden @ self.tok_emb.T

    def greedy_token(self, hidden: np.ndarray) -> int:
        return int(np.argmax(self.logits(hidden)))
