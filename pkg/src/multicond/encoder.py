"""Toy interleaved image-text encoder.

A frozen random image featurizer turns each image vector into ``n_slots``
patch features, a trainable projector lifts them to the model width, text
tokens go through an embedding table, and a small bidirectional transformer
runs over the interleaved sequence. The hidden state at the trailing
``[EOS]`` position is the retrieval embedding.
"""

from dataclasses import dataclass
import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .catalog import EOS, PAD, Product
from .sampler import Query
from .validation import ConfigError, check_positive_int

TEXT, VISUAL, EOS_SLOT, PADDING = 0, 1, 2, -1
MODES = ("Seq", "Cat")


@dataclass(frozen=True)
class ImageSegment:
    features: np.ndarray  # (image_dim,)


@dataclass(frozen=True)
class TextSegment:
    tokens: tuple


@dataclass(frozen=True)
class InterleavedInput:
    segments: tuple

    def __post_init__(self):
        if not self.segments:
            raise ValueError("input needs at least one segment")
        for seg in self.segments:
            if isinstance(seg, TextSegment) and len(seg.tokens) == 0:
                raise ValueError("zero-length text segment")
            if isinstance(seg, TextSegment) and EOS in seg.tokens:
                raise ValueError("[EOS] is appended automatically")

    def length(self, n_slots):
        n = sum(n_slots if isinstance(s, ImageSegment) else len(s.tokens) for s in self.segments)
        return n + 1

    def eos_index(self, n_slots):
        return self.length(n_slots) - 1

    @property
    def n_images(self):
        return sum(isinstance(s, ImageSegment) for s in self.segments)


def _merge_text(items):
    """Collapse adjacent token runs into single text segments."""
    out, run = [], []
    for item in items:
        if isinstance(item, ImageSegment):
            if run:
                out.append(TextSegment(tuple(run)))
                run = []
            out.append(item)
        else:
            run.extend(item)
    if run:
        out.append(TextSegment(tuple(run)))
    return tuple(out)


def build_input(entity, mode="Seq", catalog=None):
    """Interleaved encoder input for a product or a query.

    ``Seq`` keeps one image span per image in template order. ``Cat`` pools
    every image vector into one averaged span placed where the first image
    appeared.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if isinstance(entity, Product):
        images = list(entity.image_features)
        if not images:
            raise ValueError(f"product {entity.id} has no image")
        if mode == "Cat":
            images = [np.mean(images, axis=0)]
        items = [ImageSegment(np.asarray(v, float)) for v in images] + [list(entity.title)]
        return InterleavedInput(_merge_text(items))
    if isinstance(entity, Query):
        if catalog is None:
            raise ValueError("encoding a query needs the catalog for its condition images")
        items, pooled = [], []
        for kind, x in entity.instruction:
            if kind == "text":
                items.append(list(x))
                continue
            feats = catalog.get(entity.conditions[x].product_id).image_features
            if mode == "Seq":
                items.extend(ImageSegment(np.asarray(v, float)) for v in feats)
            else:
                if not pooled:
                    items.append("pool")
                pooled.extend(feats)
        if mode == "Cat":
            if not pooled:
                raise ValueError(f"query {entity.id} has no image placeholder")
            mean = ImageSegment(np.mean(pooled, axis=0))
            items = [mean if it == "pool" else it for it in items]
        elif not any(isinstance(it, ImageSegment) for it in items):
            raise ValueError(f"query {entity.id} has no image placeholder")
        return InterleavedInput(_merge_text(items))
    raise TypeError(f"cannot build input for {type(entity).__name__}")


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 64
    image_dim: int = 32
    n_slots: int = 4
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 2
    vocab_size: int = 1024
    max_len: int = 256
    seed: int = 0

    def validate(self):
        for name in ("d", "image_dim", "n_slots", "n_layers", "n_heads", "ffn_mult",
                     "vocab_size", "max_len"):
            check_positive_int(getattr(self, name), name)
        if self.d % self.n_heads:
            raise ConfigError("d must be divisible by n_heads")
        return self


class FrozenImageFeaturizer(nn.Module):
    """Fixed random map image vector -> (n_slots, image_dim) patch features.

    Patch ``k`` only sees the ``k``-th contiguous slice of the image vector,
    so a hidden patch cannot be read back off its visible neighbours.
    """

    def __init__(self, image_dim, n_slots, seed):
        super().__init__()
        g = torch.Generator().manual_seed(int(seed) + 7919)
        w = torch.zeros(n_slots * image_dim, image_dim, dtype=torch.float64)
        bounds = np.linspace(0, image_dim, n_slots + 1).round().astype(int)
        for k in range(n_slots):
            lo, hi = bounds[k], max(bounds[k + 1], bounds[k] + 1)
            block = torch.randn(image_dim, hi - lo, generator=g, dtype=torch.float64)
            w[k * image_dim:(k + 1) * image_dim, lo:hi] = block / math.sqrt(hi - lo)
        b = torch.randn(n_slots * image_dim, generator=g, dtype=torch.float64)
        self.register_buffer("weight", w)
        self.register_buffer("bias", 0.1 * b)
        self.n_slots = n_slots
        self.image_dim = image_dim

    def forward(self, x):
        p = torch.tanh(x @ self.weight.T + self.bias)
        return p.view(*x.shape[:-1], self.n_slots, self.image_dim)


class SelfAttention(nn.Module):
    def __init__(self, d, n_heads):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)

    def forward(self, x, key_mask):
        B, T, d = x.shape
        h = self.n_heads
        split = lambda t: t.view(B, T, h, d // h).transpose(1, 2)  # noqa: E731
        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        out = torch.softmax(scores, dim=-1) @ v
        return self.o(out.transpose(1, 2).reshape(B, T, d))


class Block(nn.Module):
    def __init__(self, d, n_heads, ffn_mult):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, n_heads)
        self.ln2 = nn.LayerNorm(d)
        self.ffn_in = nn.Linear(d, ffn_mult * d)
        self.ffn_out = nn.Linear(ffn_mult * d, d)

    def forward(self, x, key_mask):
        x = x + self.attn(self.ln1(x), key_mask)
        return x + self.ffn_out(F.gelu(self.ffn_in(self.ln2(x))))


@dataclass
class Batch:
    """Padded tensors for a list of inputs."""
    tokens: torch.Tensor      # (B, T) token ids, PAD at image and padding slots
    layout: torch.Tensor      # (B, T) TEXT / VISUAL / EOS_SLOT / PADDING
    images: torch.Tensor      # (n_images, image_dim)
    image_pos: torch.Tensor   # (n_images * n_slots, 2) (row, col) of each slot
    eos_index: torch.Tensor   # (B,)

    @property
    def valid(self):
        return self.layout != PADDING


@dataclass
class HiddenStates:
    E: torch.Tensor        # input embeddings before the sequence model
    H: torch.Tensor        # final hidden states
    h_eos: torch.Tensor    # H at the [EOS] position
    batch: Batch


def collate(inputs, n_slots, dtype=torch.float32):
    lengths = [x.length(n_slots) for x in inputs]
    T = max(lengths)
    B = len(inputs)
    tokens = np.full((B, T), PAD, dtype=np.int64)
    layout = np.full((B, T), PADDING, dtype=np.int64)
    images, image_pos = [], []
    for b, x in enumerate(inputs):
        t = 0
        for seg in x.segments:
            if isinstance(seg, ImageSegment):
                images.append(seg.features)
                image_pos.extend((b, t + s) for s in range(n_slots))
                layout[b, t:t + n_slots] = VISUAL
                t += n_slots
            else:
                n = len(seg.tokens)
                tokens[b, t:t + n] = seg.tokens
                layout[b, t:t + n] = TEXT
                t += n
        tokens[b, t] = EOS
        layout[b, t] = EOS_SLOT
    return Batch(
        tokens=torch.from_numpy(tokens),
        layout=torch.from_numpy(layout),
        images=torch.as_tensor(np.asarray(images, dtype=float).reshape(len(images), -1)
                               if images else np.zeros((0, 0)), dtype=dtype),
        image_pos=torch.as_tensor(image_pos, dtype=torch.long).reshape(-1, 2),
        eos_index=torch.as_tensor(np.asarray(lengths) - 1, dtype=torch.long),
    )


class Encoder(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config = (config or EncoderConfig()).validate()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.vision = FrozenImageFeaturizer(config.image_dim, config.n_slots, config.seed)
            self.projector = nn.Linear(config.image_dim, config.d)
            self.tok_emb = nn.Embedding(config.vocab_size, config.d)
            self.pos_emb = nn.Embedding(config.max_len, config.d)
            self.blocks = nn.ModuleList(
                Block(config.d, config.n_heads, config.ffn_mult) for _ in range(config.n_layers)
            )
            self.ln_f = nn.LayerNorm(config.d)
            self.lm_head = nn.Linear(config.d, config.vocab_size, bias=False)
            nn.init.normal_(self.tok_emb.weight, std=0.02 * math.sqrt(config.d))
            nn.init.normal_(self.pos_emb.weight, std=0.02)

    @property
    def dtype(self):
        return self.projector.weight.dtype

    def embed_inputs(self, batch):
        E = self.tok_emb(batch.tokens)
        if batch.images.numel():
            p_img = self.vision(batch.images.to(self.vision.weight.dtype)).to(self.dtype)
            e_img = self.projector(p_img).reshape(-1, self.config.d)
            E = E.index_put((batch.image_pos[:, 0], batch.image_pos[:, 1]), e_img)
        return E

    def forward(self, batch):
        T = batch.tokens.shape[1]
        if T > self.config.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {self.config.max_len}")
        if batch.images.numel() and batch.images.shape[-1] != self.config.image_dim:
            raise ValueError(
                f"image vectors have dim {batch.images.shape[-1]}, expected {self.config.image_dim}"
            )
        E = self.embed_inputs(batch)
        x = E + self.pos_emb.weight[:T]
        key_mask = batch.valid
        for block in self.blocks:
            x = block(x, key_mask)
        H = self.ln_f(x)
        h_eos = H[torch.arange(H.shape[0]), batch.eos_index]
        return HiddenStates(E=E, H=H, h_eos=h_eos, batch=batch)

    def encode(self, inputs):
        return self(collate(inputs, self.config.n_slots, self.dtype))

    def frozen_tensors(self):
        return {"vision.weight": self.vision.weight, "vision.bias": self.vision.bias}


def encode(params, inputs):
    """Hidden states for a list of ``InterleavedInput``."""
    return params.encode(list(inputs))


def embed_for_retrieval(params, entities, mode="Seq", catalog=None, batch_size=256):
    """L2-normalized ``[EOS]`` states, one row per entity."""
    single = not isinstance(entities, (list, tuple))
    if single:
        entities = [entities]
    was_training = params.training
    params.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(entities), batch_size):
            chunk = [build_input(e, mode, catalog) for e in entities[i:i + batch_size]]
            out.append(F.normalize(params.encode(chunk).h_eos, dim=-1))
    params.train(was_training)
    emb = torch.cat(out).to(torch.float64).numpy()
    return emb[0] if single else emb
