"""Low-rank adapters for the sequence model's linear maps."""

import math

import torch
from torch import nn

from .validation import ConfigError, check_probability


class LoRALinear(nn.Module):
    """``W x + b + (alpha / r) * B A dropout(x)`` with ``W``, ``b`` frozen and ``B`` zero-initialised."""

    def __init__(self, base, r=8, alpha=16, dropout=0.05):
        super().__init__()
        if isinstance(r, bool) or not isinstance(r, int) or r <= 0:
            raise ConfigError(f"LoRA rank must be a positive integer, got {r!r}")
        self.base = base
        self.r = r
        self.scaling = alpha / r
        self.dropout = check_probability(dropout, "lora_dropout")
        # dropout draws from this generator, never the global torch RNG
        self.generator = None
        kw = dict(dtype=base.weight.dtype)
        self.A = nn.Parameter(torch.empty(r, base.in_features, **kw))
        self.B = nn.Parameter(torch.zeros(base.out_features, r, **kw))
        nn.init.kaiming_uniform_(self.A, a=math.sqrt(5))
        for p in self.base.parameters():
            p.requires_grad_(False)

    @property
    def in_features(self):
        return self.base.in_features

    @property
    def out_features(self):
        return self.base.out_features

    @property
    def weight(self):
        return self.base.weight

    def forward(self, x):
        h = x
        if self.training and self.dropout > 0:
            keep = torch.rand(x.shape, generator=self.generator, dtype=x.dtype) >= self.dropout
            h = x * keep / (1 - self.dropout)
        return self.base(x) + (h @ self.A.T @ self.B.T) * self.scaling

    def merged_weight(self):
        return self.base.weight + self.scaling * self.B @ self.A


def apply_lora(encoder, r=8, alpha=16, dropout=0.05, seed=0):
    """Attach adapters to every linear map inside the transformer blocks.

    All sequence-model weights (blocks, token/position embeddings, final norm)
    are frozen. The image projector and ``lm_head`` stay trainable: the
    projector is not part of the sequence model and ``lm_head`` doubles as the
    language reconstruction decoder's output layer, which trains fully.
    Returns the list of adapters.
    """
    if isinstance(r, bool) or not isinstance(r, int) or r <= 0:
        raise ConfigError(f"LoRA rank must be a positive integer, got {r!r}")
    adapters = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed + 2)
        for block in encoder.blocks:
            for parent, name in [(block.attn, "q"), (block.attn, "k"), (block.attn, "v"),
                                 (block.attn, "o"), (block, "ffn_in"), (block, "ffn_out")]:
                wrapped = LoRALinear(getattr(parent, name), r, alpha, dropout)
                setattr(parent, name, wrapped)
                adapters.append(wrapped)
    for module in [encoder.blocks, encoder.tok_emb, encoder.pos_emb, encoder.ln_f]:
        for p in module.parameters():
            p.requires_grad_(False)
    for ad in adapters:
        ad.A.requires_grad_(True)
        ad.B.requires_grad_(True)
    encoder.lora_config = dict(r=r, alpha=alpha, dropout=dropout)
    return adapters


def adapter_parameter_count(adapters):
    return sum(a.A.numel() + a.B.numel() for a in adapters)


def base_weights(encoder):
    """Every frozen base tensor of the sequence model, keyed by name."""
    return {n: p for n, p in encoder.named_parameters()
            if not p.requires_grad and not n.endswith((".A", ".B"))}
