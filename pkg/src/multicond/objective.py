"""Contrastive-reconstruction objective.

``total = L_cl + lambda_reg * L_reg + lambda_rec * L_rec`` where ``L_cl`` is
InfoNCE over in-batch negatives and both reconstruction terms rebuild the
retrieval target's input embeddings from masked attention. ``L_reg`` uses the
query's ``[EOS]`` state as the attention query, ``L_rec`` the target's own.
Each reconstruction term is a vision MSE plus a masked-token cross-entropy.
All components are non-negative penalties and the total is minimized.
"""

from dataclasses import dataclass
import math

import torch
from torch import nn
import torch.nn.functional as F

from .encoder import PADDING, TEXT, VISUAL
from .validation import check_probability, check_real

MODALITIES = {"visual": VISUAL, "linguistic": TEXT}


@dataclass
class ModalityMask:
    """Additive attention mask over ``e = [E, h_eos]`` plus the masked positions."""
    M: torch.Tensor        # (B, T+1, T+1), entries 0 or -inf
    masked: torch.Tensor   # (B, T) bool, positions whose key column is masked
    maskable: torch.Tensor  # (B, T) bool, every position of the modality
    modality: str
    delta: float


def apply_modality_mask(layout, modality, delta, generator=None, dtype=torch.float64):
    """Drop each key column of the chosen modality with probability ``delta``.

    Columns of the other modality stay attended, padding columns are always
    masked and the appended ``h_eos`` column never is, so no row is empty.
    """
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {tuple(MODALITIES)}")
    delta = check_probability(delta, "delta")
    maskable = layout == MODALITIES[modality]
    if not bool(maskable.any()):
        raise ValueError(f"no {modality} positions to mask")
    draw = torch.rand(layout.shape, generator=generator, dtype=torch.float64) < delta
    masked = maskable & draw
    B, T = layout.shape
    blocked = torch.cat([masked | (layout == PADDING), torch.zeros(B, 1, dtype=torch.bool)], 1)
    col = torch.zeros(B, T + 1, dtype=dtype).masked_fill(blocked, float("-inf"))
    M = col[:, None, :].expand(B, T + 1, T + 1)
    return ModalityMask(M=M, masked=masked, maskable=maskable, modality=modality, delta=delta)


class MaskedAttentionHead(nn.Module):
    """Single-head attention with a repeated ``[EOS]`` query stream."""

    def __init__(self, d, max_len=257):
        super().__init__()
        self.W_q = nn.Linear(d, d, bias=False)
        self.W_k = nn.Linear(d, d, bias=False)
        self.W_v = nn.Linear(d, d, bias=False)
        self.pos = nn.Embedding(max_len, d)
        nn.init.normal_(self.pos.weight, std=0.02)

    def query_stream(self, h_eos, length):
        return h_eos[:, None, :] + self.pos.weight[:length][None]

    def forward(self, q, e, M, return_weights=False):
        return masked_attention(self, q, e, M, return_weights)


def masked_attention(head, q, e, M, return_weights=False):
    """``softmax(Q K^T / sqrt(d) + M) V`` with Q from ``q`` and K, V from ``e``."""
    if q.shape[:-1] != e.shape[:-1]:
        raise ValueError(f"q {tuple(q.shape)} and e {tuple(e.shape)} must align")
    Q, K, V = head.W_q(q), head.W_k(e), head.W_v(e)
    scores = Q @ K.transpose(-1, -2) / math.sqrt(Q.shape[-1]) + M.to(Q.dtype)
    if bool(torch.isneginf(scores).all(dim=-1).any()):
        raise ValueError("an attention row has every key masked")
    weights = torch.softmax(scores, dim=-1)
    out = weights @ V
    return (out, weights) if return_weights else out


class ReconstructionDecoder(nn.Module):
    """One post-LN transformer layer whose attention is the masked ``[EOS]`` head.

    ``output`` is a fresh linear map to the model width for vision, or the
    encoder's ``lm_head`` (shared by reference) for language.
    """

    def __init__(self, d, output, max_len=257, ffn_mult=2):
        super().__init__()
        self.attn = MaskedAttentionHead(d, max_len)
        self.attn_out = nn.Linear(d, d)
        self.ln1 = nn.LayerNorm(d)
        self.ffn_in = nn.Linear(d, ffn_mult * d)
        self.ffn_out = nn.Linear(ffn_mult * d, d)
        self.ln2 = nn.LayerNorm(d)
        self.output = output

    def forward(self, E, h_eos, M):
        e = torch.cat([E, h_eos[:, None, :]], dim=1)
        q = self.attn.query_stream(h_eos, e.shape[1])
        a = self.ln1(q + self.attn_out(masked_attention(self.attn, q, e, M)))
        x = self.ln2(a + self.ffn_out(F.gelu(self.ffn_in(a))))
        return self.output(x[:, :-1])


class Decoders(nn.Module):
    def __init__(self, encoder, max_len=None):
        super().__init__()
        d = encoder.config.d
        max_len = max_len or encoder.config.max_len + 1
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(encoder.config.seed + 1)
            self.vision = ReconstructionDecoder(d, nn.Linear(d, d), max_len, encoder.config.ffn_mult)
            # lm_head is registered under the encoder; keep it out of this module's parameters
            self.language = ReconstructionDecoder(d, nn.Identity(), max_len, encoder.config.ffn_mult)
        self._lm_head = [encoder.lm_head]
        self.to(encoder.dtype)

    @property
    def lm_head(self):
        return self._lm_head[0]

    def reconstruct_vision(self, E, h_eos, M):
        return self.vision(E, h_eos, M)

    def reconstruct_tokens(self, E, h_eos, M):
        return self.lm_head(self.language(E, h_eos, M))


# -- losses ------------------------------------------------------------------

def info_nce(query_embs, key_embs, tau=0.02):
    """Mean over rows of ``-log softmax(q_i . k_j / tau)[i]``."""
    tau = check_real(tau, "tau", 0.0, low_inclusive=False)
    if query_embs.shape != key_embs.shape:
        raise ValueError("query and key embeddings must have the same shape")
    logits = query_embs @ key_embs.T / tau
    return (torch.logsumexp(logits, dim=1) - logits.diagonal()).mean()


def positionwise_mse(E_hat, E_target, positions):
    """Mean over samples of the mean squared error at the selected positions.

    Samples without a selected position are left out of the batch mean.
    """
    if E_hat.shape != E_target.shape:
        raise ValueError(f"shape mismatch {tuple(E_hat.shape)} vs {tuple(E_target.shape)}")
    sq = ((E_hat - E_target) ** 2).mean(dim=-1) * positions
    counts = positions.sum(dim=1)
    has = counts > 0
    if not bool(has.any()):
        return E_hat.sum() * 0.0
    return (sq.sum(dim=1)[has] / counts[has]).mean()


def masked_token_ce(logits, targets, positions):
    if not bool(positions.any()):
        raise ValueError("no masked linguistic positions")
    return F.cross_entropy(logits[positions], targets[positions])


def vision_reconstruction_loss(decoders, E_target, E, h_eos, mask, full_sequence=False):
    """MSE between reconstructed and original embeddings at visual positions.

    Only masked visual positions count unless ``full_sequence`` is set, in
    which case every visual position does.
    """
    E_hat = decoders.reconstruct_vision(E, h_eos, mask.M)
    positions = mask.maskable if full_sequence else mask.masked
    return positionwise_mse(E_hat, E_target, positions)


def mlm_loss(decoders, token_targets, E, h_eos, mask):
    """Cross-entropy of the original token ids at masked text positions."""
    logits = decoders.reconstruct_tokens(E, h_eos, mask.M)
    return masked_token_ce(logits, token_targets, mask.masked)


@dataclass(frozen=True)
class CoralHyper:
    tau: float = 0.02
    delta: float = 0.5
    lambda_reg: float = 0.1
    lambda_rec: float = 0.1
    use_vision: bool = True
    use_language: bool = True
    full_sequence_mse: bool = False
    reconstruct_query: bool = False
    detach_target: bool = True

    def validate(self):
        check_real(self.tau, "tau", 0.0, low_inclusive=False)
        check_probability(self.delta, "delta")
        check_real(self.lambda_reg, "lambda_reg", 0.0)
        check_real(self.lambda_rec, "lambda_rec", 0.0)
        return self


PRESETS = {
    "CL": dict(lambda_reg=0.0, lambda_rec=0.0),
    "CL+Vision": dict(use_language=False),
    "CL+Language": dict(use_vision=False),
    "CORAL": dict(),
}


def preset_hyper(preset, **overrides):
    """Hyperparameters for one ablation row; ``overrides`` win over the preset."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {tuple(PRESETS)}")
    return CoralHyper(**{**PRESETS[preset], **overrides}).validate()


@dataclass
class LossBreakdown:
    total: torch.Tensor
    L_cl: float
    L_reg: float
    L_mse_cross: float
    L_mlm_cross: float
    L_rec: float
    L_mse_self: float
    L_mlm_self: float
    lambda_reg: float
    lambda_rec: float
    tau: float
    delta: float

    def as_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "total"}
        d["total"] = float(self.total.detach())
        return d


def _reconstruction(decoders, states, h_eos, masks, hyper):
    """(mse, mlm) rebuilding ``states``' embeddings from the ``h_eos`` query."""
    zero = states.E.new_zeros(())
    target = states.E.detach() if hyper.detach_target else states.E
    mse = mlm = zero
    if "visual" in masks:
        mse = vision_reconstruction_loss(
            decoders, target, states.E, h_eos, masks["visual"], hyper.full_sequence_mse)
    if "linguistic" in masks:
        mlm = mlm_loss(decoders, states.batch.tokens, states.E, h_eos, masks["linguistic"])
    return mse, mlm


def _draw_masks(layout, hyper, generator):
    masks = {}
    if hyper.use_vision:
        masks["visual"] = apply_modality_mask(layout, "visual", hyper.delta, generator)
    if hyper.use_language:
        masks["linguistic"] = apply_modality_mask(layout, "linguistic", hyper.delta, generator)
    return masks


def coral_objective(encoder, decoders, query_inputs, positive_inputs, hyper=None, generator=None):
    """Loss breakdown for aligned query / positive batches (row i pairs with row i)."""
    hyper = (hyper or CoralHyper()).validate()
    if len(query_inputs) != len(positive_inputs):
        raise ValueError("query and positive batches must align")
    if len(query_inputs) < 2:
        raise ValueError("batch size must be >= 2 to provide in-batch negatives")
    hq = encoder.encode(list(query_inputs))
    hp = encoder.encode(list(positive_inputs))
    L_cl = info_nce(F.normalize(hq.h_eos, dim=-1), F.normalize(hp.h_eos, dim=-1), hyper.tau)
    zero = L_cl.new_zeros(())
    mse_x = mlm_x = mse_s = mlm_s = zero
    active = hyper.use_vision or hyper.use_language
    if active and (hyper.lambda_reg > 0 or hyper.lambda_rec > 0):
        masks = _draw_masks(hp.batch.layout, hyper, generator)
        if hyper.lambda_reg > 0:
            mse_x, mlm_x = _reconstruction(decoders, hp, hq.h_eos, masks, hyper)
        if hyper.lambda_rec > 0:
            mse_s, mlm_s = _reconstruction(decoders, hp, hp.h_eos, masks, hyper)
            if hyper.reconstruct_query:
                q_masks = _draw_masks(hq.batch.layout, hyper, generator)
                mse_q, mlm_q = _reconstruction(decoders, hq, hq.h_eos, q_masks, hyper)
                mse_s, mlm_s = (mse_s + mse_q) / 2, (mlm_s + mlm_q) / 2
    L_reg = mse_x + mlm_x
    L_rec = mse_s + mlm_s
    total = L_cl + hyper.lambda_reg * L_reg + hyper.lambda_rec * L_rec
    f = lambda t: float(t.detach())  # noqa: E731
    return LossBreakdown(
        total=total, L_cl=f(L_cl), L_reg=f(L_reg), L_mse_cross=f(mse_x), L_mlm_cross=f(mlm_x),
        L_rec=f(L_rec), L_mse_self=f(mse_s), L_mlm_self=f(mlm_s),
        lambda_reg=hyper.lambda_reg, lambda_rec=hyper.lambda_rec,
        tau=hyper.tau, delta=hyper.delta,
    )
