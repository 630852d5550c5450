"""Training loop, checkpoints and the finite-difference gradient audit."""

from dataclasses import asdict, dataclass, fields, replace
import hashlib
import json
import math
import struct

import numpy as np
import torch

from .encoder import Encoder, EncoderConfig, build_input
from .io import atomic_write_bytes, sha256_bytes
from .lora import LoRALinear, apply_lora
from .objective import PRESETS, CoralHyper, Decoders, coral_objective
from .validation import ConfigError, check_positive_int, check_probability, check_real

OPTIMIZER = "AdamW"
CHECKPOINT_MAGIC = b"MULTICOND-CKPT\n"
CHECKPOINT_VERSION = 1
DTYPES = {"float32": torch.float32, "float64": torch.float64}


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    global_batch: int = 64
    lr: float = 1e-5
    lora_lr: float = None
    weight_decay: float = 5e-4
    warmup_ratio: float = 0.01
    epochs: int = 1
    preset: str = "CORAL"
    input_mode: str = "Seq"
    use_lora: bool = False
    lora_r: int = 8
    lora_alpha: float = 16.0
    lora_dropout: float = 0.05
    tau: float = 0.02
    delta: float = 0.5
    lambda_reg: float = 0.1
    lambda_rec: float = 0.1
    reconstruct_query: bool = False
    full_sequence_mse: bool = False
    detach_target: bool = True
    max_grad_norm: float = 0.0
    dtype: str = "float32"
    seed: int = 0

    def validate(self):
        check_positive_int(self.global_batch, "global_batch", minimum=2)
        check_real(self.lr, "lr", 0.0)
        if self.lora_lr is not None:
            check_real(self.lora_lr, "lora_lr", 0.0)
        check_real(self.weight_decay, "weight_decay", 0.0)
        check_probability(self.warmup_ratio, "warmup_ratio")
        check_positive_int(self.epochs, "epochs")
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {tuple(PRESETS)}, got {self.preset!r}")
        if self.input_mode not in ("Seq", "Cat"):
            raise ConfigError(f"input_mode must be Seq or Cat, got {self.input_mode!r}")
        check_positive_int(self.lora_r, "lora_r")
        check_real(self.lora_alpha, "lora_alpha", 0.0, low_inclusive=False)
        check_probability(self.lora_dropout, "lora_dropout")
        check_real(self.max_grad_norm, "max_grad_norm", 0.0)
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {tuple(DTYPES)}")
        self.hyper()
        return self

    @property
    def peak_lr(self):
        if self.use_lora:
            return self.lora_lr if self.lora_lr is not None else 10 * self.lr
        return self.lr

    def hyper(self):
        base = CoralHyper(
            tau=self.tau, delta=self.delta, lambda_reg=self.lambda_reg,
            lambda_rec=self.lambda_rec, full_sequence_mse=self.full_sequence_mse,
            reconstruct_query=self.reconstruct_query, detach_target=self.detach_target,
        )
        return replace(base, **PRESETS[self.preset]).validate()


def config_hash(train_config, encoder_config):
    payload = json.dumps(
        {"train": asdict(train_config), "encoder": asdict(encoder_config), "optimizer": OPTIMIZER},
        sort_keys=True, default=list,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def lr_at(step, total_steps, peak, warmup_ratio):
    """Linear warmup from 0 to ``peak`` over ceil(warmup_ratio * total) steps, then linear decay."""
    warmup = math.ceil(warmup_ratio * total_steps)
    if step < warmup:
        return peak * step / warmup
    if total_steps <= warmup:
        return peak
    return peak * max(0.0, (total_steps - step) / (total_steps - warmup))


def build_model(encoder_config, train_config):
    dtype = DTYPES[train_config.dtype]
    encoder = Encoder(encoder_config)
    if dtype is torch.float64:
        encoder.double()
    if train_config.use_lora:
        apply_lora(encoder, train_config.lora_r, train_config.lora_alpha,
                   train_config.lora_dropout, seed=encoder_config.seed)
    decoders = Decoders(encoder)
    return encoder, decoders


def trainable_parameters(encoder, decoders):
    seen, out = set(), []
    for p in list(encoder.parameters()) + list(decoders.parameters()):
        if p.requires_grad and id(p) not in seen:
            seen.add(id(p))
            out.append(p)
    return out


class Trainer:
    """Deterministic in-batch-negative training over (query, positive) pairs.

    Batch composition, positive choice and mask draws are functions of the
    seed and the step index only, so a reloaded checkpoint resumes exactly.
    """

    def __init__(self, catalog, queries, config=None, encoder_config=None):
        self.config = config = (config or TrainConfig()).validate()
        self.encoder_config = encoder_config or EncoderConfig(
            vocab_size=catalog.vocab.size, seed=config.seed)
        self.catalog = catalog
        self.queries = list(queries)
        if not self.queries:
            raise ValueError("training set is empty")
        self.hyper = config.hyper()
        self.encoder, self.decoders = build_model(self.encoder_config, config)
        self.params = trainable_parameters(self.encoder, self.decoders)
        self.optimizer = torch.optim.AdamW(
            self.params, lr=0.0, weight_decay=config.weight_decay)
        self.mask_generator = torch.Generator().manual_seed(config.seed + 101)
        self.dropout_generator = torch.Generator().manual_seed(config.seed + 303)
        for m in self.encoder.modules():
            if isinstance(m, LoRALinear):
                m.generator = self.dropout_generator
        self.batch_size = min(config.global_batch, len(self.queries))
        if self.batch_size < 2:
            raise ValueError("need at least 2 training queries for in-batch negatives")
        self.steps_per_epoch = max(1, len(self.queries) // self.batch_size)
        self.total_steps = self.steps_per_epoch * config.epochs
        self.step_index = 0
        self.loss_curve = []
        self._inputs = {}

    def _input(self, entity, key):
        if key not in self._inputs:
            self._inputs[key] = build_input(entity, self.config.input_mode, self.catalog)
        return self._inputs[key]

    def batch_for(self, step):
        epoch, offset = divmod(step, self.steps_per_epoch)
        perm = np.random.default_rng([self.config.seed, 11, epoch]).permutation(len(self.queries))
        idx = perm[offset * self.batch_size:(offset + 1) * self.batch_size]
        pick = np.random.default_rng([self.config.seed, 12, step])
        qs = [self.queries[i] for i in idx]
        pos = [q.positives[pick.integers(len(q.positives))] for q in qs]
        return qs, pos

    def current_lr(self):
        return lr_at(self.step_index, self.total_steps, self.config.peak_lr,
                     self.config.warmup_ratio)

    def step(self):
        qs, pos = self.batch_for(self.step_index)
        q_inputs = [self._input(q, ("q", q.id)) for q in qs]
        p_inputs = [self._input(self.catalog.get(p), ("p", p)) for p in pos]
        lr = self.current_lr()
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.encoder.train()
        self.decoders.train()
        self.optimizer.zero_grad(set_to_none=True)
        loss = coral_objective(self.encoder, self.decoders, q_inputs, p_inputs,
                               self.hyper, self.mask_generator)
        if not torch.isfinite(loss.total):
            raise TrainingDiverged(f"non-finite loss at step {self.step_index}")
        loss.total.backward()
        if self.config.max_grad_norm > 0:
            torch.nn.utils.clip_grad_norm_(self.params, self.config.max_grad_norm)
        self.optimizer.step()
        record = {"step": self.step_index, "lr": lr, **loss.as_dict()}
        self.loss_curve.append(record)
        self.step_index += 1
        return record

    def run(self, steps=None, callback=None):
        end = self.total_steps if steps is None else min(self.total_steps, self.step_index + steps)
        while self.step_index < end:
            record = self.step()
            if callback is not None:
                callback(record)
        return self.loss_curve

    # -- checkpoint state --------------------------------------------------

    def tensors(self):
        out = {f"encoder/{k}": v for k, v in self.encoder.state_dict().items()}
        out.update({f"decoders/{k}": v for k, v in self.decoders.state_dict().items()})
        opt = self.optimizer.state_dict()
        for idx, state in opt["state"].items():
            for key, value in state.items():
                out[f"optim/{idx}/{key}"] = torch.as_tensor(value)
        out["rng/mask"] = self.mask_generator.get_state()
        out["rng/dropout"] = self.dropout_generator.get_state()
        return out

    def metadata(self):
        return {
            "train_config": asdict(self.config),
            "encoder_config": asdict(self.encoder_config),
            "optimizer": OPTIMIZER,
            "config_hash": config_hash(self.config, self.encoder_config),
            "step": self.step_index,
            "total_steps": self.total_steps,
            "seed": self.config.seed,
        }

    def save(self, path):
        data = dump_checkpoint(self.tensors(), self.metadata())
        atomic_write_bytes(path, data)
        return sha256_bytes(data)

    def load_tensors(self, tensors, meta):
        load_model_tensors(self.encoder, self.decoders, tensors)
        state = {}
        for name, value in tensors.items():
            if name.startswith("optim/"):
                _, idx, key = name.split("/", 2)
                state.setdefault(int(idx), {})[key] = value.clone()
        opt = self.optimizer.state_dict()
        opt["state"] = state
        self.optimizer.load_state_dict(opt)
        self.mask_generator.set_state(tensors["rng/mask"].clone())
        self.dropout_generator.set_state(tensors["rng/dropout"].clone())
        self.step_index = meta["step"]


def load_model_tensors(encoder, decoders, tensors):
    enc = {k[len("encoder/"):]: v for k, v in tensors.items() if k.startswith("encoder/")}
    dec = {k[len("decoders/"):]: v for k, v in tensors.items() if k.startswith("decoders/")}
    encoder.load_state_dict(enc)
    decoders.load_state_dict(dec)


def train(catalog, train_queries, config=None, encoder_config=None, callback=None):
    """Run the configured epochs; returns the trainer (model + optimizer state) and loss curve."""
    trainer = Trainer(catalog, train_queries, config, encoder_config)
    curve = trainer.run(callback=callback)
    return trainer, curve


# -- checkpoint file format -----------------------------------------------

def dump_checkpoint(tensors, meta):
    """Magic line, 8-byte header length, JSON header, raw little-endian tensor bytes."""
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        t = tensors[name].detach().contiguous().cpu()
        raw = t.numpy().astype(t.numpy().dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "dtype": str(t.dtype).replace("torch.", ""),
                        "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"version": CHECKPOINT_VERSION, "meta": meta, "tensors": entries},
                        sort_keys=True, default=list).encode()
    return CHECKPOINT_MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def read_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path} is not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    (n,) = struct.unpack("<Q", data[pos:pos + 8])
    header = json.loads(data[pos + 8:pos + 8 + n])
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    base = pos + 8 + n
    tensors = {}
    for e in header["tensors"]:
        dtype = getattr(torch, e["dtype"])
        buf = bytearray(data[base + e["offset"]: base + e["offset"] + e["nbytes"]])
        t = torch.frombuffer(buf, dtype=dtype) if buf else torch.empty(0, dtype=dtype)
        tensors[e["name"]] = t.reshape(e["shape"])
    return tensors, header["meta"]


def configs_from_meta(meta):
    names = {f.name for f in fields(TrainConfig)}
    train_cfg = TrainConfig(**{k: v for k, v in meta["train_config"].items() if k in names})
    return train_cfg, EncoderConfig(**meta["encoder_config"])


def load_model(path):
    """Encoder and decoders restored from a checkpoint, in eval mode."""
    tensors, meta = read_checkpoint(path)
    train_cfg, enc_cfg = configs_from_meta(meta)
    encoder, decoders = build_model(enc_cfg, train_cfg)
    load_model_tensors(encoder, decoders, tensors)
    encoder.eval()
    decoders.eval()
    return encoder, decoders, meta


def resume_trainer(path, catalog, queries):
    tensors, meta = read_checkpoint(path)
    train_cfg, enc_cfg = configs_from_meta(meta)
    trainer = Trainer(catalog, queries, train_cfg, enc_cfg)
    trainer.load_tensors(tensors, meta)
    return trainer


# -- finite-difference gradient audit -------------------------------------

@dataclass
class AuditResult:
    preset: str
    max_rel_error: float
    n_checks: int
    seconds: float

    def passed(self, tol=1e-4):
        return self.max_rel_error < tol


def _audit_batch(encoder_config, batch_size, rng):
    from .encoder import ImageSegment, InterleavedInput, TextSegment

    def tokens(n):
        return TextSegment(tuple(int(t) for t in rng.integers(24, encoder_config.vocab_size, n)))

    def image():
        return ImageSegment(rng.normal(size=encoder_config.image_dim))

    queries = [InterleavedInput((tokens(2), image(), tokens(3), image())) for _ in range(batch_size)]
    positives = [InterleavedInput((image(), tokens(int(rng.integers(3, 7)))))
                 for _ in range(batch_size)]
    return queries, positives


def gradient_audit(presets=tuple(PRESETS), d=16, n_directions=20, eps=1e-6, seed=0,
                   batch_size=4, floor=1e-3):
    """Compare autograd directional derivatives with central differences.

    Runs in float64 with the mask generator re-seeded before every loss
    evaluation, so both sides see the same masks. Directions: ``n_directions``
    random unit vectors over all trainable tensors, one random direction per
    tensor, and the zero direction. The error of one check is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor * |grad| * |v|)``;
    the floor keeps exactly-zero components (e.g. attention key biases, which
    softmax ignores) from dividing differencing round-off by ~0.
    """
    import time

    results = []
    enc_cfg = EncoderConfig(d=d, image_dim=8, n_slots=2, n_layers=1, n_heads=2,
                            vocab_size=64, max_len=32, seed=seed)
    for preset in presets:
        start = time.perf_counter()
        # a detached target makes autograd a semi-gradient that differencing cannot see
        cfg = TrainConfig(preset=preset, dtype="float64", seed=seed, detach_target=False)
        hyper = cfg.hyper()
        encoder, decoders = build_model(enc_cfg, cfg)
        encoder.train()
        decoders.train()
        params = trainable_parameters(encoder, decoders)
        queries, positives = _audit_batch(enc_cfg, batch_size, np.random.default_rng(seed))

        def loss():
            gen = torch.Generator().manual_seed(seed + 101)
            return coral_objective(encoder, decoders, queries, positives, hyper, gen).total

        for p in params:
            p.grad = None
        loss().backward()
        grads = [torch.zeros_like(p) if p.grad is None else p.grad.detach().clone() for p in params]

        rng = torch.Generator().manual_seed(seed + 202)
        directions = []
        for _ in range(n_directions):
            v = [torch.randn(p.shape, generator=rng, dtype=p.dtype) for p in params]
            norm = torch.sqrt(sum((t ** 2).sum() for t in v))
            directions.append([t / norm for t in v])
        for i, p in enumerate(params):
            v = [torch.zeros_like(q) for q in params]
            v[i] = torch.randn(p.shape, generator=rng, dtype=p.dtype)
            v[i] /= v[i].norm()
            directions.append(v)
        directions.append([torch.zeros_like(p) for p in params])

        grad_norm = float(torch.sqrt(sum((g ** 2).sum() for g in grads)))
        worst = 0.0
        with torch.no_grad():
            for v in directions:
                analytic = float(sum((g * t).sum() for g, t in zip(grads, v)))
                for p, t in zip(params, v):
                    p.add_(t, alpha=eps)
                up = float(loss())
                for p, t in zip(params, v):
                    p.add_(t, alpha=-2 * eps)
                down = float(loss())
                for p, t in zip(params, v):
                    p.add_(t, alpha=eps)
                numeric = (up - down) / (2 * eps)
                v_norm = float(torch.sqrt(sum((t ** 2).sum() for t in v)))
                scale = max(abs(analytic), abs(numeric), floor * grad_norm * v_norm)
                err = 0.0 if analytic == numeric else abs(analytic - numeric) / scale
                worst = max(worst, err)
        results.append(AuditResult(preset, worst, len(directions), time.perf_counter() - start))
    return results
