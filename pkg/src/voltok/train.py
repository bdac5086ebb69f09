"""Three-stage training: composite loss, adversarial game, Adam with global
gradient-norm clipping, stage transitions, and bit-exact checkpointing.

Stage semantics:
  * s1 - end-to-end on single slices alternated with 9-slice subvolumes,
         one-shot forward.
  * s2 - overlapping-window (tiled) forward on long segments; gradients flow
         through every window's encoder pass and a single decoder pass.
  * s3 - same forward, but the encoder is frozen: its parameters and
         optimizer moments are bit-identical before and after the stage.

The discriminator is freshly reinitialized (with fresh moments) at the start
of every stage, and generator/discriminator updates alternate strictly 1:1.
Per-iteration RNG is derived from (seed, stage, iteration), so a resumed run
replays the exact remaining iterations.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .codec import Codec, CodecConfig, discriminate
from .errors import (DataShapeMismatch, MalformedHeader, NonFiniteLoss,
                     ShapeMismatch)
from .haar import PAD_CAUSAL_REPLICATE, haar_forward
from .lfq import entropy_loss, quantize, vq_loss
from .tape import Tensor, absolute, add, affine, mean_all, softplus, sub
from .tiling import reconstruct_tensor, window_latents
from .volume import DOMAIN_NORMALIZED, Volume

STAGES = ("s1", "s2", "s3")
_CKPT_MAGIC = "VCKPT1"


@dataclass
class StageConfig:
    stage: str
    iters: int
    batch: int = 1
    seq_len: int = 9
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    clip_norm: float = 0.5
    lambda_adv: float = 0.1
    adv_start_iter: int = 2000
    vq_beta: float = 0.25
    entropy_weight: float = 0.1

    def __post_init__(self):
        if self.stage not in STAGES:
            raise DataShapeMismatch(f"unknown stage {self.stage!r}")
        if self.stage == "s1":
            if self.seq_len not in (1, 9):
                raise DataShapeMismatch("s1 needs seq_len of 1 or 9")
        else:
            if self.seq_len < 9 or self.seq_len % 8 != 1:
                raise DataShapeMismatch(
                    f"{self.stage} needs seq_len = 1 mod 8 and >= 9, got {self.seq_len}")
            if self.batch != 1:
                raise DataShapeMismatch(f"{self.stage} uses batch=1")


class Adam:
    """Adam with lazily created per-parameter moments keyed by name.

    Moments of parameters that are not updated in a given step (e.g. a frozen
    encoder in s3) are left untouched, including their step counters.
    """

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, named_params, lr: float, beta1: float, beta2: float,
             eps: float, clip_norm: float) -> float:
        """Clip the global grad norm, then update; returns the pre-clip norm."""
        grads = []
        for name, p in named_params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            grads.append((name, p, g))
        norm = math.sqrt(sum(float(np.vdot(g, g)) for _, _, g in grads))
        scale = 1.0
        if clip_norm > 0 and norm > clip_norm:
            scale = clip_norm / norm
        for name, p, g in grads:
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
                self.t[name] = 0
            g = g * scale if scale != 1.0 else g
            self.t[name] += 1
            t = self.t[name]
            m = self.m[name]
            v = self.v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
        return norm


@dataclass
class TrainState:
    codec: Codec
    opt_g: Adam
    opt_d: Adam
    stage: str = "s1"
    iter: int = 0
    seed: int = 0

    def stage_index(self) -> int:
        return STAGES.index(self.stage) + 1


def new_train_state(cfg: CodecConfig, seed: int = 0) -> TrainState:
    return TrainState(codec=Codec(cfg, seed=seed), opt_g=Adam(), opt_d=Adam(),
                      stage="s1", iter=0, seed=int(seed))


# -- losses --------------------------------------------------------------------

def adversarial_gen_loss(disc_logits: Tensor) -> Tensor:
    """Non-saturating generator objective: mean over patches of -log sigma(l)."""
    return mean_all(softplus(affine(disc_logits, -1.0)))


def total_loss(x_data: np.ndarray, x_hat: Tensor, y: Tensor, e: Tensor,
               disc_logits: Tensor | None, lambda_adv: float,
               vq_beta: float, entropy_weight: float) -> tuple[Tensor, dict]:
    """Composite objective L_rec + lambda_adv*L_adv + L_vq + w*L_entropy.

    L_rec is the voxel-mean L1 between the CT-domain input and
    reconstruction; L_adv is applied on CT-domain volumes as well.
    """
    if x_hat.data.shape != x_data.shape:
        raise ShapeMismatch(
            f"reconstruction {x_hat.data.shape} vs input {x_data.shape}")
    l_rec = mean_all(absolute(sub(x_hat, Tensor(np.asarray(x_data, dtype=x_hat.data.dtype)))))
    l_vq = vq_loss(y, e, vq_beta)
    l_ent = entropy_loss(y)
    total = l_rec
    components = {"L_rec": float(l_rec.data), "L_vq": float(l_vq.data),
                  "L_entropy": float(l_ent.data), "L_adv": 0.0}
    if disc_logits is not None and lambda_adv > 0:
        l_adv = adversarial_gen_loss(disc_logits)
        components["L_adv"] = float(l_adv.data)
        total = _axpy(total, l_adv, lambda_adv)
    total = _axpy(total, l_vq, 1.0)
    if entropy_weight > 0:
        total = _axpy(total, l_ent, entropy_weight)
    return total, components


def _axpy(acc: Tensor, term: Tensor, weight: float) -> Tensor:
    return add(acc, affine(term, weight)) if weight != 1.0 else add(acc, term)


def disc_loss_terms(codec: Codec, real: np.ndarray, fake: np.ndarray) -> Tensor:
    """BCE-with-logits, patch-averaged: -log sigma(D(real)) - log(1-sigma(D(fake)))."""
    lr_ = discriminate(codec, real)
    lf_ = discriminate(codec, fake)
    return _axpy(mean_all(softplus(affine(lr_, -1.0))),
                 mean_all(softplus(lf_)), 1.0)


def discriminator_step(state: TrainState, cfg: StageConfig,
                       real: np.ndarray, fake: np.ndarray) -> float:
    """One optimizer step on the discriminator; `fake` must be detached data."""
    disc_params = state.codec.named_params(parts=("disc",))
    for _, p in disc_params:
        p.grad = None
        p.requires_grad = True
    loss = disc_loss_terms(state.codec, real, fake)
    loss.backward()
    state.opt_d.step(disc_params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
                     cfg.clip_norm)
    return float(loss.data)


# -- forward pass ----------------------------------------------------------------

def codec_forward(codec: Codec, vol_data: np.ndarray, tiled: bool):
    """Differentiable volume -> tokens -> reconstruction pipeline.

    Returns (x_hat Tensor of the input's shape, retained latents y, their
    +-1 expansions e, packed TokenGrid).
    """
    if tiled:
        y, e, grid = window_latents(codec, vol_data)
    else:
        w = haar_forward(vol_data, PAD_CAUSAL_REPLICATE)
        y = codec.encoder(Tensor(np.asarray(w.data, dtype=codec.dtype)))
        grid, e = quantize(y, codec.cfg.d)
        grid.config_id = codec.config_id
    x_hat = reconstruct_tensor(codec, e)
    return x_hat, y, e, grid


# -- data sampling ---------------------------------------------------------------

class VolumeDataset:
    """Fixed pool of normalized volumes with deterministic segment sampling."""

    def __init__(self, volumes: list[Volume]):
        if not volumes:
            raise DataShapeMismatch("dataset is empty")
        for v in volumes:
            if v.domain != DOMAIN_NORMALIZED:
                raise DataShapeMismatch("training volumes must be normalized")
        self.volumes = volumes

    def sample(self, rng: np.random.Generator, seq_len: int) -> np.ndarray:
        v = self.volumes[int(rng.integers(len(self.volumes)))]
        D = v.data.shape[0]
        if D < seq_len:
            raise DataShapeMismatch(
                f"volume depth {D} shorter than requested segment {seq_len}")
        start = int(rng.integers(D - seq_len + 1))
        return v.data[start:start + seq_len]


# -- stage loop ------------------------------------------------------------------

def _set_requires_grad(named_params, flag: bool) -> None:
    for _, p in named_params:
        p.requires_grad = flag
        p.grad = None


def train_stage(state: TrainState, cfg: StageConfig, data: VolumeDataset,
                log_fn=None, checkpoint_fn=None, checkpoint_every: int = 0,
                halt_after: int | None = None) -> TrainState:
    """Run (or resume) one curriculum stage in place."""
    state.stage = cfg.stage
    if state.iter == 0:
        state.codec.reinit_discriminator(
            np.random.SeedSequence([state.seed, state.stage_index()]).generate_state(1)[0])
        state.opt_d = Adam()

    enc_params = state.codec.named_params(parts=("encoder",))
    dec_params = state.codec.named_params(parts=("decoder",))
    disc_params = state.codec.named_params(parts=("disc",))
    frozen_encoder = cfg.stage == "s3"
    gen_params = dec_params if frozen_encoder else enc_params + dec_params
    tiled = cfg.stage != "s1"

    for it in range(state.iter, cfg.iters):
        rng = np.random.default_rng(
            np.random.SeedSequence([state.seed, state.stage_index(), it]))
        if cfg.stage == "s1" and cfg.seq_len == 9:
            seq_len = 1 if it % 2 == 0 else 9
        else:
            seq_len = cfg.seq_len

        _set_requires_grad(enc_params, not frozen_encoder)
        _set_requires_grad(dec_params, True)
        _set_requires_grad(disc_params, False)

        use_adv = cfg.lambda_adv > 0 and it >= cfg.adv_start_iter
        samples, fakes = [], []
        agg = {"L_rec": 0.0, "L_adv": 0.0, "L_vq": 0.0, "L_entropy": 0.0}
        loss_val = 0.0
        inv_b = 1.0 / cfg.batch
        for _ in range(cfg.batch):
            x = data.sample(rng, seq_len)
            x_hat, y, e, _ = codec_forward(state.codec, x, tiled)
            logits = discriminate(state.codec, x_hat) if use_adv else None
            loss, comp = total_loss(x, x_hat, y, e, logits, cfg.lambda_adv,
                                    cfg.vq_beta, cfg.entropy_weight)
            loss.backward(seed=np.asarray(inv_b, dtype=loss.data.dtype))
            loss_val += float(loss.data) * inv_b
            for k in agg:
                agg[k] += comp[k] * inv_b
            samples.append(x)
            fakes.append(x_hat.data.copy())

        if not math.isfinite(loss_val):
            raise NonFiniteLoss(
                f"non-finite loss at {cfg.stage} iteration {it}",
                diagnostics={"stage": cfg.stage, "iter": it, **agg})
        grad_norm = state.opt_g.step(gen_params, cfg.lr, cfg.beta1, cfg.beta2,
                                     cfg.eps, cfg.clip_norm)
        if not math.isfinite(grad_norm):
            raise NonFiniteLoss(
                f"non-finite gradient at {cfg.stage} iteration {it}",
                diagnostics={"stage": cfg.stage, "iter": it, "grad_norm": grad_norm})

        # strict 1:1 alternation; fakes are detached copies
        d_loss = 0.0
        for x, fake in zip(samples, fakes):
            d_loss += discriminator_step(state, cfg, x, fake) * inv_b
        _set_requires_grad(disc_params, False)

        state.iter = it + 1
        if log_fn is not None:
            log_fn({"stage": cfg.stage, "iter": state.iter, "loss": loss_val,
                    **{k: agg[k] for k in ("L_rec", "L_adv", "L_vq", "L_entropy")},
                    "grad_norm": grad_norm, "D_loss": d_loss})
        if checkpoint_fn is not None and checkpoint_every > 0 \
                and state.iter % checkpoint_every == 0:
            checkpoint_fn(state)
        if halt_after is not None and state.iter >= halt_after:
            return state

    return state


# -- checkpointing ---------------------------------------------------------------

def save_checkpoint(state: TrainState, path: str | os.PathLike) -> None:
    """Manifest line + flat little-endian float32 parameter/moment vectors."""
    params = state.codec.named_params()
    names = [n for n, _ in params]
    manifest = {
        "codec": asdict(state.codec.cfg),
        "stage": state.stage,
        "iter": state.iter,
        "seed": state.seed,
        "params": [{"name": n, "shape": list(p.data.shape)} for n, p in params],
        "opt_g": {"t": state.opt_g.t, "names": sorted(state.opt_g.m)},
        "opt_d": {"t": state.opt_d.t, "names": sorted(state.opt_d.m)},
    }
    chunks = [np.ascontiguousarray(p.data, dtype="<f4").ravel() for _, p in params]
    for opt_key, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        for n in manifest[opt_key]["names"]:
            chunks.append(np.ascontiguousarray(opt.m[n], dtype="<f4").ravel())
            chunks.append(np.ascontiguousarray(opt.v[n], dtype="<f4").ravel())
    header = _CKPT_MAGIC + " " + json.dumps(manifest, separators=(",", ":")) + "\n"
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        if chunks:
            f.write(np.concatenate(chunks).tobytes())


def load_checkpoint(path: str | os.PathLike) -> TrainState:
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    header = raw[:nl].decode("utf-8", "replace") if nl > 0 else ""
    if not header.startswith(_CKPT_MAGIC + " "):
        raise MalformedHeader(f"{path}: not a {_CKPT_MAGIC} checkpoint")
    manifest = json.loads(header[len(_CKPT_MAGIC) + 1:])
    payload = np.frombuffer(raw[nl + 1:], dtype="<f4")

    cfg = CodecConfig(**manifest["codec"])
    state = new_train_state(cfg, seed=manifest["seed"])
    state.stage = manifest["stage"]
    state.iter = int(manifest["iter"])

    params = dict(state.codec.named_params())
    offset = 0

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape)) if shape else 1
        out = payload[offset:offset + n].reshape(shape).astype(np.float32)
        offset += n
        return out

    for entry in manifest["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in params or params[name].data.shape != shape:
            raise MalformedHeader(f"{path}: parameter {name} does not match config")
        params[name].data = take(shape).copy()
    for opt, key in ((state.opt_g, "opt_g"), (state.opt_d, "opt_d")):
        opt.t = {k: int(v) for k, v in manifest[key]["t"].items()}
        for n in manifest[key]["names"]:
            shape = params[n].data.shape
            opt.m[n] = take(shape).copy()
            opt.v[n] = take(shape).copy()
    if offset != payload.size:
        raise MalformedHeader(f"{path}: payload size mismatch")
    return state
