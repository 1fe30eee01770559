"""Training loop: warm-up on the plain classification loss, k-means bank
initialization, per-epoch adversarial bank refresh, and joint optimization of

    total = cls_loss + lambda_aug * aug_loss

where the classification loss feeds the duplicated feature [z; z] to the
two-slot head and the augmentation loss feeds [z; memory readout] with a
mixed soft label. Gradients are exact and hand-derived; the augmentation
loss never back-propagates into the encoder through the memory read (the
read input is treated as a stopped copy of z).

Ablation modes
--------------
full            everything on.
no_aug_loss     drop the augmentation loss entirely: plain ERM, no bank is
                created and inference ignores memory. Setting lambda_aug to
                zero behaves identically by construction.
no_adversarial  bank refresh inserts raw encoder features instead of
                Langevin-ascended ones.
no_concat       single-slot head of width d_z; the augmentation loss
                classifies the memory readout alone, inference with memory
                classifies the readout.
no_test_memory  train exactly like full, but evaluate with duplicated
                features (memory unused at test time).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .numcore import (
    ContractViolation,
    NumericFailure,
    RngStream,
    as_vector,
    check_prob_vector,
    round_count,
    safe_log,
    softmax,
)
from .model import (
    EncoderParams,
    HeadParams,
    OptimizerState,
    ProjectionParams,
    encode,
    encoder_backward,
    head_backward,
    head_forward,
    init_encoder,
    init_head,
    init_projections,
    linear_backward,
    linear_forward,
    param_dict,
    sgd_step,
)
from .membank import (
    LangevinConfig,
    MemoryBank,
    attention_backward,
    attention_read,
    init_bank,
    langevin_generate,
    update_bank,
    validate_bank,
    validate_langevin,
)
from .data import LabeledDataset

ABLATIONS = ("full", "no_aug_loss", "no_adversarial", "no_concat", "no_test_memory")

# RngStream keys for the independent phases of a run. Batch shuffling and
# memory maintenance use separate streams so disabling the memory path does
# not perturb batch order.
_KEY_INIT = 1
_KEY_SHUFFLE = 2
_KEY_MEMORY = 3


@dataclass
class TrainConfig:
    lambda_aug: float = 1.0
    beta: float = 0.5
    gamma: float = 0.7
    r_m: float = 0.1
    warmup_epochs: int = 2
    epochs: int = 30
    batch_size: int = 32
    ablation: str = "full"
    langevin: LangevinConfig = field(default_factory=LangevinConfig)
    kmeans_k: int = 0  # 0 -> max(n_classes, 8)
    seed: int = 0
    label_grad_through_alpha: bool = True


@dataclass
class ModelDims:
    d_z: int = 8
    d_h: int = 8
    hidden: tuple = (24, 24)
    activation: str = "tanh"


@dataclass
class OptimizerSettings:
    learning_rate: float = 0.05
    momentum: float = 0.9
    schedule: str = "constant"
    decay_epoch: int | None = None
    decay_factor: float = 0.1


@dataclass
class EpochMetrics:
    epoch: int
    loss_cls: float
    loss_aug: float
    train_acc: float
    test_acc: dict
    wall_ms: float


@dataclass
class TrainState:
    encoder: EncoderParams
    head: HeadParams
    proj: ProjectionParams
    bank: MemoryBank | None
    opt: OptimizerState
    rng_shuffle: RngStream
    rng_memory: RngStream
    warmup_done: int = 0
    epochs_done: int = 0

    @property
    def passes_done(self) -> int:
        return self.warmup_done + self.epochs_done


def validate_train_config(cfg: TrainConfig) -> None:
    if cfg.lambda_aug < 0:
        raise ContractViolation("lambda_aug must be >= 0")
    if not 0.0 <= cfg.beta <= 1.0:
        raise ContractViolation("beta must lie in [0, 1]")
    if not 0.0 < cfg.gamma <= 1.0:
        raise ContractViolation("gamma must lie in (0, 1]")
    if not 0.0 < cfg.r_m <= 1.0:
        raise ContractViolation("r_m must lie in (0, 1]")
    if cfg.warmup_epochs < 0 or cfg.epochs < 0:
        raise ContractViolation("epoch counts must be >= 0")
    if cfg.batch_size < 1:
        raise ContractViolation("batch_size must be >= 1")
    if cfg.ablation not in ABLATIONS:
        raise ContractViolation(f"unknown ablation {cfg.ablation!r}")
    if cfg.kmeans_k < 0:
        raise ContractViolation("kmeans_k must be >= 0")
    validate_langevin(cfg.langevin)


def augmentation_active(cfg: TrainConfig) -> bool:
    """The memory path exists only when the augmentation loss can act; with
    lambda_aug = 0 the run is plain ERM, identical to the no_aug_loss mode."""
    return cfg.ablation != "no_aug_loss" and cfg.lambda_aug > 0.0


def mix_labels(y, alpha, bank_labels, beta: float) -> np.ndarray:
    """Soft target beta * y + (1 - beta) * sum_i alpha_i y_i."""
    yy = check_prob_vector(y, "instance label")
    aa = check_prob_vector(alpha, "attention weights")
    lbl = np.asarray(bank_labels, dtype=np.float64)
    if not 0.0 <= beta <= 1.0:
        raise ContractViolation("beta must lie in [0, 1]")
    if lbl.shape != (aa.shape[0], yy.shape[0]):
        raise ContractViolation("bank labels shape does not match alpha / label")
    return beta * yy + (1.0 - beta) * (aa @ lbl)


def loss_cls(x, y, enc: EncoderParams, head: HeadParams):
    """Duplicated-feature classification loss with exact gradients.

    Returns (loss, grads, logits); grads covers encoder and head tensors.
    """
    yy = check_prob_vector(y, "instance label")
    z, tape = encode(enc, x)
    if head.in_dim == z.shape[0]:  # single-slot head (no_concat mode)
        logits = linear_forward(head, z)
        p = softmax(logits)
        d_logits = p - yy
        head_grads, d_z = linear_backward(head, z, d_logits)
        grads = {**encoder_backward(enc, tape, d_z), **head_grads}
    else:
        logits = head_forward(head, z, z)
        p = softmax(logits)
        d_logits = p - yy
        head_grads, d_left, d_right = head_backward(head, z, z, d_logits)
        grads = {**encoder_backward(enc, tape, d_left + d_right), **head_grads}
    loss = float(-(yy * safe_log(p)).sum())
    return loss, grads, logits


def loss_aug(
    x,
    y,
    enc: EncoderParams,
    head: HeadParams,
    proj: ProjectionParams,
    bank: MemoryBank,
    beta: float,
    label_grad_through_alpha: bool = True,
):
    """Memory-augmented loss with exact gradients.

    The encoder gradient flows only through the left (raw feature) slot;
    the attention input is a stopped copy of z, and bank features are
    constants. Projection gradients include both the readout path and, when
    ``label_grad_through_alpha``, the mixed-label path.
    """
    if bank is None:
        raise ContractViolation("augmentation loss requires an initialized bank")
    yy = check_prob_vector(y, "instance label")
    z, tape = encode(enc, x)
    readout = attention_read(z, bank, proj)
    y_mix = mix_labels(yy, readout.alpha, bank.labels, beta)

    if head.in_dim == z.shape[0]:  # no_concat: classify the readout alone
        logits = linear_forward(head, readout.augmenting)
        p = softmax(logits)
        d_logits = p - y_mix
        head_grads, d_aug = linear_backward(head, readout.augmenting, d_logits)
        enc_grads = encoder_backward(enc, tape, np.zeros(z.shape[0]))
    else:
        logits = head_forward(head, z, readout.augmenting)
        p = softmax(logits)
        d_logits = p - y_mix
        head_grads, d_left, d_aug = head_backward(head, z, readout.augmenting, d_logits)
        enc_grads = encoder_backward(enc, tape, d_left)

    d_alpha_direct = None
    if label_grad_through_alpha and beta < 1.0:
        d_alpha_direct = (1.0 - beta) * (bank.labels @ (-safe_log(p)))
    d_wq, d_wk = attention_backward(readout, z, bank, proj, d_aug, d_alpha_direct)
    loss = float(-(y_mix * safe_log(p)).sum())
    grads = {**enc_grads, **head_grads, "proj.w_query": d_wq, "proj.w_key": d_wk}
    return loss, grads, logits


def predict(x, enc: EncoderParams, head: HeadParams, proj: ProjectionParams,
            bank: MemoryBank | None, use_memory: bool):
    """Class index (argmax, ties to the lowest index) and logits."""
    z, _ = encode(enc, x)
    narrow = head.in_dim == z.shape[0]
    if use_memory:
        if bank is None:
            raise ContractViolation("memory-backed prediction requires a bank")
        readout = attention_read(z, bank, proj)
        logits = linear_forward(head, readout.augmenting) if narrow \
            else head_forward(head, z, readout.augmenting)
    else:
        logits = linear_forward(head, z) if narrow else head_forward(head, z, z)
    return int(np.argmax(logits)), logits


def evaluate_accuracy(dataset: LabeledDataset, enc, head, proj, bank, use_memory: bool) -> float:
    truth = dataset.class_indices()
    hits = 0
    for i in range(dataset.n):
        cls, _ = predict(dataset.inputs[i], enc, head, proj, bank, use_memory)
        hits += int(cls == truth[i])
    return hits / dataset.n


def _zero_grads(params: dict) -> dict:
    return {name: np.zeros_like(arr) for name, arr in params.items()}


def _run_pass(
    train: LabeledDataset,
    tests: list,
    state: TrainState,
    cfg: TrainConfig,
    aug_on: bool,
    eval_with_memory: bool,
    epoch_number: int,
) -> EpochMetrics:
    """One shuffled pass over the training set with per-batch updates."""
    t0 = time.perf_counter()
    enc, head, proj, bank = state.encoder, state.head, state.proj, state.bank
    params = param_dict(enc, head, proj)
    state.opt.epoch = state.passes_done
    n = train.n
    order = state.rng_shuffle.shuffle(n)
    truth = train.class_indices()

    cls_sum = 0.0
    aug_sum = 0.0
    hits = 0
    for b, start in enumerate(range(0, n, cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        batch_grads = _zero_grads(params)
        batch_loss = 0.0
        for i in idx:
            l_c, g_c, logits = loss_cls(train.inputs[i], train.labels[i], enc, head)
            cls_sum += l_c
            batch_loss += l_c
            hits += int(int(np.argmax(logits)) == truth[i])
            for name, g in g_c.items():
                batch_grads[name] += g
            if aug_on:
                l_a, g_a, _ = loss_aug(
                    train.inputs[i], train.labels[i], enc, head, proj, bank,
                    cfg.beta, cfg.label_grad_through_alpha,
                )
                aug_sum += l_a
                batch_loss += cfg.lambda_aug * l_a
                for name, g in g_a.items():
                    batch_grads[name] += cfg.lambda_aug * g
        if not np.isfinite(batch_loss):
            raise NumericFailure(f"non-finite loss in batch {b} of epoch {epoch_number}")
        scale = 1.0 / len(idx)
        sgd_step(params, {k: v * scale for k, v in batch_grads.items()}, state.opt)

    test_acc = {
        ds.name: evaluate_accuracy(ds, enc, head, proj, bank, eval_with_memory)
        for ds in tests
    }
    return EpochMetrics(
        epoch=epoch_number,
        loss_cls=cls_sum / n,
        loss_aug=aug_sum / n,
        train_acc=hits / n,
        test_acc=test_acc,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )


def _encode_all(train: LabeledDataset, enc: EncoderParams) -> np.ndarray:
    return np.stack([encode(enc, train.inputs[i])[0] for i in range(train.n)])


def _initial_bank(train: LabeledDataset, state: TrainState, cfg: TrainConfig) -> MemoryBank:
    n_mem = round_count(cfg.r_m * train.n)
    if n_mem < 1:
        raise ContractViolation(f"r_m={cfg.r_m} gives an empty bank for {train.n} instances")
    k = cfg.kmeans_k if cfg.kmeans_k > 0 else max(train.n_classes, 8)
    k = min(k, train.n)
    features = _encode_all(train, state.encoder)
    return init_bank(features, train.labels, k, n_mem, state.rng_memory)


def _refresh_bank(train: LabeledDataset, state: TrainState, cfg: TrainConfig) -> None:
    """Per-epoch adversarial refresh: Langevin-ascend freshly encoded
    features from a random training subset, then evict-and-fill."""
    bank = state.bank
    r = round_count(cfg.gamma * bank.size)
    if r == 0:
        return
    src = state.rng_memory.sample_without_replacement(train.n, r)
    fresh_x = np.empty((r, bank.d_feature))
    for j, i in enumerate(src):
        z0, _ = encode(state.encoder, train.inputs[i])
        if cfg.ablation == "no_adversarial":
            fresh_x[j] = z0
        else:
            fresh_x[j] = langevin_generate(
                z0, train.labels[i], state.head, cfg.langevin, state.rng_memory
            )
    state.bank = update_bank(
        bank, fresh_x, train.labels[src], state.head, cfg.gamma, state.rng_memory
    )


def init_state(
    train: LabeledDataset,
    cfg: TrainConfig,
    dims: ModelDims,
    opt_settings: OptimizerSettings,
) -> TrainState:
    validate_train_config(cfg)
    train.validate()
    rng_init = RngStream(cfg.seed, key=_KEY_INIT)
    enc = init_encoder([train.d_x, *dims.hidden, dims.d_z], rng_init, dims.activation)
    head_width = dims.d_z if cfg.ablation == "no_concat" else 2 * dims.d_z
    head = init_head(train.n_classes, head_width, rng_init)
    proj = init_projections(dims.d_h, dims.d_z, rng_init)
    opt = OptimizerState(
        base_lr=opt_settings.learning_rate,
        momentum=opt_settings.momentum,
        schedule=opt_settings.schedule,
        decay_epoch=opt_settings.decay_epoch,
        decay_factor=opt_settings.decay_factor,
        total_epochs=cfg.warmup_epochs + cfg.epochs,
    )
    return TrainState(
        encoder=enc, head=head, proj=proj, bank=None, opt=opt,
        rng_shuffle=RngStream(cfg.seed, key=_KEY_SHUFFLE),
        rng_memory=RngStream(cfg.seed, key=_KEY_MEMORY),
    )


def continue_training(
    train: LabeledDataset,
    tests: list,
    state: TrainState,
    cfg: TrainConfig,
    n_epochs: int,
    on_epoch=None,
    on_bank_refresh=None,
) -> list:
    """Run ``n_epochs`` post-warm-up epochs from the current state. Used both
    by :func:`run_training` and to resume a restored checkpoint; metric rows
    continue the original epoch numbering."""
    aug_on = augmentation_active(cfg)
    expected_size = state.bank.size if state.bank is not None else None
    rows = []
    for _ in range(n_epochs):
        if aug_on:
            old_bank = state.bank
            _refresh_bank(train, state, cfg)
            if state.bank.size != expected_size:
                raise ContractViolation("bank size changed during refresh")
            validate_bank(state.bank)
            if on_bank_refresh is not None:
                on_bank_refresh(old_bank, state.bank, state.head)
        metrics = _run_pass(
            train, tests, state, cfg,
            aug_on=aug_on,
            eval_with_memory=aug_on and cfg.ablation != "no_test_memory",
            epoch_number=state.passes_done + 1,
        )
        state.epochs_done += 1
        rows.append(metrics)
        if on_epoch is not None:
            on_epoch(state, metrics)
    return rows


def run_training(
    train: LabeledDataset,
    tests: list,
    cfg: TrainConfig,
    dims: ModelDims | None = None,
    opt_settings: OptimizerSettings | None = None,
    on_epoch=None,
    on_bank_refresh=None,
) -> tuple[TrainState, list]:
    """Full schedule: warm-up epochs on the classification loss alone, bank
    initialization from clustered warm features, then the main epochs with
    per-epoch adversarial refresh."""
    dims = dims or ModelDims()
    opt_settings = opt_settings or OptimizerSettings()
    state = init_state(train, cfg, dims, opt_settings)
    aug_on = augmentation_active(cfg)
    if aug_on:  # fail before training, not after warm-up
        n_mem = round_count(cfg.r_m * train.n)
        if n_mem < 1 or n_mem > train.n:
            raise ContractViolation(f"r_m={cfg.r_m} is infeasible for {train.n} instances")

    history = []
    for _ in range(cfg.warmup_epochs):
        metrics = _run_pass(
            train, tests, state, cfg,
            aug_on=False, eval_with_memory=False,
            epoch_number=state.passes_done + 1,
        )
        state.warmup_done += 1
        history.append(metrics)
        if on_epoch is not None:
            on_epoch(state, metrics)
    if aug_on:
        state.bank = _initial_bank(train, state, cfg)
        validate_bank(state.bank)
    history.extend(
        continue_training(train, tests, state, cfg, cfg.epochs, on_epoch, on_bank_refresh)
    )
    return state, history
