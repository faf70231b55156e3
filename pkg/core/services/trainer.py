"""
Transducer Trainer

One optimizer step per batch, as in the lattice training algorithm: for every
pair build the T-shift lattice, take the Transducer loss and its gradient,
back-propagate through the model, sum over the batch, then apply one Adam
update with linear warmup and global-norm clipping.

The epoch shuffle is a pure function of (seed, epoch), and checkpoints carry
the Adam moments and step counter, so a resumed run retraces an
uninterrupted one bit for bit.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .checkpoint import checkpoint_name, load_checkpoint, save_checkpoint
from .corpus import SequencePair
from .errors import CorpusError, LatticeError, ModelError, NonFiniteLossError
from .lattice import loss_and_grad
from .model import (
    ModelConfig,
    ModelParams,
    backward_from_cache,
    build_lattice_with_cache,
    init_params,
)

logger = logging.getLogger(__name__)

LOSS_CURVE_COLUMNS = ['step', 'epoch', 'mean_loss']


@dataclass(frozen=True)
class TrainerConfig:
    """Optimizer and loop hyperparameters."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    warmup_steps: int = 100
    batch_size: int = 8
    clip_norm: float = 5.0
    checkpoint_every: int = 500
    log_every: int = 50
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1 or self.workers < 1:
            raise ValueError("batch_size and workers must be at least 1")
        if self.warmup_steps < 0 or self.checkpoint_every < 0 or self.log_every < 0:
            raise ValueError("warmup_steps, checkpoint_every and log_every must be non-negative")


@dataclass
class AdamState:
    step: int
    m: ModelParams
    v: ModelParams

    @classmethod
    def initial(cls, params: ModelParams) -> 'AdamState':
        return cls(step=0, m=params.zeros_like(), v=params.zeros_like())

    def to_tensors(self) -> dict:
        tensors = {'trainer.step': np.array(float(self.step))}
        for name in self.m:
            tensors[f'adam.m.{name}'] = self.m[name]
            tensors[f'adam.v.{name}'] = self.v[name]
        return tensors

    @classmethod
    def from_tensors(cls, params: ModelParams, tensors: dict) -> 'AdamState':
        if 'trainer.step' not in tensors:
            return cls.initial(params)
        m = {name: tensors[f'adam.m.{name}'] for name in params}
        v = {name: tensors[f'adam.v.{name}'] for name in params}
        return cls(
            step=int(tensors['trainer.step']),
            m=ModelParams(params.config, m),
            v=ModelParams(params.config, v),
        )


@dataclass(frozen=True)
class StepReport:
    step: int
    epoch: int
    mean_loss: float
    lr: float


@dataclass
class TrainingResult:
    params: ModelParams
    opt_state: AdamState
    loss_curve: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=LOSS_CURVE_COLUMNS))


def learning_rate(config: TrainerConfig, step: int) -> float:
    """Linear warmup to config.lr over warmup_steps, constant afterwards."""
    if config.warmup_steps == 0:
        return config.lr
    return config.lr * min(1.0, step / config.warmup_steps)


def adam_update(params: ModelParams, grads: ModelParams, state: AdamState,
                config: TrainerConfig) -> Tuple[ModelParams, AdamState]:
    """Clip grads to clip_norm and apply one Adam step. Inputs are left untouched."""
    norm = grads.global_norm()
    scale = config.clip_norm / norm if config.clip_norm > 0 and norm > config.clip_norm else 1.0
    step = state.step + 1
    lr = learning_rate(config, step)
    correction1 = 1.0 - config.beta1 ** step
    correction2 = 1.0 - config.beta2 ** step

    new_params, new_m, new_v = {}, {}, {}
    for name in params:
        grad = grads[name] * scale
        m = config.beta1 * state.m[name] + (1.0 - config.beta1) * grad
        v = config.beta2 * state.v[name] + (1.0 - config.beta2) * grad * grad
        update = (m / correction1) / (np.sqrt(v / correction2) + config.eps)
        new_params[name] = params[name] - lr * update
        new_m[name] = m
        new_v[name] = v
    return (
        ModelParams(params.config, new_params),
        AdamState(step=step, m=ModelParams(params.config, new_m), v=ModelParams(params.config, new_v)),
    )


def example_loss_and_grads(params: ModelParams, pair: SequencePair) -> Tuple[float, ModelParams]:
    """-log Pr(y|x) of one pair and its parameter gradients."""
    lattice, cache = build_lattice_with_cache(params, pair.x, pair.y)
    loss, grad_lattice = loss_and_grad(lattice, pair.y)
    return loss, backward_from_cache(params, cache, grad_lattice)


def train_step(params: ModelParams, batch: Sequence[SequencePair], opt_state: AdamState,
               config: TrainerConfig = TrainerConfig()) -> Tuple[ModelParams, AdamState, float]:
    """
    One optimizer step over a batch.

    Per-example gradients may be computed in a thread pool (config.workers);
    they are always summed in batch order.

    Returns:
        (new params, new optimizer state, mean loss over the batch)

    Raises:
        NonFiniteLossError: the batch loss is not finite
    """
    if not batch:
        raise ValueError("Batch must contain at least one pair")
    try:
        if config.workers > 1 and len(batch) > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(lambda pair: example_loss_and_grads(params, pair), batch))
        else:
            results = [example_loss_and_grads(params, pair) for pair in batch]
    except LatticeError as exc:
        # a well-formed model lattice only fails on NaN entries or zero total probability
        raise NonFiniteLossError(opt_state.step + 1, math.nan) from exc

    total = params.zeros_like()
    losses = []
    for loss, grads in results:
        losses.append(loss)
        total.add_(grads)
    mean_loss = float(np.mean(losses))
    if not math.isfinite(mean_loss) or not total.is_finite():
        raise NonFiniteLossError(opt_state.step + 1, mean_loss)

    new_params, new_state = adam_update(params, total, opt_state, config)
    return new_params, new_state, mean_loss


def epoch_order(n_items: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n_items)


def _save(out_dir: Optional[Path], params: ModelParams, state: AdamState, curve_rows: List[dict]):
    if out_dir is None:
        return
    path = save_checkpoint(out_dir / checkpoint_name(state.step), params, state.to_tensors())
    pd.DataFrame(curve_rows, columns=LOSS_CURVE_COLUMNS).to_csv(out_dir / 'loss.csv', index=False)
    logger.info("Checkpoint written: %s", path)


def train_loop(model_config: ModelConfig, corpus: Sequence[SequencePair], epochs: int,
               callbacks: Iterable[Callable[[StepReport], None]] = (),
               trainer_config: TrainerConfig = TrainerConfig(),
               out_dir=None, resume_from=None) -> TrainingResult:
    """
    Train for `epochs` epochs in total over shuffled batches.

    Args:
        model_config: architecture and init seed
        corpus: training pairs
        epochs: total epoch count (a resumed run continues up to it)
        callbacks: called with a StepReport after every step
        trainer_config: optimizer and loop settings
        out_dir: if given, receives ckpt-{step}.bin files and loss.csv
        resume_from: checkpoint written by an earlier train_loop

    Returns:
        TrainingResult with final params, optimizer state and the loss curve
        (a resumed run keeps the earlier rows of out_dir/loss.csv)
    """
    if not corpus:
        raise CorpusError("Training corpus is empty")
    for pair in corpus:
        if pair.T + pair.U + 1 > model_config.max_len:
            raise ModelError(f"Pair of length {pair.T + pair.U + 1} exceeds max_len={model_config.max_len}")
        pair.check_vocab(model_config.input_vocab, model_config.output_vocab)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        params, extra = load_checkpoint(resume_from, expected_config=model_config)
        state = AdamState.from_tensors(params, extra)
        logger.info("Resuming from %s at step %d", resume_from, state.step)
    else:
        params = init_params(model_config)
        state = AdamState.initial(params)

    callbacks = list(callbacks)
    curve_rows: List[dict] = []
    if resume_from is not None and out_dir is not None and (out_dir / 'loss.csv').exists():
        earlier = pd.read_csv(out_dir / 'loss.csv', float_precision='round_trip')
        curve_rows = earlier[earlier['step'] <= state.step][LOSS_CURVE_COLUMNS].to_dict('records')
    steps_per_epoch = math.ceil(len(corpus) / trainer_config.batch_size)
    if state.step == 0:
        _save(out_dir, params, state, curve_rows)

    start_epoch, offset = divmod(state.step, steps_per_epoch)
    last_saved = state.step
    for epoch in range(start_epoch, epochs):
        order = epoch_order(len(corpus), trainer_config.seed, epoch)
        first_batch = offset if epoch == start_epoch else 0
        for batch_index in range(first_batch, steps_per_epoch):
            indices = order[batch_index * trainer_config.batch_size:(batch_index + 1) * trainer_config.batch_size]
            batch = [corpus[i] for i in indices]
            params, state, mean_loss = train_step(params, batch, state, trainer_config)

            report = StepReport(step=state.step, epoch=epoch + 1, mean_loss=mean_loss,
                                lr=learning_rate(trainer_config, state.step))
            curve_rows.append({'step': report.step, 'epoch': report.epoch, 'mean_loss': report.mean_loss})
            for callback in callbacks:
                callback(report)
            if trainer_config.log_every and state.step % trainer_config.log_every == 0:
                logger.info("step %d epoch %d loss %.4f lr %.2e",
                            report.step, report.epoch, report.mean_loss, report.lr)
            if trainer_config.checkpoint_every and state.step % trainer_config.checkpoint_every == 0:
                _save(out_dir, params, state, curve_rows)
                last_saved = state.step

    if state.step != last_saved:
        _save(out_dir, params, state, curve_rows)

    return TrainingResult(
        params=params,
        opt_state=state,
        loss_curve=pd.DataFrame(curve_rows, columns=LOSS_CURVE_COLUMNS),
    )


def epoch_mean_losses(loss_curve: pd.DataFrame) -> pd.Series:
    """Mean of the per-step losses for every epoch."""
    return loss_curve.groupby('epoch')['mean_loss'].mean()
