"""
Decoder-only Transducer Transformer

A small pre-LayerNorm Transformer that reads the concatenated sequence
[input symbols || <sos> || output tokens] and returns, for every output
position, the next-token log-distribution over V output tokens plus blank.

Position handling:
    - input symbols get token + absolute + relative sinusoidal embeddings;
      relative index 0 marks the symbol currently being generated;
    - <sos> and output tokens get token + absolute embeddings only.

Attention is bidirectional inside the input segment; output positions see
the whole input segment and, causally, the output prefix.

Shifts are evaluated in batch: build_lattice runs all T relative shifts of
one utterance as a batch of T sequences. Gradients are computed by a manual
reverse pass (backward_pass) in float64.
"""
import logging
from dataclasses import dataclass, field, fields
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ModelError
from .lattice import LogProbLattice, log_softmax

logger = logging.getLogger(__name__)

LN_EPS = 1e-5
MASK_VALUE = -1e9


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters (desk-scale defaults)."""
    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 64
    d_ff: int = 128
    input_vocab: int = 20
    output_vocab: int = 24
    max_len: int = 256
    seed: int = 0

    def __post_init__(self):
        for item in fields(self):
            value = getattr(self, item.name)
            if item.name != 'seed' and (not isinstance(value, (int, np.integer)) or value <= 0):
                raise ModelError(f"ModelConfig.{item.name} must be a positive integer, got {value!r}")
        if self.seed < 0:
            raise ModelError("ModelConfig.seed must be non-negative")
        if self.d_model % 2:
            raise ModelError("d_model must be even for sinusoidal embeddings")
        if self.d_model % self.n_heads:
            raise ModelError("d_model must be divisible by n_heads")

    @property
    def vbar(self) -> int:
        """Extended output vocabulary: V tokens plus blank."""
        return self.output_vocab + 1

    @property
    def blank(self) -> int:
        return self.output_vocab

    def as_tuple(self) -> Tuple[int, ...]:
        return tuple(getattr(self, item.name) for item in fields(self))


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Ordered name -> shape table of every learnable tensor."""
    d, d_ff = config.d_model, config.d_ff
    shapes: Dict[str, Tuple[int, ...]] = {
        'embed.x': (config.input_vocab, d),
        'embed.y': (config.output_vocab, d),
        'embed.sos': (d,),
    }
    for i in range(config.n_layers):
        prefix = f'layers.{i}.'
        shapes.update({
            prefix + 'ln1.gain': (d,),
            prefix + 'ln1.bias': (d,),
            prefix + 'attn.wq': (d, d),
            prefix + 'attn.bq': (d,),
            prefix + 'attn.wk': (d, d),
            prefix + 'attn.bk': (d,),
            prefix + 'attn.wv': (d, d),
            prefix + 'attn.bv': (d,),
            prefix + 'attn.wo': (d, d),
            prefix + 'attn.bo': (d,),
            prefix + 'ln2.gain': (d,),
            prefix + 'ln2.bias': (d,),
            prefix + 'ffn.w1': (d, d_ff),
            prefix + 'ffn.b1': (d_ff,),
            prefix + 'ffn.w2': (d_ff, d),
            prefix + 'ffn.b2': (d,),
        })
    shapes.update({
        'ln_f.gain': (d,),
        'ln_f.bias': (d,),
        'out.w': (d, config.vbar),
        'out.b': (config.vbar,),
    })
    return shapes


@dataclass
class ModelParams:
    """
    The full learnable parameter set, keyed by tensor name.

    Also used as the container for parameter gradients.
    """
    config: ModelConfig
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = parameter_shapes(self.config)
        if set(self.tensors) != set(expected):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ModelError(f"Parameter names do not match config (missing={missing}, extra={extra})")
        ordered = {}
        for name, shape in expected.items():
            tensor = np.asarray(self.tensors[name], dtype=np.float64)
            if tensor.shape != shape:
                raise ModelError(f"Parameter {name} has shape {tensor.shape}, expected {shape}")
            ordered[name] = tensor
        self.tensors = ordered

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def num_parameters(self) -> int:
        return int(sum(tensor.size for tensor in self.tensors.values()))

    def copy(self) -> 'ModelParams':
        return ModelParams(self.config, {name: tensor.copy() for name, tensor in self.tensors.items()})

    def zeros_like(self) -> 'ModelParams':
        return ModelParams(self.config, {name: np.zeros_like(tensor) for name, tensor in self.tensors.items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(tensor).all() for tensor in self.tensors.values())

    def global_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(tensor * tensor) for tensor in self.tensors.values())))

    def add_(self, other: 'ModelParams') -> 'ModelParams':
        """In-place accumulation, used for gradient sums."""
        for name, tensor in other.items():
            self.tensors[name] += tensor
        return self


def init_params(config: ModelConfig) -> ModelParams:
    """
    Seeded He-style scaled-uniform initialisation.

    Gains start at one and biases at zero.
    """
    rng = np.random.default_rng(config.seed)
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit('.', 1)[-1]
        if leaf == 'gain':
            tensors[name] = np.ones(shape)
        elif leaf in ('bias', 'b') or (leaf.startswith('b') and len(leaf) == 2):
            tensors[name] = np.zeros(shape)
        elif name.startswith('embed.'):
            bound = np.sqrt(3.0 / config.d_model)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        else:
            bound = np.sqrt(6.0 / shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(config, tensors)


def sinusoidal_embed(indices: Sequence[int], d_model: int) -> np.ndarray:
    """
    Interleaved sin/cos embedding of (possibly negative) position indices.

    Column 2i holds sin(pos / 10000^(2i/d)) and column 2i+1 the matching cos.
    """
    if d_model % 2:
        raise ModelError("d_model must be even for sinusoidal embeddings")
    positions = np.asarray(indices, dtype=np.float64).reshape(-1, 1)
    rates = 1.0 / np.power(10000.0, np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    angles = positions * rates
    table = np.empty((positions.shape[0], d_model))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


@dataclass(frozen=True)
class PositionPlan:
    """Absolute and relative position indices for one forward pass."""
    abs_pos_x: np.ndarray
    abs_pos_y: np.ndarray
    rel_pos_x: np.ndarray

    def __post_init__(self):
        abs_x = np.asarray(self.abs_pos_x, dtype=np.int64)
        abs_y = np.asarray(self.abs_pos_y, dtype=np.int64)
        rel_x = np.asarray(self.rel_pos_x, dtype=np.int64)
        if abs_x.size == 0 or not np.array_equal(abs_x, np.arange(abs_x.size)):
            raise ModelError("abs_pos_x must be 0, 1, 2, ...")
        if abs_y.size == 0 or not np.array_equal(abs_y, np.arange(abs_y.size)):
            raise ModelError("abs_pos_y must be 0, 1, 2, ... (0 is <sos>)")
        if rel_x.size != abs_x.size:
            raise ModelError("rel_pos_x and abs_pos_x must cover the same input positions")
        if np.any(np.diff(rel_x) != 1) or 0 not in rel_x:
            raise ModelError("rel_pos_x must step by one and contain 0")
        object.__setattr__(self, 'abs_pos_x', abs_x)
        object.__setattr__(self, 'abs_pos_y', abs_y)
        object.__setattr__(self, 'rel_pos_x', rel_x)

    @property
    def current(self) -> int:
        """Index into the input segment of the symbol at relative position 0."""
        return int(np.flatnonzero(self.rel_pos_x == 0)[0])


def make_position_plan(T_prompt: int, T: int, t: int, U_prompt: int, U_cur: int) -> PositionPlan:
    """
    Position plan with relative 0 on target symbol t, after T_prompt prompt symbols.

    Args:
        T_prompt: prompt transcription length (0 without prompt)
        T: target symbol count
        t: current shift, 0 <= t < T
        U_prompt: prompt output token count
        U_cur: output tokens emitted after the prompt so far
    """
    if not 0 <= t < T:
        raise ModelError(f"Shift t={t} outside [0, {T})")
    if T_prompt < 0 or U_prompt < 0 or U_cur < 0:
        raise ModelError("Prompt and output lengths must be non-negative")
    total = T_prompt + T
    return PositionPlan(
        abs_pos_x=np.arange(total),
        abs_pos_y=np.arange(U_prompt + U_cur + 1),
        rel_pos_x=np.arange(total) - T_prompt - t,
    )


# ---------------------------------------------------------------------------
# forward / backward building blocks
# ---------------------------------------------------------------------------

def _layer_norm(x, gain, bias):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = centered * inv_std
    return xhat * gain + bias, (xhat, inv_std)


def _layer_norm_backward(dy, cache, gain, grads, prefix):
    xhat, inv_std = cache
    grads[prefix + 'gain'] += np.sum(dy * xhat, axis=(0, 1))
    grads[prefix + 'bias'] += np.sum(dy, axis=(0, 1))
    dxhat = dy * gain
    width = xhat.shape[-1]
    return inv_std / width * (
        width * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
    )


_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def _gelu_grad(x):
    inner = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * (1.0 + inner) + 0.5 * x * (1.0 - inner ** 2) * _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)


def _split_heads(x, n_heads):
    B, L, d = x.shape
    return x.reshape(B, L, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, H * dh)


def _weight_grad(inputs, upstream):
    return inputs.reshape(-1, inputs.shape[-1]).T @ upstream.reshape(-1, upstream.shape[-1])


def attention_mask(n_inputs: int, n_outputs: int) -> np.ndarray:
    """
    Boolean (L, L) visibility matrix, L = n_inputs + n_outputs.

    Input rows see every input; output rows see every input and the output
    prefix up to and including themselves.
    """
    total = n_inputs + n_outputs
    visible = np.zeros((total, total), dtype=bool)
    visible[:, :n_inputs] = True
    visible[n_inputs:, n_inputs:] = np.tril(np.ones((n_outputs, n_outputs), dtype=bool))
    return visible


def _block_forward(params, prefix, h, mask_bias, n_heads):
    a_in, ln1 = _layer_norm(h, params[prefix + 'ln1.gain'], params[prefix + 'ln1.bias'])
    q = _split_heads(a_in @ params[prefix + 'attn.wq'] + params[prefix + 'attn.bq'], n_heads)
    k = _split_heads(a_in @ params[prefix + 'attn.wk'] + params[prefix + 'attn.bk'], n_heads)
    v = _split_heads(a_in @ params[prefix + 'attn.wv'] + params[prefix + 'attn.bv'], n_heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = q @ k.transpose(0, 1, 3, 2) * scale + mask_bias
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    context = _merge_heads(weights @ v)
    h1 = h + context @ params[prefix + 'attn.wo'] + params[prefix + 'attn.bo']

    f_in, ln2 = _layer_norm(h1, params[prefix + 'ln2.gain'], params[prefix + 'ln2.bias'])
    pre_act = f_in @ params[prefix + 'ffn.w1'] + params[prefix + 'ffn.b1']
    act = _gelu(pre_act)
    h2 = h1 + act @ params[prefix + 'ffn.w2'] + params[prefix + 'ffn.b2']
    cache = {
        'a_in': a_in, 'ln1': ln1, 'q': q, 'k': k, 'v': v, 'weights': weights,
        'context': context, 'f_in': f_in, 'ln2': ln2, 'pre_act': pre_act, 'act': act,
    }
    return h2, cache


def _block_backward(params, prefix, dh2, cache, grads, n_heads):
    # feed-forward sub-block
    grads[prefix + 'ffn.w2'] += _weight_grad(cache['act'], dh2)
    grads[prefix + 'ffn.b2'] += dh2.sum(axis=(0, 1))
    d_pre = (dh2 @ params[prefix + 'ffn.w2'].T) * _gelu_grad(cache['pre_act'])
    grads[prefix + 'ffn.w1'] += _weight_grad(cache['f_in'], d_pre)
    grads[prefix + 'ffn.b1'] += d_pre.sum(axis=(0, 1))
    d_f_in = d_pre @ params[prefix + 'ffn.w1'].T
    dh1 = dh2 + _layer_norm_backward(d_f_in, cache['ln2'], params[prefix + 'ln2.gain'], grads, prefix + 'ln2.')

    # attention sub-block
    grads[prefix + 'attn.wo'] += _weight_grad(cache['context'], dh1)
    grads[prefix + 'attn.bo'] += dh1.sum(axis=(0, 1))
    d_context = _split_heads(dh1 @ params[prefix + 'attn.wo'].T, n_heads)
    weights, q, k, v = cache['weights'], cache['q'], cache['k'], cache['v']
    d_weights = d_context @ v.transpose(0, 1, 3, 2)
    dv = weights.transpose(0, 1, 3, 2) @ d_context
    d_scores = weights * (d_weights - np.sum(d_weights * weights, axis=-1, keepdims=True))
    d_scores *= 1.0 / np.sqrt(q.shape[-1])
    dq = _merge_heads(d_scores @ k)
    dk = _merge_heads(d_scores.transpose(0, 1, 3, 2) @ q)
    dv = _merge_heads(dv)

    a_in = cache['a_in']
    d_a_in = np.zeros_like(a_in)
    for name, upstream in (('q', dq), ('k', dk), ('v', dv)):
        grads[prefix + f'attn.w{name}'] += _weight_grad(a_in, upstream)
        grads[prefix + f'attn.b{name}'] += upstream.sum(axis=(0, 1))
        d_a_in += upstream @ params[prefix + f'attn.w{name}'].T
    return dh1 + _layer_norm_backward(d_a_in, cache['ln1'], params[prefix + 'ln1.gain'], grads, prefix + 'ln1.')


@dataclass
class ForwardCache:
    """Activations kept by a forward pass for the reverse pass."""
    x_ids: np.ndarray
    y_ids: np.ndarray
    n_inputs: int
    blocks: List[dict]
    final_in: np.ndarray
    ln_f: tuple
    log_probs: np.ndarray


def _check_sequences(config: ModelConfig, x_ids, y_ids):
    x_ids = np.asarray(x_ids, dtype=np.int64).reshape(-1)
    y_ids = np.asarray(y_ids, dtype=np.int64).reshape(-1)
    if x_ids.size == 0:
        raise ModelError("Input sequence is empty")
    if x_ids.min() < 0 or x_ids.max() >= config.input_vocab:
        raise ModelError(f"Input ids must lie in [0, {config.input_vocab})")
    if y_ids.size and (y_ids.min() < 0 or y_ids.max() >= config.output_vocab):
        raise ModelError(f"Output ids must lie in [0, {config.output_vocab}); blank is not an input")
    length = x_ids.size + y_ids.size + 1
    if length > config.max_len:
        raise ModelError(f"Sequence length {length} exceeds max_len={config.max_len}")
    return x_ids, y_ids


def _forward(params: ModelParams, x_ids, y_ids, abs_x, abs_y, rel_x) -> ForwardCache:
    """
    Batched forward pass. rel_x has shape (B, T_in); every other input is shared.
    """
    config = params.config
    n_inputs = x_ids.size
    n_outputs = y_ids.size + 1
    d = config.d_model

    input_embed = params['embed.x'][x_ids] + sinusoidal_embed(abs_x, d)
    rel_embed = sinusoidal_embed(rel_x.reshape(-1), d).reshape(rel_x.shape[0], n_inputs, d)
    output_embed = np.concatenate([params['embed.sos'][None, :], params['embed.y'][y_ids]], axis=0)
    output_embed = output_embed + sinusoidal_embed(abs_y, d)

    batch = rel_x.shape[0]
    h = np.empty((batch, n_inputs + n_outputs, d))
    h[:, :n_inputs] = input_embed[None] + rel_embed
    h[:, n_inputs:] = output_embed[None]

    mask_bias = np.where(attention_mask(n_inputs, n_outputs), 0.0, MASK_VALUE)
    blocks = []
    for i in range(config.n_layers):
        h, cache = _block_forward(params, f'layers.{i}.', h, mask_bias, config.n_heads)
        blocks.append(cache)

    final, ln_f = _layer_norm(h, params['ln_f.gain'], params['ln_f.bias'])
    logits = final[:, n_inputs:] @ params['out.w'] + params['out.b']
    return ForwardCache(
        x_ids=x_ids,
        y_ids=y_ids,
        n_inputs=n_inputs,
        blocks=blocks,
        final_in=final,
        ln_f=ln_f,
        log_probs=log_softmax(logits, axis=-1),
    )


def _backward(params: ModelParams, cache: ForwardCache, grad_log_probs: np.ndarray) -> ModelParams:
    config = params.config
    grads = params.zeros_like()
    n_inputs = cache.n_inputs

    probs = np.exp(cache.log_probs)
    d_logits = grad_log_probs - probs * grad_log_probs.sum(axis=-1, keepdims=True)
    output_rows = cache.final_in[:, n_inputs:]
    grads['out.w'][...] += _weight_grad(output_rows, d_logits)
    grads['out.b'][...] += d_logits.sum(axis=(0, 1))

    d_final = np.zeros_like(cache.final_in)
    d_final[:, n_inputs:] = d_logits @ params['out.w'].T
    dh = _layer_norm_backward(d_final, cache.ln_f, params['ln_f.gain'], grads.tensors, 'ln_f.')

    for i in reversed(range(config.n_layers)):
        dh = _block_backward(params, f'layers.{i}.', dh, cache.blocks[i], grads.tensors, config.n_heads)

    np.add.at(grads['embed.x'], cache.x_ids, dh[:, :n_inputs].sum(axis=0))
    grads['embed.sos'][...] += dh[:, n_inputs].sum(axis=0)
    if cache.y_ids.size:
        np.add.at(grads['embed.y'], cache.y_ids, dh[:, n_inputs + 1:].sum(axis=0))
    return grads


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def forward_row(params: ModelParams, x_full: Sequence[int], y_so_far: Sequence[int],
                plan: PositionPlan) -> np.ndarray:
    """
    One shift of the model.

    Args:
        params: model parameters
        x_full: input ids (prompt transcription followed by target symbols)
        y_so_far: output ids after <sos> (prompt tokens followed by emitted tokens)
        plan: position indices; rel_pos_x marks the current symbol

    Returns:
        (len(y_so_far)+1) x V+1 log-distributions, one per output position
    """
    x_ids, y_ids = _check_sequences(params.config, x_full, y_so_far)
    if plan.abs_pos_x.size != x_ids.size or plan.abs_pos_y.size != y_ids.size + 1:
        raise ModelError("Position plan does not match the sequence lengths")
    cache = _forward(params, x_ids, y_ids, plan.abs_pos_x, plan.abs_pos_y, plan.rel_pos_x[None, :])
    return cache.log_probs[0]


def build_lattice_with_cache(params: ModelParams, x: Sequence[int],
                             y: Sequence[int]) -> Tuple[LogProbLattice, ForwardCache]:
    """build_lattice that also returns the activations needed by backward_from_cache."""
    x_ids, y_ids = _check_sequences(params.config, x, y)
    T = x_ids.size
    shifts = np.arange(T)
    rel_x = np.arange(T)[None, :] - shifts[:, None]
    cache = _forward(params, x_ids, y_ids, np.arange(T), np.arange(y_ids.size + 1), rel_x)
    return LogProbLattice(cache.log_probs), cache


def build_lattice(params: ModelParams, x: Sequence[int], y: Sequence[int]) -> LogProbLattice:
    """
    Stack the output rows of all T relative shifts into a T x (U+1) x V+1 lattice.
    """
    lattice, _ = build_lattice_with_cache(params, x, y)
    return lattice


def backward_from_cache(params: ModelParams, cache: ForwardCache, grad_lattice: np.ndarray) -> ModelParams:
    grad_lattice = np.asarray(grad_lattice, dtype=np.float64)
    if grad_lattice.shape != cache.log_probs.shape:
        raise ModelError(
            f"Gradient lattice shape {grad_lattice.shape} does not match {cache.log_probs.shape}"
        )
    return _backward(params, cache, grad_lattice)


def backward_pass(params: ModelParams, x: Sequence[int], y: Sequence[int],
                  grad_lattice: np.ndarray) -> ModelParams:
    """
    Parameter gradients of sum(grad_lattice * lattice) for the lattice of (x, y).

    grad_lattice normally comes from lattice.loss_and_grad; the result is then
    the gradient of the Transducer loss.
    """
    _, cache = build_lattice_with_cache(params, x, y)
    return backward_from_cache(params, cache, grad_lattice)
