# This file is part of pyuserid.
#
# Copyright (C) 2022 pyuserid developers
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.

import json
import math
import struct
from collections import OrderedDict
from enum import Enum
from typing import Dict, List, Optional, Tuple

import attr
import numpy as np

from pyuserid.augment import AugmentedSample
from pyuserid.autodiff import Tape, Tensor, add, backward, concat, cross_entropy, embedding_lookup, gelu, \
    layer_norm, matmul, mean, scale, softmax, transpose
from pyuserid.tokenizer import CLS_ID

CHECKPOINT_MAGIC = b"PYUSERID-CKPT-1\n"
INIT_STD = 0.02


class Mode(Enum):
    TIED = "Tied"
    UNTIED = "Untied"
    PREFIX = "Prefix"


def _positive(instance, attribute, value):
    if value < 1:
        raise ValueError(f"{attribute.name} must be positive, got {value}")


@attr.s(frozen=True)
class ModelConfig:
    d_model = attr.ib(default=32, validator=[attr.validators.instance_of(int), _positive])
    n_heads = attr.ib(default=2, validator=[attr.validators.instance_of(int), _positive])
    n_layers = attr.ib(default=2, validator=attr.validators.instance_of(int))
    vocab_size = attr.ib(default=0, validator=attr.validators.instance_of(int))
    n_classes = attr.ib(default=2, validator=[attr.validators.instance_of(int), _positive])
    max_seq_len = attr.ib(default=64, validator=attr.validators.instance_of(int))
    mode = attr.ib(default=Mode.TIED, converter=Mode)
    user_emb_len = attr.ib(default=0, validator=attr.validators.instance_of(int))
    prefix_len = attr.ib(default=4, validator=attr.validators.instance_of(int))
    users = attr.ib(default=(), converter=tuple)
    seed = attr.ib(default=0, validator=attr.validators.instance_of(int))
    ff_mult = attr.ib(default=4, validator=[attr.validators.instance_of(int), _positive])

    @d_model.validator
    def _check_heads(self, attribute, value):
        if value % self.n_heads != 0:
            raise ValueError(f"d_model {value} is not divisible by n_heads {self.n_heads}")

    @max_seq_len.validator
    def _check_seq_len(self, attribute, value):
        if value < 2:
            raise ValueError(f"max_seq_len must be at least 2, got {value}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def user_index(self, user: str) -> int:
        try:
            return self.users.index(user)
        except ValueError:
            raise ValueError(f"User '{user}' has no row in the {self.mode.value} table")

    def to_dict(self) -> dict:
        result = attr.asdict(self, recurse=False)
        result["mode"] = self.mode.value
        result["users"] = list(self.users)
        return result

    @staticmethod
    def from_dict(data: dict) -> 'ModelConfig':
        return ModelConfig(**data)


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    d, f = config.d_model, config.d_model * config.ff_mult
    shapes = OrderedDict()
    shapes["token_embedding"] = (config.vocab_size, d)
    shapes["position_embedding"] = (config.max_seq_len, d)
    for layer in range(config.n_layers):
        shapes[f"layer{layer}.ln1.gain"] = (d,)
        shapes[f"layer{layer}.ln1.bias"] = (d,)
        for head in range(config.n_heads):
            shapes[f"layer{layer}.head{head}.wq"] = (d, config.head_dim)
            shapes[f"layer{layer}.head{head}.wk"] = (d, config.head_dim)
            shapes[f"layer{layer}.head{head}.wv"] = (d, config.head_dim)
            shapes[f"layer{layer}.head{head}.wo"] = (config.head_dim, d)
        shapes[f"layer{layer}.attn.bias"] = (d,)
        shapes[f"layer{layer}.ln2.gain"] = (d,)
        shapes[f"layer{layer}.ln2.bias"] = (d,)
        shapes[f"layer{layer}.mlp.w1"] = (d, f)
        shapes[f"layer{layer}.mlp.b1"] = (f,)
        shapes[f"layer{layer}.mlp.w2"] = (f, d)
        shapes[f"layer{layer}.mlp.b2"] = (d,)
    shapes["final_ln.gain"] = (d,)
    shapes["final_ln.bias"] = (d,)
    shapes["head.weight"] = (d, config.n_classes)
    shapes["head.bias"] = (config.n_classes,)

    # Tied mode adds nothing per user: identifier tokens go through token_embedding
    if config.mode == Mode.UNTIED:
        shapes["user_embedding"] = (len(config.users), config.user_emb_len, d)
    elif config.mode == Mode.PREFIX:
        shapes["prefix_table"] = (len(config.users), config.prefix_len, d)

    return shapes


USER_TABLES = ["user_embedding", "prefix_table"]


class Parameters:
    """Named float64 tensors of one classifier, together with the config that shaped them."""

    def __init__(self, config: ModelConfig, tensors: Dict[str, np.ndarray]):
        assert(isinstance(config, ModelConfig))
        assert(isinstance(tensors, dict))

        expected = parameter_shapes(config)
        if list(tensors.keys()) != list(expected.keys()):
            raise ValueError(f"Parameter names do not match the {config.mode.value} layout")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ValueError(f"Parameter '{name}' has shape {tensors[name].shape}, expected {shape}")

        self.config = config
        self.tensors = tensors

    @property
    def names(self) -> List[str]:
        return list(self.tensors.keys())

    @property
    def base_names(self) -> List[str]:
        return [name for name in self.tensors if name not in USER_TABLES]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def num_scalars(self, names: Optional[List[str]] = None) -> int:
        return sum(self.tensors[name].size for name in (names or self.names))

    def copy(self) -> 'Parameters':
        return Parameters(self.config, OrderedDict((name, value.copy()) for name, value in self.tensors.items()))

    def equals(self, other: 'Parameters', names: Optional[List[str]] = None) -> bool:
        """Bitwise equality, over `names` when given."""
        assert(isinstance(other, Parameters))
        return all(np.array_equal(self.tensors[name], other.tensors[name]) for name in (names or self.names))

    def __repr__(self):
        return f"Parameters(mode={self.config.mode.value}, tensors={len(self.tensors)}, scalars={self.num_scalars()})"


def init(config: ModelConfig) -> Parameters:
    assert(isinstance(config, ModelConfig))

    if config.vocab_size < 1:
        raise ValueError("vocab_size must be set before initialising a model")
    if config.mode != Mode.TIED and len(config.users) == 0:
        raise ValueError(f"{config.mode.value} mode needs the user list")
    if config.mode == Mode.UNTIED and config.user_emb_len < 1:
        raise ValueError("Untied mode needs user_emb_len >= 1")
    if config.mode == Mode.PREFIX and config.prefix_len < 1:
        raise ValueError("Prefix mode needs prefix_len >= 1")

    rng = np.random.default_rng(config.seed)
    tensors = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            tensors[name] = np.ones(shape)
        elif name.endswith("bias") or name.endswith(".b1") or name.endswith(".b2"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal(0.0, INIT_STD, size=shape)

    return Parameters(config, tensors)


def _input_embeddings(tape: Tape, params: Parameters, sample: AugmentedSample, use_prefix: bool) -> Tensor:
    config = params.config
    tokens = tape.parameter("token_embedding", params["token_embedding"])

    if config.mode == Mode.UNTIED and sample.ident_len > 0:
        if sample.ident_len != config.user_emb_len:
            raise ValueError(f"Identifier of {sample.ident_len} tokens does not match user_emb_len "
                             f"{config.user_emb_len}")
        # Identifier positions read the user's own vectors instead of the token table
        user_vectors = embedding_lookup(tape.parameter("user_embedding", params["user_embedding"]),
                                        [config.user_index(sample.user)])
        end_of_content = 1 + sample.ident_len + sample.content_kept
        segments = [embedding_lookup(tokens, sample.ids[:1]),
                    user_vectors,
                    embedding_lookup(tokens, sample.ids[1 + sample.ident_len:end_of_content])]
        if end_of_content < len(sample.ids):
            segments.append(user_vectors)
        return concat(segments)

    if config.mode == Mode.PREFIX and use_prefix:
        if sample.ident_len > 0:
            raise ValueError("Prefix mode takes samples without identifier tokens")
        prefix = embedding_lookup(tape.parameter("prefix_table", params["prefix_table"]),
                                  [config.user_index(sample.user)])
        return concat([embedding_lookup(tokens, sample.ids[:1]),
                       prefix,
                       embedding_lookup(tokens, sample.ids[1:])])

    return embedding_lookup(tokens, sample.ids)


def _attention(tape: Tape, params: Parameters, layer: int, x: Tensor) -> Tensor:
    config = params.config
    output = None
    for head in range(config.n_heads):
        prefix = f"layer{layer}.head{head}"
        q = matmul(x, tape.parameter(f"{prefix}.wq", params[f"{prefix}.wq"]))
        k = matmul(x, tape.parameter(f"{prefix}.wk", params[f"{prefix}.wk"]))
        v = matmul(x, tape.parameter(f"{prefix}.wv", params[f"{prefix}.wv"]))
        weights = softmax(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(config.head_dim)))
        projected = matmul(matmul(weights, v), tape.parameter(f"{prefix}.wo", params[f"{prefix}.wo"]))
        output = projected if output is None else add(output, projected)
    return add(output, tape.parameter(f"layer{layer}.attn.bias", params[f"layer{layer}.attn.bias"]))


def forward(params: Parameters, sample: AugmentedSample, tape: Optional[Tape] = None,
            use_prefix: bool = True) -> Tensor:
    """Logits (1 x n_classes) read from the position-0 hidden state."""
    assert(isinstance(params, Parameters))
    assert(isinstance(sample, AugmentedSample))

    tape = tape or Tape()
    config = params.config

    def p(name: str) -> Tensor:
        return tape.parameter(name, params[name])

    x = _input_embeddings(tape, params, sample, use_prefix)
    length = x.shape[0]
    if length > config.max_seq_len:
        raise ValueError(f"Input of {length} positions exceeds max_seq_len {config.max_seq_len}")
    x = add(x, embedding_lookup(p("position_embedding"), list(range(length))))

    for layer in range(config.n_layers):
        h = layer_norm(x, p(f"layer{layer}.ln1.gain"), p(f"layer{layer}.ln1.bias"))
        x = add(x, _attention(tape, params, layer, h))
        h = layer_norm(x, p(f"layer{layer}.ln2.gain"), p(f"layer{layer}.ln2.bias"))
        h = gelu(add(matmul(h, p(f"layer{layer}.mlp.w1")), p(f"layer{layer}.mlp.b1")))
        x = add(x, add(matmul(h, p(f"layer{layer}.mlp.w2")), p(f"layer{layer}.mlp.b2")))

    x = layer_norm(x, p("final_ln.gain"), p("final_ln.bias"))
    cls = embedding_lookup(x, [0])
    return add(matmul(cls, p("head.weight")), p("head.bias"))


def loss(params: Parameters, batch: List[AugmentedSample], tape: Optional[Tape] = None,
         use_prefix: bool = True) -> Tensor:
    """Mean cross-entropy over the batch, as a 1x1 tensor."""
    assert(isinstance(batch, list))

    if len(batch) == 0:
        raise ValueError("Cannot compute the loss of an empty batch")

    tape = tape or Tape()
    losses = [cross_entropy(forward(params, sample, tape, use_prefix), sample.label) for sample in batch]
    return mean(concat(losses))


def loss_and_gradients(params: Parameters, batch: List[AugmentedSample],
                       use_prefix: bool = True) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss value and a gradient for every parameter, zero where the batch does not reach it."""
    tape = Tape()
    value = loss(params, batch, tape, use_prefix)
    grads = backward(value)
    return float(value.value[0, 0]), OrderedDict((name, grads[name] if name in grads else np.zeros_like(tensor))
                                                 for name, tensor in params.items())


def predict_logits(params: Parameters, sample: AugmentedSample, use_prefix: bool = True) -> np.ndarray:
    return forward(params, sample, Tape(), use_prefix).value.reshape(-1)


def freeze_mask(config: ModelConfig, phase: int, user: Optional[str] = None) -> Dict[str, Optional[int]]:
    """Trainable parameters for a phase: name -> None for the whole tensor, or the single trainable row.

    Phase 1 trains the shared model (no prefix table); phase 2 trains one user's prefix rows only.
    """
    assert(isinstance(config, ModelConfig))
    assert(phase in [1, 2])

    if phase == 1:
        return OrderedDict((name, None) for name in parameter_shapes(config) if name != "prefix_table")

    if config.mode != Mode.PREFIX:
        raise ValueError(f"Phase 2 tuning needs Prefix mode, not {config.mode.value}")
    if user is None:
        raise ValueError("Phase 2 tuning needs the acting user")
    return OrderedDict([("prefix_table", config.user_index(user))])


def save_checkpoint(path: str, params: Parameters):
    assert(isinstance(path, str))
    assert(isinstance(params, Parameters))

    header = json.dumps({"config": params.config.to_dict(),
                         "tensors": [{"name": name, "shape": list(value.shape)} for name, value in params.items()]},
                        sort_keys=True).encode('utf-8')

    with open(path, 'wb') as file:
        file.write(CHECKPOINT_MAGIC)
        file.write(struct.pack('<Q', len(header)))
        file.write(header)
        for name, value in params.items():
            file.write(np.ascontiguousarray(value, dtype='<f8').tobytes())


def load_checkpoint(path: str) -> Parameters:
    assert(isinstance(path, str))

    with open(path, 'rb') as file:
        if file.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a pyuserid checkpoint")
        (header_length,) = struct.unpack('<Q', file.read(8))
        header = json.loads(file.read(header_length).decode('utf-8'))

        tensors = OrderedDict()
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buffer = file.read(8 * count)
            if len(buffer) != 8 * count:
                raise ValueError(f"Checkpoint {path} is truncated at tensor '{entry['name']}'")
            tensors[entry["name"]] = np.frombuffer(buffer, dtype='<f8').reshape(shape).astype(np.float64)

    return Parameters(ModelConfig.from_dict(header["config"]), tensors)
