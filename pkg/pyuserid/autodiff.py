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

"""Reverse-mode differentiation over dense float64 tensors.

Every primitive is a `Function` with a `forward` on raw arrays and a `backward`
mapping the output gradient to one gradient per parent. Applying a function to
tensors that live on a `Tape` records a node; since nodes are appended after
their parents exist, walking the tape backwards is a valid topological order.
"""

import math
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence

import numpy as np

LOG_EPSILON = 1e-12
LAYER_NORM_EPSILON = 1e-5

GELU_C = math.sqrt(2.0 / math.pi)


class Tensor:
    def __init__(self, value, tape: Optional['Tape'] = None, name: Optional[str] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name})"


class Node:
    def __init__(self, function: 'Function', parents: Sequence[Tensor], output: Tensor):
        self.function = function
        self.parents = parents
        self.output = output


class Tape:
    """Records one computation. Not shared between threads; use one tape per batch or client."""

    def __init__(self):
        self.nodes = []
        self.parameters = OrderedDict()

    def parameter(self, name: str, value: np.ndarray) -> Tensor:
        assert(isinstance(name, str))

        if name in self.parameters:
            return self.parameters[name]

        tensor = Tensor(value, tape=self, name=name)
        self.parameters[name] = tensor
        return tensor

    def record(self, function: 'Function', parents: Sequence[Tensor], output: Tensor):
        self.nodes.append(Node(function, parents, output))

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        if loss.tape is not self:
            raise ValueError("Loss was not recorded on this tape")
        if loss.value.size != 1:
            raise ValueError(f"Loss must be a scalar, got shape {loss.shape}")

        grads = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            grad = grads.get(id(node.output))
            if grad is None:
                continue

            for parent, parent_grad in zip(node.parents, node.function.backward(grad)):
                if parent_grad is None or parent.tape is None:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + parent_grad
                else:
                    grads[id(parent)] = parent_grad

        return OrderedDict((name, grads.get(id(tensor), np.zeros_like(tensor.value)))
                           for name, tensor in self.parameters.items())


def backward(loss: Tensor) -> Dict[str, np.ndarray]:
    assert(isinstance(loss, Tensor))

    if loss.tape is None:
        raise ValueError("Loss is not attached to a tape")
    return loss.tape.backward(loss)


class Function:
    def forward(self, *values):
        raise NotImplementedError()

    def backward(self, grad: np.ndarray) -> tuple:
        raise NotImplementedError()

    @classmethod
    def apply(cls, *parents: Tensor, **kwargs) -> Tensor:
        tapes = {id(parent.tape): parent.tape for parent in parents if parent.tape is not None}
        if len(tapes) > 1:
            raise ValueError(f"{cls.__name__} mixes tensors from different tapes")
        tape = next(iter(tapes.values()), None)

        function = cls(**kwargs)
        output = Tensor(function.forward(*[parent.value for parent in parents]), tape=tape)
        if tape is not None:
            tape.record(function, parents, output)
        return output


def _require_matrix(name: str, value: np.ndarray):
    if value.ndim != 2:
        raise ValueError(f"{name} expects a matrix, got shape {value.shape}")


class MatMul(Function):
    def forward(self, a, b):
        _require_matrix("matmul", a)
        _require_matrix("matmul", b)
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class Add(Function):
    """Elementwise sum, or a bias vector added to every row."""

    def forward(self, a, b):
        if a.shape == b.shape:
            self.bias = False
        elif a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
            self.bias = True
        else:
            raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
        return a + b

    def backward(self, grad):
        return grad, grad.sum(axis=0) if self.bias else grad


class Scale(Function):
    def __init__(self, factor: float):
        self.factor = factor

    def forward(self, a):
        return a * self.factor

    def backward(self, grad):
        return grad * self.factor,


class Relu(Function):
    def forward(self, a):
        self.mask = a > 0
        return a * self.mask

    def backward(self, grad):
        return grad * self.mask,


class Gelu(Function):
    """Tanh approximation of GELU."""

    def forward(self, a):
        self.a = a
        self.t = np.tanh(GELU_C * (a + 0.044715 * a ** 3))
        return 0.5 * a * (1.0 + self.t)

    def backward(self, grad):
        a, t = self.a, self.t
        derivative = 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t ** 2) * GELU_C * (1.0 + 3 * 0.044715 * a ** 2)
        return grad * derivative,


class Softmax(Function):
    """Row-wise softmax."""

    def forward(self, a):
        _require_matrix("softmax", a)
        shifted = np.exp(a - a.max(axis=1, keepdims=True))
        self.y = shifted / shifted.sum(axis=1, keepdims=True)
        return self.y

    def backward(self, grad):
        return self.y * (grad - (grad * self.y).sum(axis=1, keepdims=True)),


class LayerNorm(Function):
    """Row-wise normalisation followed by a gain and a bias."""

    def forward(self, x, gain, bias):
        _require_matrix("layer_norm", x)
        if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
            raise ValueError(f"layer_norm shape mismatch: input {x.shape}, gain {gain.shape}, bias {bias.shape}")
        mean = x.mean(axis=1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(x.var(axis=1, keepdims=True) + LAYER_NORM_EPSILON)
        self.x_hat = (x - mean) * self.inv_std
        self.gain = gain
        return self.x_hat * gain + bias

    def backward(self, grad):
        d_x_hat = grad * self.gain
        d_x = self.inv_std * (d_x_hat
                              - d_x_hat.mean(axis=1, keepdims=True)
                              - self.x_hat * (d_x_hat * self.x_hat).mean(axis=1, keepdims=True))
        return d_x, (grad * self.x_hat).sum(axis=0), grad.sum(axis=0)


class EmbeddingLookup(Function):
    """Rows of a table (or of any tensor) gathered by index; 3-d tables yield their inner matrices."""

    def __init__(self, ids: List[int]):
        self.ids = list(ids)

    def forward(self, table):
        if table.ndim < 2:
            raise ValueError(f"embedding_lookup expects a table, got shape {table.shape}")
        for index in self.ids:
            if not 0 <= index < table.shape[0]:
                raise ValueError(f"embedding_lookup index {index} outside table of shape {table.shape}")
        self.table_shape = table.shape
        return table[self.ids].reshape(-1, table.shape[-1])

    def backward(self, grad):
        table_grad = np.zeros(self.table_shape)
        np.add.at(table_grad, self.ids, grad.reshape((len(self.ids),) + self.table_shape[1:]))
        return table_grad,


class Concat(Function):
    """Row-wise concatenation."""

    def forward(self, *values):
        for value in values:
            _require_matrix("concat", value)
            if value.shape[1] != values[0].shape[1]:
                raise ValueError(f"concat shape mismatch: {values[0].shape} and {value.shape}")
        self.rows = [value.shape[0] for value in values]
        return np.concatenate(values, axis=0)

    def backward(self, grad):
        return tuple(np.split(grad, np.cumsum(self.rows)[:-1], axis=0))


class Mean(Function):
    """Mean over rows, producing a single row."""

    def forward(self, a):
        _require_matrix("mean", a)
        if a.shape[0] == 0:
            raise ValueError("mean of an empty tensor")
        self.rows = a.shape[0]
        return a.mean(axis=0, keepdims=True)

    def backward(self, grad):
        return np.repeat(grad / self.rows, self.rows, axis=0),


class Transpose(Function):
    def forward(self, a):
        _require_matrix("transpose", a)
        return a.T.copy()

    def backward(self, grad):
        return grad.T,


class CrossEntropy(Function):
    """-log softmax(logits)[target], clamped at LOG_EPSILON, as a 1x1 tensor."""

    def __init__(self, target: int):
        self.target = target

    def forward(self, logits):
        z = logits.reshape(-1)
        if not 0 <= self.target < z.shape[0]:
            raise ValueError(f"cross_entropy target {self.target} outside logits of shape {logits.shape}")
        self.logits_shape = logits.shape
        m = z.max()
        self.p = np.exp(z - (m + np.log(np.exp(z - m).sum())))
        self.clamped = self.p[self.target] < LOG_EPSILON
        return np.array([[-math.log(max(self.p[self.target], LOG_EPSILON))]])

    def backward(self, grad):
        if self.clamped:
            return np.zeros(self.logits_shape),
        d_logits = self.p.copy()
        d_logits[self.target] -= 1.0
        return (d_logits * grad.reshape(-1)[0]).reshape(self.logits_shape),


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def scale(a: Tensor, factor: float) -> Tensor:
    return Scale.apply(a, factor=factor)


def relu(a: Tensor) -> Tensor:
    return Relu.apply(a)


def gelu(a: Tensor) -> Tensor:
    return Gelu.apply(a)


def softmax(a: Tensor) -> Tensor:
    return Softmax.apply(a)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return LayerNorm.apply(x, gain, bias)


def embedding_lookup(table: Tensor, ids: List[int]) -> Tensor:
    return EmbeddingLookup.apply(table, ids=ids)


def concat(tensors: List[Tensor]) -> Tensor:
    return Concat.apply(*tensors)


def mean(a: Tensor) -> Tensor:
    return Mean.apply(a)


def transpose(a: Tensor) -> Tensor:
    return Transpose.apply(a)


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    return CrossEntropy.apply(logits, target=int(target))
