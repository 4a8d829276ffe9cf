'''
Module      : autodiff
Description : Dense float64 tensors with reverse-mode automatic differentiation.

Every numeric value of the micro model, its adapters and its losses lives in a
Tensor. Operations on tensors that require gradients record their inputs and
a backward rule; backward() orders the recorded graph into a Tape and replays
it in reverse topological order, visiting every node once.

Storage is numpy float64 in row-major order. Broadcasting follows numpy, and
gradients of broadcast operands are summed back to the operand shape.
'''

import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

try:
    from LDP.errors import ContractError, DegenerateBatchError, DimensionError, NumericError, VocabularyError
except ModuleNotFoundError:
    from errors import ContractError, DegenerateBatchError, DimensionError, NumericError, VocabularyError

_DEBUG_CHECKS = True
_grad_state = threading.local()

GELU_COEFF = np.sqrt(2.0 / np.pi)


def set_debug_checks(enabled):
    """
    Turn the finiteness check applied to every operation output on or off
    :param enabled: Bool, True raises NumericError on NaN/Inf results
    :return: None
    """
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def is_grad_enabled():
    return getattr(_grad_state, 'enabled', True)


@contextmanager
def no_grad():
    """ Context in which operations build no graph (inference, reference policies, finite differences) """
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    """
    Dense n-dimensional float64 value.
    Leaves created with requires_grad=True collect gradients in .grad when backward() runs.
    """

    def __init__(self, data, requires_grad=False, _parents=(), _op='leaf'):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = None
        self._op = _op

    def __repr__(self):
        return f'Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})'

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def item(self):
        if self.data.size != 1:
            raise ContractError(f'item() needs a single value, tensor has shape {self.shape}')
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # Arithmetic
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(data):
    """ Leaf tensor that takes part in gradient computation """
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _result(data, parents, op, backward_rule):
    """
    Wrap an operation output. The graph edge is recorded only when gradients are enabled and
    at least one input requires them.
    """
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError(f'non-finite value produced by {op}')
    requires = is_grad_enabled() and any(parent.requires_grad for parent in parents)
    out = Tensor(data, requires_grad=requires, _parents=parents if requires else (), _op=op)
    if requires:
        out._backward = backward_rule
    return out


def _unbroadcast(grad, shape):
    """ Sum a gradient over the axes numpy broadcasting added or stretched """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# Primitive operations
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as error:
        raise DimensionError(f'cannot add shapes {a.shape} and {b.shape}') from error
    return _result(data, (a, b), 'add',
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), 'neg', lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as error:
        raise DimensionError(f'cannot multiply shapes {a.shape} and {b.shape}') from error
    return _result(data, (a, b), 'mul',
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide='ignore', invalid='ignore'):
        data = a.data / b.data
    return _result(data, (a, b), 'div',
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def matmul(a, b):
    """
    Matrix product over the last two axes, leading axes broadcast.
    :param a: Tensor [..., m, k]
    :param b: Tensor [..., k, n]
    :return: Tensor [..., m, n]
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f'matmul needs matrices, got shapes {a.shape} and {b.shape}')
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f'matmul inner dimensions differ: {a.shape} x {b.shape}')
    data = np.matmul(a.data, b.data)

    def backward_rule(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _result(data, (a, b), 'matmul', backward_rule)


def power(a, exponent):
    a = as_tensor(a)
    exponent = float(exponent)
    with np.errstate(divide='ignore', invalid='ignore'):
        data = a.data ** exponent
    return _result(data, (a,), 'pow', lambda g: (g * exponent * a.data ** (exponent - 1.0),))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over='ignore'):
        data = np.exp(a.data)
    return _result(data, (a,), 'exp', lambda g: (g * data,))


def log(a):
    a = as_tensor(a)
    with np.errstate(divide='ignore', invalid='ignore'):
        data = np.log(a.data)
    return _result(data, (a,), 'log', lambda g: (g / a.data,))


def tanh(a):
    a = as_tensor(a)
    data = np.tanh(a.data)
    return _result(data, (a,), 'tanh', lambda g: (g * (1.0 - data * data),))


def gelu(a):
    """ Tanh approximation of the Gaussian error linear unit """
    a = as_tensor(a)
    x = a.data
    inner = GELU_COEFF * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward_rule(g):
        d_inner = GELU_COEFF * (1.0 + 3.0 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return _result(data, (a,), 'gelu', backward_rule)


def minimum(a, ceiling):
    """ Elementwise min(a, ceiling) with a constant ceiling; gradient passes where a <= ceiling """
    a = as_tensor(a)
    data = np.minimum(a.data, ceiling)
    mask = (a.data <= ceiling).astype(np.float64)
    return _result(data, (a,), 'minimum', lambda g: (g * mask,))


def log_sigmoid(a):
    """ log(sigmoid(a)) computed without overflow """
    a = as_tensor(a)
    data = -np.logaddexp(0.0, -a.data)
    return _result(data, (a,), 'log_sigmoid', lambda g: (g * np.exp(-np.logaddexp(0.0, a.data)),))


def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward_rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _result(data, (a,), 'sum', backward_rule)


def tensor_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as error:
        raise DimensionError(f'cannot reshape {a.shape} into {shape}') from error
    return _result(data, (a,), 'reshape', lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), 'transpose', lambda g: (np.transpose(g, inverse),))


def getitem(a, index):
    a = as_tensor(a)
    data = a.data[index]

    def backward_rule(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(data, dtype=np.float64), (a,), 'getitem', backward_rule)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as error:
        raise DimensionError(f'cannot concatenate shapes {[t.shape for t in tensors]}') from error
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(data, tuple(tensors), 'concat', lambda g: tuple(np.split(g, offsets, axis=axis)))


def softmax(x, axis=-1):
    """
    Softmax along an axis, stabilised by subtracting the maximum.
    :param x: Tensor
    :param axis: Axis to normalise over
    :return: Tensor of probabilities summing to one along axis
    """
    x = as_tensor(x)
    if not -x.ndim <= axis < max(x.ndim, 1):
        raise DimensionError(f'softmax axis {axis} out of range for shape {x.shape}')
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    return _result(y, (x,), 'softmax',
                   lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),))


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    y = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    return _result(y, (x,), 'log_softmax',
                   lambda g: (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),))


def rotate_pairs(x, cos, sin):
    """
    Rotate consecutive feature pairs (2i, 2i+1) of the last axis by angles given as cos/sin.
    :param x: Tensor [..., 2p]
    :param cos: array broadcastable to [..., p]
    :param sin: array broadcastable to [..., p]
    :return: Tensor of the same shape as x
    """
    x = as_tensor(x)
    if x.shape[-1] % 2:
        raise DimensionError(f'rotation needs an even last axis, got {x.shape[-1]}')
    even, odd = x.data[..., 0::2], x.data[..., 1::2]
    data = np.empty_like(x.data)
    data[..., 0::2] = even * cos - odd * sin
    data[..., 1::2] = even * sin + odd * cos

    def backward_rule(g):
        g_even, g_odd = g[..., 0::2], g[..., 1::2]
        grad = np.empty_like(g)
        grad[..., 0::2] = g_even * cos + g_odd * sin
        grad[..., 1::2] = -g_even * sin + g_odd * cos
        return (grad,)

    return _result(data, (x,), 'rotate_pairs', backward_rule)


def rms_norm(x, gain, eps=1e-6):
    """ Root-mean-square normalisation over the last axis, scaled by a learned gain """
    scale = power(tensor_mean(x * x, axis=-1, keepdims=True) + eps, -0.5)
    return x * scale * gain


def cross_entropy(logits, targets, ignore_index=-100):
    """
    Mean negative log-likelihood of target ids under row-wise softmax of logits.
    :param logits: Tensor [T x V]
    :param targets: Sequence of T token ids; ignore_index marks positions left out
    :param ignore_index: Id excluded from the mean
    :return: Scalar Tensor
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(f'cross_entropy needs [T x V] logits and T targets, got {logits.shape} and {targets.shape}')
    keep = targets != ignore_index
    if not np.any(keep):
        raise DegenerateBatchError('every target position is ignored')
    vocab = logits.shape[1]
    kept = targets[keep]
    if np.any(kept < 0) or np.any(kept >= vocab):
        raise VocabularyError(f'target id outside vocabulary of size {vocab}')
    rows = np.nonzero(keep)[0]
    picked = log_softmax(logits, axis=-1)[rows, kept]
    return -tensor_sum(picked) * (1.0 / len(rows))


class Tape:
    """ Topologically ordered record of the operations that produced a tensor """

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def record(cls, root):
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def replay(self, seed_grad):
        """
        Push gradients from the last node back to the leaves.
        Intermediate gradients are kept local to this replay; leaves accumulate into .grad.
        """
        grads = {id(self.nodes[-1]): seed_grad}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = np.array(grad, dtype=np.float64) if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def backward(loss):
    """
    Populate .grad of every leaf that requires gradients with d loss / d leaf.
    Repeated calls accumulate.
    :param loss: Scalar Tensor connected to the leaves
    :return: The Tape that was replayed
    """
    if loss.size != 1:
        raise ContractError(f'backward needs a scalar loss, got shape {loss.shape}')
    if not loss.requires_grad:
        raise ContractError('loss is not connected to any tensor that requires gradients')
    tape = Tape.record(loss)
    tape.replay(np.ones(loss.shape))
    return tape


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_index: tuple
    checked: int


def _scalar_value(value):
    value = value.item() if isinstance(value, Tensor) else float(value)
    if not np.isfinite(value):
        raise NumericError('non-finite loss value during gradient check')
    return value


def _check_entries(evaluate, entries, h):
    """
    Compare analytic gradients against central differences.
    :param evaluate: Callable returning the scalar loss
    :param entries: List of (tensor, flat index, analytic gradient)
    :param h: Finite-difference step
    :return: GradCheckReport
    """
    worst = (0.0, ())
    for position, (tensor, flat_index, analytic) in enumerate(entries):
        index = np.unravel_index(flat_index, tensor.shape) if tensor.ndim else ()
        original = tensor.data[index]
        tensor.data[index] = original + h
        plus = _scalar_value(evaluate())
        tensor.data[index] = original - h
        minus = _scalar_value(evaluate())
        tensor.data[index] = original
        numeric = (plus - minus) / (2.0 * h)
        error = abs(analytic - numeric) / max(1.0, abs(analytic))
        if error >= worst[0]:
            worst = (error, (position, tuple(int(i) for i in index)))
    return GradCheckReport(max_relative_error=worst[0], worst_index=worst[1], checked=len(entries))


def grad_check(f, x, h=1e-5, indices=None):
    """
    Check the gradient of a scalar function of x against central differences.
    :param f: Callable taking x and returning a scalar Tensor
    :param x: Leaf Tensor with requires_grad
    :param h: Step size, > 0
    :param indices: Optional iterable of flat indices of x to check (default: all)
    :return: GradCheckReport with max |analytic - numeric| / max(1, |analytic|)
    """
    if h <= 0:
        raise ContractError('finite-difference step must be positive')
    x.grad = None
    loss = f(x)
    _scalar_value(loss)
    backward(loss)
    analytic = np.zeros(x.shape) if x.grad is None else x.grad
    flat = analytic.reshape(-1)
    indices = range(x.size) if indices is None else indices
    entries = [(x, int(i), float(flat[int(i)])) for i in indices]
    with no_grad():
        return _check_entries(lambda: f(x), entries, h)


def grad_check_parameters(f, parameters, n_samples, h=1e-5, seed=0):
    """
    Check a scalar loss against central differences on randomly sampled entries of several tensors.
    :param f: Callable without arguments returning the scalar loss
    :param parameters: List of leaf Tensors
    :param n_samples: Number of (tensor, entry) samples
    :param h: Step size
    :param seed: Seed choosing the sampled entries
    :return: GradCheckReport
    """
    if h <= 0:
        raise ContractError('finite-difference step must be positive')
    for tensor in parameters:
        tensor.grad = None
    backward(f())
    rng = np.random.default_rng(seed)
    sizes = np.array([tensor.size for tensor in parameters], dtype=np.float64)
    choices = rng.choice(len(parameters), size=n_samples, p=sizes / sizes.sum())
    entries = []
    for choice in choices:
        tensor = parameters[int(choice)]
        flat_index = int(rng.integers(tensor.size))
        analytic = 0.0 if tensor.grad is None else float(tensor.grad.reshape(-1)[flat_index])
        entries.append((tensor, flat_index, analytic))
    with no_grad():
        return _check_entries(f, entries, h)
