"""Parameter storage and the handful of layers the networks are built from."""
import hashlib

import numpy as np

from lte.autodiff import engine as ad


class ParamStore:
    """Ordered name -> Tensor mapping; names are dotted paths like ``decoder.block0.wq.w``."""

    def __init__(self, seed=0):
        self.tensors = {}
        self.rng = np.random.default_rng(seed)

    def create(self, name, value):
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name}")
        t = ad.Tensor(np.asarray(value, dtype=np.float32), requires_grad=True, name=name)
        self.tensors[name] = t
        return name

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self, prefix=""):
        return [n for n in self.tensors if n.startswith(prefix)]

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def astype(self, dtype):
        for t in self.tensors.values():
            t.data = t.data.astype(dtype)

    def digest(self, prefix=""):
        h = hashlib.sha256()
        for name in self.names(prefix):
            h.update(name.encode())
            h.update(self.tensors[name].data.astype("<f4").tobytes())
        return h.hexdigest()


class Linear:
    def __init__(self, store, name, fan_in, fan_out, zero=False, scale=1.0):
        bound = 0.0 if zero else scale * np.sqrt(6.0 / (fan_in + fan_out))
        self.store = store
        self.w = store.create(f"{name}.w", store.rng.uniform(-bound, bound, (fan_in, fan_out)))
        self.b = store.create(f"{name}.b", np.zeros(fan_out))

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.store[self.w]), self.store[self.b])


class MLP:
    """Linear -> ReLU -> Linear (optionally more hidden layers)."""

    def __init__(self, store, name, sizes, last_scale=1.0):
        self.layers = [
            Linear(store, f"{name}.l{i}", a, b, scale=last_scale if i == len(sizes) - 2 else 1.0)
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.relu(x)
        return x


class LayerNorm:
    def __init__(self, store, name, dim):
        self.store = store
        self.gamma = store.create(f"{name}.gamma", np.ones(dim))
        self.beta = store.create(f"{name}.beta", np.zeros(dim))

    def __call__(self, x):
        return ad.layer_norm(x, self.store[self.gamma], self.store[self.beta])
