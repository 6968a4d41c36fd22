import numpy as np


class Adam:
    def __init__(self, store, names=None, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.store = store
        self.names = list(store) if names is None else list(names)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(store[n].data) for n in self.names}
        self.v = {n: np.zeros_like(store[n].data) for n in self.names}

    def step(self, lr):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n in self.names:
            p = self.store[n]
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m, v = self.m[n], self.v[n]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
