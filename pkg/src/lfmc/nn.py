"""Dense networks with hand-written reverse-mode gradients."""

import numpy as np

def _dtanh(y):
    """tanh derivative written in terms of the output ``y``."""
    return 1.0 - y * y


# module-level functions keep networks picklable for rollout workers
ACTIVATIONS = {
    "tanh": (np.tanh, _dtanh),
}


class ShapeError(ValueError):
    pass


class MLP:
    """Fully connected network ``x @ W + b`` with a hidden activation and a linear output.

    ``params`` is the flat list ``[W0, b0, W1, b1, ...]`` with ``W_i`` of
    shape ``(sizes[i], sizes[i + 1])``.
    """

    def __init__(self, sizes, activation="tanh", rng=None, output_gain=1.0, params=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {activation!r}")
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self._act, self._dact = ACTIVATIONS[activation]
        if params is not None:
            self.params = [np.array(p, dtype=float) for p in params]
            self._check()
            return
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = []
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            gain = output_gain if i == n_layers - 1 else np.sqrt(2.0)
            self.params += [_orthogonal(rng, self.sizes[i], self.sizes[i + 1], gain),
                            np.zeros(self.sizes[i + 1])]

    def _check(self):
        for i in range(len(self.sizes) - 1):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            if W.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ShapeError(f"layer {i} has shapes {W.shape}, {b.shape}")

    def copy(self):
        return MLP(self.sizes, self.activation, params=[p.copy() for p in self.params])

    def forward(self, x, keep=False):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ShapeError(f"expected input of size {self.sizes[0]}, got {x.shape[-1]}")
        acts = [x]
        h = x
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1:
                h = self._act(h)
            acts.append(h)
        return (h, acts) if keep else h

    __call__ = forward

    def backward(self, acts, grad_out, need_input=False):
        """Gradients of ``sum(grad_out * output)`` w.r.t. every parameter (and the input)."""
        grads = [None] * len(self.params)
        g = np.asarray(grad_out, dtype=float)
        n_layers = len(self.sizes) - 1
        for i in range(n_layers - 1, -1, -1):
            if i < n_layers - 1:
                g = g * self._dact(acts[i + 1])
            a = acts[i]
            grads[2 * i] = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[2 * i + 1] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            if i > 0 or need_input:
                g = g @ self.params[2 * i].T
        return (grads, g) if need_input else grads

    def input_jacobian(self, x):
        """``d output / d input`` for a batch, shape ``(B, n_out, n_in)``, by reverse mode."""
        x = np.atleast_2d(x)
        _, acts = self.forward(x, keep=True)
        n_out = self.sizes[-1]
        jac = np.empty((x.shape[0], n_out, self.sizes[0]))
        for k in range(n_out):
            seed = np.zeros((x.shape[0], n_out))
            seed[:, k] = 1.0
            _, gx = self.backward(acts, seed, need_input=True)
            jac[:, k, :] = gx
        return jac


def _orthogonal(rng, n_in, n_out, gain):
    a = rng.normal(size=(max(n_in, n_out), min(n_in, n_out)))
    qm, r = np.linalg.qr(a)
    qm = qm * np.sign(np.diag(r))
    w = qm if n_in >= n_out else qm.T
    return gain * w[:n_in, :n_out]


class Adam:
    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = [g * scale for g in grads]
    return grads, total


class RunningNorm:
    """Running mean / variance of observations (parallel Welford update)."""

    def __init__(self, dim, eps=1e-8):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0
        self.eps = eps

    def update(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.mean.shape[0])
        n = x.shape[0]
        if n == 0:
            return
        bmean = x.mean(axis=0)
        bvar = x.var(axis=0)
        if self.count == 0:
            self.mean, self.var, self.count = bmean, bvar, float(n)
            return
        total = self.count + n
        delta = bmean - self.mean
        self.mean = self.mean + delta * n / total
        m2 = self.var * self.count + bvar * n + delta * delta * self.count * n / total
        self.var = m2 / total
        self.count = total

    @property
    def scale(self):
        return 1.0 / np.sqrt(self.var + self.eps)

    def __call__(self, x):
        return (np.asarray(x, dtype=float) - self.mean) * self.scale
