"""Adam with bias correction."""
import numpy as np


class Adam:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}
        if len(self.m) != len(self.params):
            raise ValueError("Adam needs uniquely named parameters")

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in parameter {p.name!r} at step {self.t + 1}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = p.grad
            m, v = self.m[p.name], self.v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {"step": self.t, "m": dict(self.m), "v": dict(self.v)}

    def load_state_dict(self, state):
        for key in ("m", "v"):
            missing = set(self.m) - set(state[key])
            if missing:
                raise KeyError(f"optimizer state lacks parameter {sorted(missing)[0]!r}")
        self.t = int(state["step"])
        self.m = {k: np.array(state["m"][k], dtype=self.m[k].dtype) for k in self.m}
        self.v = {k: np.array(state["v"][k], dtype=self.v[k].dtype) for k in self.v}


def adam_step(params, state, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
    """Functional form: one update of ``params`` (gradients in ``.grad``) with ``state``."""
    opt = Adam(params, lr, betas, eps)
    if state:
        opt.load_state_dict(state)
    opt.step()
    return opt.state_dict()
