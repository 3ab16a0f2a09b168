from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Adam over a fixed list of parameter tensors.

    Parameters whose ``requires_grad`` is False at step time are skipped,
    which is how freezing is enforced.
    """

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        for p in self.params:
            self.state.m[id(p)] = np.zeros_like(p.data)
            self.state.v[id(p)] = np.zeros_like(p.data)

    def step(self, grads):
        st = self.state
        st.step += 1
        b1, b2 = st.beta1, st.beta2
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for p in self.params:
            g = grads.get(id(p))
            if g is None or not p.requires_grad:
                continue
            if g.shape != p.data.shape:
                raise ContractError(
                    f"gradient shape {g.shape} does not match parameter {p.name} {p.data.shape}")
            m = st.m[id(p)]
            v = st.v[id(p)]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)


def adam_step(optimizer, grads):
    optimizer.step(grads)
    return optimizer.params
