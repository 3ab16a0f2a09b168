"""Parameter containers, hashing and the checkpoint format."""
import hashlib
import json

import numpy as np

from . import tensor as T
from .errors import ContractError

CKPT_MAGIC = "S2DM-CKPT-v1"


class Module:
    """Holds named parameter tensors in ``self.params`` (insertion ordered)."""

    def __init__(self):
        self.params = {}

    def add_param(self, name, data):
        p = T.parameter(data, name=name)
        self.params[name] = p
        return p

    def named_parameters(self):
        return dict(self.params)

    def parameters(self):
        return list(self.params.values())

    def set_frozen(self, flag):
        for p in self.params.values():
            p.requires_grad = not flag

    @property
    def frozen(self):
        return not any(p.requires_grad for p in self.params.values())

    def parameter_hash(self):
        return parameter_hash(self.params)

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        if missing:
            raise ContractError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ContractError(f"shape mismatch for {k}: {arr.shape} vs {p.data.shape}")
            p.data[...] = arr


def parameter_hash(params):
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


def glorot(rng, fan_in, fan_out):
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, scale, size=(fan_in, fan_out))


def linear(x, w, b=None):
    out = T.matmul(x, w)
    return out if b is None else out + b


def save_checkpoint(path, state, meta=None):
    doc = {
        "magic": CKPT_MAGIC,
        "meta": meta or {},
        "params": {k: {"shape": list(v.shape), "values": np.asarray(v).reshape(-1).tolist()}
                   for k, v in state.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("magic") != CKPT_MAGIC:
        raise ContractError(f"{path}: not a {CKPT_MAGIC} checkpoint (magic={doc.get('magic')!r})")
    state = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"])
             for k, v in doc["params"].items()}
    return state, doc.get("meta", {})
