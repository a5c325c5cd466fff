"""Named parameter tensors."""

import numpy as np


def glorot_uniform(rng, fan_out, fan_in, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_out, fan_in))


class ParamSet:
    """Ordered mapping of unique names to float64 arrays with fixed shapes.

    ``view(prefix)`` returns a plain dict of the arrays under ``prefix.``
    with the prefix stripped; the arrays are shared, not copied, so layer
    code can read parameters without knowing where they live.
    """

    def __init__(self, arrays=None, seed=None):
        self._arrays = {}
        self.seed = seed
        for name, value in (arrays or {}).items():
            self.add(name, value)

    @classmethod
    def wrap(cls, arrays, seed=None):
        """Share ``arrays`` without copying."""
        out = cls(seed=seed)
        out._arrays = dict(arrays)
        return out

    def add(self, name, value):
        if name in self._arrays:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name!r} has non-finite values")
        self._arrays[name] = arr

    def update(self, prefix, arrays):
        for name, value in arrays.items():
            self.add(f"{prefix}.{name}" if prefix else name, value)

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, value):
        arr = np.asarray(value, dtype=np.float64)
        if name not in self._arrays:
            raise KeyError(f"unknown parameter {name!r}; use add()")
        if arr.shape != self._arrays[name].shape:
            raise ValueError(f"shape of {name!r} is fixed at {self._arrays[name].shape}")
        self._arrays[name][...] = arr

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def names(self):
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def view(self, prefix=""):
        if not prefix:
            return dict(self._arrays)
        cut = len(prefix) + 1
        return {k[cut:]: v for k, v in self._arrays.items() if k.startswith(prefix + ".")}

    @property
    def n_params(self):
        return int(sum(a.size for a in self._arrays.values()))

    def copy(self):
        return ParamSet.wrap({k: v.copy() for k, v in self._arrays.items()}, self.seed)

    def astype(self, dtype):
        """Copy with every array cast to ``dtype`` (e.g. ``np.longdouble``)."""
        out = ParamSet(seed=self.seed)
        out._arrays = {k: v.astype(dtype) for k, v in self._arrays.items()}
        return out

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self._arrays.items()}

    def flat(self):
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._arrays.values()])

    def set_flat(self, vector):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {vector.size}")
        pos = 0
        for v in self._arrays.values():
            v[...] = vector[pos:pos + v.size].reshape(v.shape)
            pos += v.size

    def flatten_grads(self, grads):
        """Concatenate a name->array gradient dict in parameter order (missing = 0)."""
        parts = [np.asarray(grads[k]).ravel() if k in grads else np.zeros(v.size)
                 for k, v in self._arrays.items()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def equals(self, other):
        """Same names, shapes and values; insertion order is ignored."""
        return (set(self.names()) == set(other.names())
                and all(np.array_equal(self[k], other[k]) for k in self._arrays))

    def to_json(self):
        return {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                for k, v in self._arrays.items()}

    @classmethod
    def from_json(cls, obj, seed=None):
        return cls({k: np.asarray(d["values"], dtype=np.float64).reshape(d["shape"])
                    for k, d in obj.items()}, seed)
