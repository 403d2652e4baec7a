from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping

import numpy as np

from docmem_nmt.autodiff import Array, GradientMap, Tape, Tensor

INIT_SCALE = 0.08


class ParamSet(Mapping[str, Array]):
    """
    Named float64 parameter arrays shared by every model component.

    Names are unique. Frozen names are bound as constants on a tape, so they never
    receive gradients and SGD leaves them untouched.
    """

    def __init__(self, arrays: Mapping[str, Array] | None = None, frozen: Iterable[str] = ()) -> None:
        self._arrays: dict[str, Array] = {}
        for name, array in (arrays or {}).items():
            self.add(name, array)
        self.frozen: frozenset[str] = frozenset()
        self.freeze(frozen)

    @classmethod
    def initialize(
        cls,
        shapes: Mapping[str, tuple[int, ...]],
        rng: np.random.Generator,
        scale: float = INIT_SCALE,
        zeros: Iterable[str] = (),
    ) -> ParamSet:
        """Uniform init in [-scale, scale], drawn in the iteration order of `shapes`."""
        zeros = set(zeros)
        params = cls()
        for name, shape in shapes.items():
            if name in zeros:
                params.add(name, np.zeros(shape))
            else:
                params.add(name, rng.uniform(-scale, scale, size=shape))
        return params

    def __getitem__(self, name: str) -> Array:
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def add(self, name: str, array: Array) -> None:
        if name in self._arrays:
            msg = f"duplicate parameter name: {name}"
            raise ValueError(msg)
        self._arrays[name] = np.array(array, dtype=np.float64)

    def set(self, name: str, array: Array) -> None:
        if name not in self._arrays:
            msg = f"unknown parameter: {name}"
            raise KeyError(msg)
        if np.shape(array) != self._arrays[name].shape:
            msg = f"shape mismatch for {name}: {np.shape(array)} != {self._arrays[name].shape}"
            raise ValueError(msg)
        self._arrays[name] = np.array(array, dtype=np.float64)

    def freeze(self, names: Iterable[str]) -> None:
        names = frozenset(names)
        if unknown := names - self._arrays.keys():
            msg = f"cannot freeze unknown parameters: {sorted(unknown)}"
            raise KeyError(msg)
        self.frozen = self.frozen | names

    def merge(self, other: ParamSet) -> ParamSet:
        merged = self.copy()
        for name, array in other.items():
            merged.add(name, array)
        merged.freeze(other.frozen)
        return merged

    def subset(self, prefix: str) -> ParamSet:
        return ParamSet(
            {name: array for name, array in self.items() if name.startswith(prefix)},
            frozen={name for name in self.frozen if name.startswith(prefix)},
        )

    def copy(self) -> ParamSet:
        return ParamSet({name: array.copy() for name, array in self.items()}, frozen=self.frozen)

    @property
    def trainable(self) -> list[str]:
        return [name for name in self._arrays if name not in self.frozen]

    def bind(self, tape: Tape | None = None) -> dict[str, Tensor]:
        """Tensors for every parameter: trainable ones become leaves of `tape`, the rest constants."""
        return {
            name: tape.leaf(array) if tape is not None and name not in self.frozen else Tensor(array)
            for name, array in self.items()
        }

    def equals(self, other: ParamSet) -> bool:
        return self.keys() == other.keys() and all(np.array_equal(self[name], other[name]) for name in self)


def gradients(view: Mapping[str, Tensor], grads: GradientMap) -> dict[str, Array]:
    """Extract per-parameter gradients for the leaves of `view` that live on a tape."""
    return {name: grads.of(tensor) for name, tensor in view.items() if tensor.requires_grad}
