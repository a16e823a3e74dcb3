# src/tensor/tensor.py
"""
Tensor Values and Parameter Sets

Dense float64 tensors with an optional gradient slot, trainable parameters
carrying a layer depth, and named parameter collections.

Version: 1.0.0
"""
from typing import Dict, Iterable, Iterator, Mapping, Optional, Tuple

import numpy as np

from src.utils.errors import ShapeMismatchError


class Tensor:
    """
    Dense N-dimensional float64 array with an optional gradient.

    Invariants:
    - every extent of shape is positive (scalars have shape ())
    - grad, when present, has the same shape as data
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    def __init__(
        self,
        data: object,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        array = np.array(data, dtype=np.float64)
        if any(extent <= 0 for extent in array.shape):
            raise ShapeMismatchError(
                f"tensor extents must be positive, got shape {array.shape}"
            )
        self.data: np.ndarray = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Wrap an op result without copying."""
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(array, dtype=np.float64)
        tensor.grad = None
        tensor.requires_grad = requires_grad
        tensor.name = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        """Value of a single-element tensor."""
        if self.data.size != 1:
            raise ShapeMismatchError(
                f"item() requires a single-element tensor, got shape {self.shape}"
            )
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Copy of the data."""
        return self.data.copy()

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __add__(self, other: object) -> "Tensor":
        from src.tensor import ops

        return ops.add(self, other)

    def __radd__(self, other: object) -> "Tensor":
        from src.tensor import ops

        return ops.add(other, self)

    def __sub__(self, other: object) -> "Tensor":
        from src.tensor import ops

        return ops.sub(self, other)

    def __mul__(self, other: object) -> "Tensor":
        from src.tensor import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    def __rmul__(self, other: object) -> "Tensor":
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        from src.tensor import ops

        return ops.scale(self, -1.0)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


class Parameter(Tensor):
    """Trainable tensor with a layer depth used for layer-wise LR decay."""

    __slots__ = ("depth",)

    def __init__(self, data: object, name: str, depth: int = 0) -> None:
        super().__init__(data, requires_grad=True, name=name)
        if depth < 0:
            raise ValueError(f"parameter depth must be non-negative, got {depth}")
        self.depth = depth


class ParameterSet(Mapping[str, Parameter]):
    """
    Ordered name -> Parameter collection (θ).

    Supports gradient reset, snapshots for EMA shadowing and checkpoints,
    and merging of several sets with disjoint names.
    """

    def __init__(self, params: Iterable[Parameter] = ()) -> None:
        self._params: Dict[str, Parameter] = {}
        for param in params:
            self.register(param)

    def register(self, param: Parameter) -> Parameter:
        if param.name is None:
            raise ValueError("parameters must be named")
        if param.name in self._params:
            raise ValueError(f"duplicate parameter name '{param.name}'")
        self._params[param.name] = param
        return param

    def add(self, name: str, data: object, depth: int) -> Parameter:
        """Create and register a parameter."""
        return self.register(Parameter(data, name=name, depth=depth))

    @classmethod
    def merge(cls, *sets: "ParameterSet") -> "ParameterSet":
        """Union of several sets; names must be disjoint."""
        merged = cls()
        for param_set in sets:
            for param in param_set.values():
                merged.register(param)
        return merged

    def subset(self, names: Iterable[str]) -> "ParameterSet":
        return ParameterSet(self._params[name] for name in names)

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def zero_grad(self) -> None:
        for param in self._params.values():
            param.zero_grad()

    def num_scalars(self) -> int:
        """Total count of trainable scalars."""
        return sum(param.size for param in self._params.values())

    @property
    def max_depth(self) -> int:
        return max((param.depth for param in self._params.values()), default=0)

    def snapshot(self) -> Dict[str, np.ndarray]:
        """Deep copy of all parameter values."""
        return {name: param.data.copy() for name, param in self._params.items()}

    def load_snapshot(self, values: Mapping[str, np.ndarray]) -> None:
        """
        Overwrite parameter values in place.

        Raises:
            ShapeMismatchError: If names or shapes differ
        """
        self.check_compatible(values)
        for name, param in self._params.items():
            param.data[...] = values[name]

    def check_compatible(self, values: Mapping[str, np.ndarray]) -> None:
        """Verify that values has exactly this set's names and shapes."""
        missing = sorted(set(self._params) - set(values))
        extra = sorted(set(values) - set(self._params))
        if missing or extra:
            raise ShapeMismatchError(
                f"parameter names differ (missing={missing}, unexpected={extra})"
            )
        for name, param in self._params.items():
            shape = np.shape(values[name])
            if shape != param.shape:
                raise ShapeMismatchError(
                    f"parameter '{name}' has shape {param.shape}, got {shape}"
                )

    def depths(self) -> Dict[str, int]:
        return {name: param.depth for name, param in self._params.items()}


def as_tensor(value: object) -> Tensor:
    """Return value unchanged if it is a Tensor, else a constant Tensor."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)
