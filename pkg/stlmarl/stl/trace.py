from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Optional

import numpy as np
import pandas as pd

from .formula import StlError

class EvaluationError(StlError):
    pass

class ChannelError(EvaluationError):
    pass

class EmptyWindowError(EvaluationError):
    pass


@dataclass(frozen=True, eq=False)
class Trace:
    """
    A discrete-time signal: named scalar channels sampled at the same `length`
    steps. `dt` (seconds per step) is informational, temporal intervals are
    step offsets.
    """
    channels: Mapping[str, np.ndarray]
    dt: float = 1.0
    length: int = field(init=False)

    def __post_init__(self):
        if not self.channels:
            raise EvaluationError("A trace needs at least one channel!")
        series = {name: np.array(values, dtype=np.float64) for name, values in self.channels.items()}
        lengths = {len(values) for values in series.values()}
        if any(values.ndim != 1 for values in series.values()) or len(lengths) != 1:
            raise EvaluationError(f"All channels must be one-dimensional series of identical length, got {lengths}!")
        if (length := lengths.pop()) < 1:
            raise EmptyWindowError("A trace needs at least one step!")
        for values in series.values():
            values.flags.writeable = False
        object.__setattr__(self, "channels", MappingProxyType(series))
        object.__setattr__(self, "length", length)

    def __len__(self):
        return self.length

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise ChannelError(f"Channel '{name}' is not part of the trace (available: {', '.join(self.channels)})!") from None

    def __contains__(self, name: str):
        return name in self.channels

    @property
    def names(self):
        return list(self.channels)

    def window(self, start: int, length: int) -> "Trace":
        """Sub-trace of `length` steps starting at `start`; step `start` becomes step 0."""
        if length < 1:
            raise EmptyWindowError(f"Windows need at least one step, got {length}!")
        if start < 0 or start + length > self.length:
            raise EmptyWindowError(f"Window [{start}, {start + length - 1}] exceeds trace of length {self.length}!")
        return Trace({name: values[start:start + length] for name, values in self.channels.items()}, dt=self.dt)

    @classmethod
    def from_rows(cls, rows: Iterable[Mapping[str, float]], dt: float = 1.0) -> "Trace":
        """Build a trace from per-step channel dictionaries; the first row fixes the channel order."""
        if not (rows := list(rows)):
            raise EmptyWindowError("Cannot build a trace from zero steps!")
        return cls({name: np.fromiter((row[name] for row in rows), np.float64, len(rows)) for name in rows[0]}, dt=dt)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(dict(self.channels))
        frame.insert(0, "t", np.arange(self.length))
        return frame

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path, dt: Optional[float] = None) -> "Trace":
        """
        Read a trace from a CSV file with header `t,<channel>,...`. `t` holds
        step indices (or times, in which case `dt` is inferred from them).
        """
        frame = pd.read_csv(path)
        if frame.columns.empty or frame.columns[0] != "t":
            raise EvaluationError(f"Trace files need a leading 't' column, got {list(frame.columns)}!")
        times = frame.pop("t").to_numpy(dtype=np.float64)
        if dt is None:
            steps = np.diff(times)
            dt = float(steps[0]) if len(steps) and np.allclose(steps, steps[0]) and steps[0] > 0 else 1.0
        return cls({name: frame[name].to_numpy() for name in frame.columns}, dt=dt)
