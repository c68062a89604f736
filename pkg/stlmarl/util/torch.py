from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
import torch

DTYPE = torch.float64

@dataclass
class Generators:
    """
    Explicit random number generators; nothing in this package touches the
    global numpy or torch random state.
    """
    numpy: np.random.Generator
    torch: torch.Generator

    @classmethod
    def from_seed(cls, seed: int, *stream: int):
        """Independent generators for `seed`, further split by optional `stream` keys."""
        sequence = np.random.SeedSequence([seed, *stream])
        generator = torch.Generator().manual_seed(int(sequence.generate_state(1, np.uint64)[0]))
        return cls(numpy=np.random.default_rng(sequence), torch=generator)

    def state_dict(self) -> Dict[str, Any]:
        return dict(numpy=self.numpy.bit_generator.state, torch=self.torch.get_state())

    def load_state_dict(self, state: Dict[str, Any]):
        self.numpy.bit_generator.state = state["numpy"]
        self.torch.set_state(state["torch"])

def as_tensor(array, dtype=DTYPE) -> torch.Tensor:
    return torch.as_tensor(np.asarray(array), dtype=dtype)
