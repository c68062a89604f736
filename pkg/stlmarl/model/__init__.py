from typing import Dict, Mapping, Optional

from safetensors import safe_open
from safetensors.torch import load_file, save_file
from torch import nn

from .policy import *

def save_parameters(modules: Mapping[str, nn.Module], filename: str, metadata: Optional[Dict[str, str]] = None):
    """
    Store the parameters of named modules in one safetensors file. Tensors are
    keyed `<module name>.<parameter name>`; the file header records dtype and
    shape of every tensor, `metadata` holds free-form strings.
    """
    tensors = {
        f"{name}.{key}": tensor.detach().contiguous()
        for name, module in modules.items()
        for key, tensor in module.state_dict().items()
    }
    save_file(tensors, filename, metadata=metadata)

def load_parameters(modules: Mapping[str, nn.Module], filename: str) -> Dict[str, str]:
    """Load parameters saved with `save_parameters` into `modules`, returns the stored metadata."""
    tensors = load_file(filename)
    for name, module in modules.items():
        prefix = f"{name}."
        module.load_state_dict({key.removeprefix(prefix): tensor for key, tensor in tensors.items() if key.startswith(prefix)})
    return load_metadata(filename)

def load_metadata(filename: str) -> Dict[str, str]:
    with safe_open(filename, framework="pt") as f:
        return f.metadata() or dict()
