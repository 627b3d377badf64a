"""
Hashing utilities for parameter checksums and config identity.

:hierarchy: [Utils | Hashing]
:relates-to:
 - motivated_by: "Frozen-teacher guard and role-switch checks need exact parameter identity"
 - implements: "SHA256 over named tensors; SHA256 over canonical config JSON"

:contract:
 - pre: "Receives torch module / state dict, or a JSON-serializable mapping"
 - post: "Returns hex digest string"
 - invariant: "Same bytes → same hash; any single-bit parameter change → different hash"

:complexity: 3
:decision_cache: "Hash raw tensor bytes (not rounded values) so checks are bit-exact"
"""

import hashlib
import json
from typing import Any, Dict, Mapping, Union

import torch
from torch import nn

from ikd_mil.utils.formatting import NumpyEncoder


def state_checksum(state: Mapping[str, torch.Tensor]) -> str:
    """
    Compute a bit-exact checksum over a mapping of named tensors.

    :hierarchy: [Utils | Hashing | StateChecksum]
    :contract:
     - pre: "state maps names to tensors"
     - post: "Returns SHA256 hex digest over sorted (name, dtype, shape, bytes)"

    Args:
        state: Mapping such as ``module.state_dict()``

    Returns:
        SHA256 hex digest
    """
    digest = hashlib.sha256()
    for name in sorted(state):
        tensor = state[name].detach().to("cpu").contiguous()
        digest.update(name.encode("utf-8"))
        digest.update(str(tensor.dtype).encode("utf-8"))
        digest.update(str(tuple(tensor.shape)).encode("utf-8"))
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()


def parameter_checksum(model: Union[nn.Module, Mapping[str, torch.Tensor]]) -> str:
    """
    Checksum of every parameter and buffer of a model (fusion logits included).

    :hierarchy: [Utils | Hashing | ParameterChecksum]

    Args:
        model: Module or state dict

    Returns:
        SHA256 hex digest

    Example:
        >>> parameter_checksum(teacher) == parameter_checksum(teacher)
        True
    """
    if isinstance(model, nn.Module):
        return state_checksum(model.state_dict())
    return state_checksum(model)


def config_content_hash(data: Dict[str, Any]) -> str:
    """
    Content hash of a config mapping (canonical JSON, sorted keys).

    :hierarchy: [Utils | Hashing | ConfigContentHash]

    Args:
        data: JSON-serializable mapping (numpy scalars allowed)

    Returns:
        SHA256 hex digest
    """
    canonical = json.dumps(data, sort_keys=True, cls=NumpyEncoder, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
