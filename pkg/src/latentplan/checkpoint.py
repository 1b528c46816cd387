"""JSON checkpoint format.

A checkpoint is one JSON object::

    {"v": 1,
     "params": {"<dotted.path>": {"shape": [...], "dtype": "float32", "data": "<base64>"}},
     "optimizer": {...}, "scheduler": {...}, "epoch": k, "seed": s, "config": {...}}

Tensor payloads are little-endian and keep the tensor's own dtype, so a
float64 model round-trips bitwise as well as a float32 one. Keys are written
sorted, making save -> load -> save byte-identical.
"""

import base64
import binascii
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

_DTYPES: dict[str, tuple[torch.dtype, str]] = {
    "float32": (torch.float32, "<f4"),
    "float64": (torch.float64, "<f8"),
    "int64": (torch.int64, "<i8"),
}
_TENSOR_KEY = "__tensor__"


def param_store(module: nn.Module) -> dict[str, torch.Tensor]:
    """Learnable tensors by dotted path, in sorted order."""
    state = module.state_dict()
    return {k: state[k] for k in sorted(state)}


def encode_tensor(t: torch.Tensor) -> dict[str, Any]:
    name = str(t.dtype).removeprefix("torch.")
    if name not in _DTYPES:
        raise CheckpointError(f"Cannot store tensors of dtype {t.dtype}")
    arr = t.detach().cpu().contiguous().numpy().astype(_DTYPES[name][1], copy=False)
    return {
        "shape": list(t.shape),
        "dtype": name,
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_tensor(entry: dict[str, Any]) -> torch.Tensor:
    try:
        dtype, np_dtype = _DTYPES[entry["dtype"]]
        shape = tuple(int(s) for s in entry["shape"])
        raw = base64.b64decode(entry["data"], validate=True)
        arr = np.frombuffer(raw, dtype=np_dtype)
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"payload holds {arr.size} values, shape {shape} needs {int(np.prod(shape))}")
        return torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="))).reshape(shape).to(dtype)
    except (KeyError, TypeError, ValueError, binascii.Error) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt tensor payload: {exc}") from exc


def encode_state(obj: Any) -> Any:
    """Recursively replace tensors with encoded payloads; dict keys become strings."""
    if isinstance(obj, torch.Tensor):
        return {_TENSOR_KEY: encode_tensor(obj)}
    if isinstance(obj, dict):
        return {str(k): encode_state(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode_state(v) for v in obj]
    return obj


def decode_state(obj: Any) -> Any:
    if isinstance(obj, dict):
        if set(obj) == {_TENSOR_KEY}:
            return decode_tensor(obj[_TENSOR_KEY])
        return {k: decode_state(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [decode_state(v) for v in obj]
    return obj


def encode_optimizer(optimizer: torch.optim.Optimizer) -> dict[str, Any]:
    return encode_state(optimizer.state_dict())


def decode_optimizer(payload: dict[str, Any]) -> dict[str, Any]:
    """Optimizer state dict with integer parameter ids restored."""
    state = decode_state(payload)
    try:
        state["state"] = {int(k): v for k, v in state["state"].items()}
    except (KeyError, ValueError, AttributeError) as exc:
        raise CheckpointError(f"corrupt optimizer state: {exc}") from exc
    return state


def dumps_checkpoint(payload: dict[str, Any]) -> str:
    return json.dumps({"v": CHECKPOINT_VERSION, **payload}, sort_keys=True)


def write_checkpoint(path: str | Path, payload: dict[str, Any]) -> None:
    path = Path(path)
    path.write_text(dumps_checkpoint(payload), encoding="utf-8")
    logger.info(f"Saved checkpoint to {path}")


def read_checkpoint(path: str | Path) -> dict[str, Any]:
    """Parse and validate a checkpoint file.

    Every tensor is decoded here, so a corrupt payload fails before any
    model or optimizer is touched.

    Raises:
        FileNotFoundError: If the file does not exist.
        CheckpointError: On a version mismatch or corrupt content.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise CheckpointError(f"{path} does not hold a checkpoint object")
    version = payload.get("v")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has checkpoint version {version!r}, expected {CHECKPOINT_VERSION}"
        )
    if not isinstance(payload.get("params"), dict):
        raise CheckpointError(f"{path} has no parameter table")
    payload["params"] = {k: decode_tensor(v) for k, v in payload["params"].items()}
    if "optimizer" in payload:
        payload["optimizer"] = decode_optimizer(payload["optimizer"])
    logger.info(f"Loaded checkpoint from {path}")
    return payload


def encode_params(module: nn.Module) -> dict[str, Any]:
    return {k: encode_tensor(v) for k, v in param_store(module).items()}


def load_params(module: nn.Module, params: dict[str, torch.Tensor]) -> None:
    """Copy decoded parameters into ``module`` after checking names and shapes.

    Raises:
        CheckpointError: If names or shapes differ from the module's.
    """
    expected = param_store(module)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointError(f"parameter names differ: missing {missing}, unexpected {extra}")
    for name, tensor in params.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise CheckpointError(
                f"{name}: checkpoint shape {tuple(tensor.shape)} != model shape {tuple(expected[name].shape)}"
            )
    module.load_state_dict(
        {k: v.to(expected[k].dtype) for k, v in params.items()}, strict=True
    )
