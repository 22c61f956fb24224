"""Parameter checkpoints: ``(name, shape, data)`` triples plus JSON metadata in one ``.npz``."""

from __future__ import annotations

import json
import zipfile
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np

from sxextract.core.errors import CheckpointError
from sxextract.nn.layers import Module
from sxextract.nn.value import Value

__all__ = ["save_checkpoint", "read_checkpoint", "load_parameters"]

_META_KEY = "__meta__"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path: Path, params: Mapping[str, Value], metadata: Mapping[str, Any]) -> Path:
    """Write parameters and metadata; arrays round-trip bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: np.ascontiguousarray(p.data) for name, p in params.items()}
    if _META_KEY in arrays:
        raise CheckpointError(f"parameter name {_META_KEY!r} is reserved")
    arrays[_META_KEY] = np.array(json.dumps(dict(metadata), sort_keys=True))
    # fixed entry timestamps keep equal checkpoints byte-identical
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            with archive.open(info, "w", force_zip64=True) as handle:
                np.lib.format.write_array(handle, arrays[name], allow_pickle=False)
    return path


def read_checkpoint(path: Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Return ``(arrays, metadata)`` from a checkpoint file."""
    try:
        with np.load(Path(path), allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if _META_KEY not in arrays:
        raise CheckpointError(f"checkpoint {path} has no metadata")
    metadata = json.loads(str(arrays.pop(_META_KEY)))
    return arrays, metadata


def load_parameters(
    module: Module,
    arrays: Mapping[str, np.ndarray],
    prefix: str = "",
    strict: bool = True,
) -> list[str]:
    """Copy arrays into ``module``'s parameters; returns the names loaded.

    ``prefix`` selects a sub-tree of the checkpoint (e.g. ``"encoder."``).
    A shape mismatch names both shapes; with ``strict`` every module
    parameter must be present.
    """
    loaded = []
    for name, param in module.named_parameters():
        key = f"{prefix}{name}"
        if key not in arrays:
            if strict:
                raise CheckpointError(f"checkpoint is missing parameter {key}")
            continue
        source = arrays[key]
        if tuple(source.shape) != param.shape:
            raise CheckpointError(
                f"shape mismatch for {key}: checkpoint has {tuple(source.shape)}, model expects {param.shape}"
            )
        param.data = source.astype(param.data.dtype, copy=True)
        loaded.append(name)
    return loaded
