"""Deterministic binary container: a zip holding a canonical key-value manifest
and named little-endian 64-bit tensors. Byte-identical for identical contents."""

from __future__ import annotations

import io
import zipfile

import numpy as np
import torch

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def write_container(path, manifest: dict[str, str], tensors: dict[str, torch.Tensor],
                    extra_files: dict[str, str] | None = None) -> None:
    manifest = dict(manifest)
    for name, tensor in tensors.items():
        manifest[f"tensor.{name}"] = ",".join(str(s) for s in tensor.shape) or "scalar"
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        text = "\n".join(f"{k} = {manifest[k]}" for k in sorted(manifest)) + "\n"
        zf.writestr(zipfile.ZipInfo("manifest.txt", _ZIP_DATE), text)
        for name, content in sorted((extra_files or {}).items()):
            zf.writestr(zipfile.ZipInfo(name, _ZIP_DATE), content)
        for name in sorted(tensors):
            data = tensors[name].detach().to(torch.float64).numpy().astype("<f8").tobytes()
            zf.writestr(zipfile.ZipInfo(f"tensors/{name}.bin", _ZIP_DATE), data)


def read_container(path):
    """Returns (manifest without tensor.* keys, tensors, extra file texts)."""
    with zipfile.ZipFile(path) as zf:
        manifest: dict[str, str] = {}
        for line in io.TextIOWrapper(zf.open("manifest.txt"), encoding="utf-8"):
            key, value = line.rstrip("\n").split(" = ", 1)
            manifest[key] = value
        tensors: dict[str, torch.Tensor] = {}
        for key in list(manifest):
            if key.startswith("tensor."):
                shape_text = manifest.pop(key)
                name = key[len("tensor."):]
                shape = () if shape_text == "scalar" else tuple(int(s) for s in shape_text.split(","))
                raw = np.frombuffer(zf.read(f"tensors/{name}.bin"), dtype="<f8").reshape(shape)
                tensors[name] = torch.as_tensor(raw.copy(), dtype=torch.float64)
        extra = {}
        for info in zf.infolist():
            if info.filename not in ("manifest.txt",) and not info.filename.startswith("tensors/"):
                extra[info.filename] = zf.read(info.filename).decode()
    return manifest, tensors, extra
