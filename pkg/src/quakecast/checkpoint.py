"""Model checkpoint container.

A checkpoint is a zip archive holding

* ``config.txt``  -- model configuration as flat ``key = value`` lines,
* ``arrays.hdr``  -- one line per array: ``name dtype=f32le shape=a,b,c offset=bytes``,
* ``arrays.bin``  -- raw little-endian float32 data,
* ``frozen.txt``  -- names of frozen parameters, one per line,
* ``meta.txt``    -- ``has_contrastive_head`` and free-form run metadata.
"""

from __future__ import annotations

import io
import zipfile
from pathlib import Path

import numpy as np
import torch

from . import config as cfgio
from .model import ModelConfig, SeismicGNN, strip_contrastive_head

_DATE = (2020, 1, 1, 0, 0, 0)


def _entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, data)


def pack_arrays(arrays: dict[str, np.ndarray]) -> tuple[str, bytes]:
    lines, buf, offset = [], io.BytesIO(), 0
    for name, arr in arrays.items():
        a = np.array(arr, dtype="<f4", order="C")
        shape = ",".join(str(s) for s in a.shape)
        lines.append(f"{name} dtype=f32le shape={shape} offset={offset}")
        raw = a.tobytes()
        buf.write(raw)
        offset += len(raw)
    return "\n".join(lines) + "\n", buf.getvalue()


def unpack_arrays(header: str, blob: bytes) -> dict[str, np.ndarray]:
    out = {}
    for line in header.splitlines():
        if not line.strip():
            continue
        name, *attrs = line.split()
        kv = dict(a.split("=", 1) for a in attrs)
        if kv.get("dtype") != "f32le":
            raise ValueError(f"array {name}: unsupported dtype {kv.get('dtype')}")
        shape = tuple(int(s) for s in kv["shape"].split(",") if s)
        count = int(np.prod(shape)) if shape else 1
        off = int(kv["offset"])
        out[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape).copy()
    return out


def save_checkpoint(path, model: SeismicGNN, meta: dict | None = None) -> None:
    state = model.state_dict()
    arrays = {k: v.detach().cpu().numpy() for k, v in state.items() if v.is_floating_point()}
    header, blob = pack_arrays(arrays)
    frozen = sorted(k for k, f in model.frozen_mask().items() if f)
    info = {"has_contrastive_head": model.has_contrastive_head}
    info.update(meta or {})
    with zipfile.ZipFile(path, "w") as zf:
        cfg_lines = "".join(
            f"{k} = {cfgio.format_value(v)}\n"
            for k, v in sorted(cfgio.flatten("model", model.cfg).items())
        )
        _entry(zf, "config.txt", cfg_lines.encode())
        _entry(zf, "arrays.hdr", header.encode())
        _entry(zf, "arrays.bin", blob)
        _entry(zf, "frozen.txt", ("\n".join(frozen) + "\n").encode())
        _entry(zf, "meta.txt", "".join(f"{k} = {cfgio.format_value(v)}\n" for k, v in sorted(info.items())).encode())


def load_checkpoint(path, dtype=torch.float32) -> SeismicGNN:
    path = Path(path)
    with zipfile.ZipFile(path) as zf:
        entries = {}
        for line in zf.read("config.txt").decode().splitlines():
            if "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                entries[k] = v
        cfg = cfgio.build(ModelConfig, entries, "model")
        arrays = unpack_arrays(zf.read("arrays.hdr").decode(), zf.read("arrays.bin"))
        frozen = {l.strip() for l in zf.read("frozen.txt").decode().splitlines() if l.strip()}
        meta = {}
        for line in zf.read("meta.txt").decode().splitlines():
            if "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                meta[k] = v
    model = SeismicGNN(cfg).to(dtype)
    if meta.get("has_contrastive_head", "true") == "false":
        strip_contrastive_head(model)
    state = model.state_dict()
    for k, v in state.items():
        if k in arrays:
            state[k] = torch.from_numpy(arrays[k]).to(v.dtype)
    model.load_state_dict(state)
    for name, p in model.named_parameters():
        p.requires_grad_(name not in frozen)
    return model
