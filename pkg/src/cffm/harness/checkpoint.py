"""Checkpoints: one CFT1 file per parameter plus manifest.json."""
from __future__ import annotations

import json
from pathlib import Path

from .. import cft
from ..errors import ContractError
from .config import RunConfig
from .model import ToyModel


def save_checkpoint(model: ToyModel, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for p in model.parameters():
        name = f"{p.name}.cft"
        cft.save(d / name, p.data)
        files[p.name] = name
    manifest = {"format": "CFT1", "params": files, "config": model.config.to_dict()}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return d


def load_checkpoint(directory) -> ToyModel:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    model = ToyModel.init(RunConfig.from_dict(manifest["config"]))
    for p in model.parameters():
        if p.name not in manifest["params"]:
            raise ContractError(f"checkpoint has no entry for {p.name}")
        arr = cft.load(d / manifest["params"][p.name])
        if arr.shape != p.shape:
            raise ContractError(f"{p.name}: stored {arr.shape}, expected {p.shape}")
        p.data = arr.astype(p.dtype)
        p.zero_grad()
    return model
