"""Full model = frozen backbone + trainable condition branch, plus the
single-file checkpoint container.

Checkpoint layout: magic, version, a JSON block (configs + tensor index) and
raw little-endian float32 tensors.  Backbone and branch parameters live in
disjoint ``backbone.`` / ``branch.`` namespaces so the frozen/trainable split
stays auditable.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import Backbone, BackboneConfig
from .branch import BranchConfig, ConditionBranch, ConditionSequence

CHECKPOINT_MAGIC = b"HVCK"
CHECKPOINT_VERSION = 1


class HOIVideoModel(nn.Module):
    def __init__(self, backbone_config: BackboneConfig, branch_config: BranchConfig):
        super().__init__()
        self.backbone = Backbone(backbone_config)
        self.branch = ConditionBranch(self.backbone, branch_config)

    @property
    def backbone_config(self) -> BackboneConfig:
        return self.backbone.config

    @property
    def branch_config(self) -> BranchConfig:
        return self.branch.config

    def freeze_backbone(self) -> None:
        for p in self.backbone.parameters():
            p.requires_grad_(False)

    def backbone_parameter_checksum(self) -> float:
        with torch.no_grad():
            return float(sum(p.double().abs().sum() for p in self.backbone.parameters()))

    def branch_residuals(
        self, xc: ConditionSequence, text_ids, text_mask, t, alpha: float | None = None
    ) -> dict[int, torch.Tensor]:
        t = torch.as_tensor(t, dtype=xc.tokens.dtype).reshape(-1)
        if t.shape[0] == 1 and xc.tokens.shape[0] > 1:
            t = t.expand(xc.tokens.shape[0])
        t_emb = self.backbone.time_embed(t)
        text = self.backbone.embed_text(text_ids)
        return self.branch(xc, text, text_mask, t_emb, alpha=alpha)

    def forward(
        self,
        zt: torch.Tensor,
        text_ids: torch.Tensor,
        text_mask: torch.Tensor,
        t,
        xc: ConditionSequence | None = None,
        alpha: float | None = None,
    ) -> torch.Tensor:
        residuals = None
        if xc is not None:
            residuals = self.branch_residuals(xc, text_ids, text_mask, t, alpha=alpha)
        return self.backbone(zt, text_ids, text_mask, t, residuals=residuals)

    def sample(
        self,
        z1: torch.Tensor,
        text_ids: torch.Tensor,
        text_mask: torch.Tensor,
        steps: int,
        xc: ConditionSequence | None = None,
        alpha: float | None = None,
    ) -> torch.Tensor:
        residual_fn = None
        if xc is not None:
            residual_fn = lambda t: self.branch_residuals(
                xc, text_ids, text_mask, t, alpha=alpha
            )
        return self.backbone.sample(z1, text_ids, text_mask, steps, residual_fn=residual_fn)


# -- checkpoint container ----------------------------------------------------------


def _named_tensors(model: HOIVideoModel) -> dict[str, torch.Tensor]:
    out = {}
    for name, p in model.backbone.named_parameters():
        out[f"backbone.{name}"] = p
    for name, p in model.branch.named_parameters():
        out[f"branch.{name}"] = p
    return out


def save_checkpoint(path: str | Path, model: HOIVideoModel, extra: dict | None = None) -> None:
    tensors = _named_tensors(model)
    index = []
    offset = 0
    blobs = []
    for name, tensor in tensors.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = {
        "backbone_config": dataclasses.asdict(model.backbone_config),
        "branch_config": dataclasses.asdict(model.branch_config),
        "injection_layers": list(model.branch.plan.layers),
        "tensors": index,
        "extra": extra or {},
    }
    payload = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path, freeze_backbone: bool = True) -> tuple[HOIVideoModel, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (magic {magic!r})")
        version, json_len = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(json_len).decode("utf-8"))
        data = fh.read()

    model = HOIVideoModel(
        BackboneConfig(**header["backbone_config"]),
        BranchConfig(**header["branch_config"]),
    )
    tensors = _named_tensors(model)
    with torch.no_grad():
        for entry in header["tensors"]:
            name, shape, offset = entry["name"], entry["shape"], entry["offset"]
            if name not in tensors:
                raise ValueError(f"{path}: unknown tensor {name}")
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            tensors[name].copy_(torch.from_numpy(arr.reshape(shape).copy()))
    if freeze_backbone:
        model.freeze_backbone()
    return model, header.get("extra", {})
