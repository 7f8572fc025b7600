"""Multi-level detector: a K-stage convolutional backbone with per-level
feature alignment, auxiliary classifiers, a concatenated head mixed by a
point-wise convolution, and a bank of per-level domain discriminators.

With K stages there are K-1 auxiliary heads (levels 1..K-1); the backbone's
own classifier is prediction K and the concatenated head is prediction K+1.
The last stage's features are aligned as well (F_K) so the concatenated
feature stacks K aligned vectors of identical length.

At inference the alignment modules, auxiliary heads, and discriminators are
dropped; the stripped model reproduces the full model's final logits
bit-for-bit and carries exactly the baseline parameter count.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

FORMAT_VERSION = 1


@dataclass(frozen=True)
class BackboneSpec:
    levels: int = 4
    channels: tuple = (16, 32, 64, 128)
    aligned_dim: int = 64
    num_classes: int = 2
    input_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.levels < 2:
            raise ValueError("need at least 2 levels")
        if len(self.channels) != self.levels:
            raise ValueError("channels list length must equal the level count")
        if self.aligned_dim <= 0:
            raise ValueError("aligned_dim must be > 0")


@dataclass
class LevelOutputs:
    """Per-level aligned features and all classifier logits for one batch."""

    features: tuple  # F_1..F_{K-1}, each (B, d)
    f_cat: torch.Tensor  # concat of all K aligned features, (B, K*d)
    logits_aux: tuple  # K-1 tensors (B, num_classes)
    logits_final: torch.Tensor
    logits_cat: torch.Tensor

    @property
    def heads(self):
        """All K+1 classifier logits: auxiliaries, final, concatenated."""
        return list(self.logits_aux) + [self.logits_final, self.logits_cat]

    @property
    def emb_features(self):
        """The K embedding-consistency features: F_1..F_{K-1} plus F_cat."""
        return list(self.features) + [self.f_cat]


def _norm_groups(channels: int) -> int:
    for g in (8, 4, 2, 1):
        if channels % g == 0:
            return g
    return 1


def _stage(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size=3, stride=2, padding=1),
        nn.GroupNorm(_norm_groups(cout), cout),
        nn.ReLU(inplace=True),
    )


def _head_linear(cin: int, cout: int) -> nn.Linear:
    # small-scale init keeps the tempered (tau < 1) softmax away from
    # saturation at the start of training while leaving gradients nonzero
    head = nn.Linear(cin, cout)
    nn.init.uniform_(head.weight, -0.01, 0.01)
    nn.init.zeros_(head.bias)
    return head


def _gap(x: torch.Tensor) -> torch.Tensor:
    return x.mean(dim=(2, 3))


class Backbone(nn.Module):
    """The plain classifier: stacked stride-2 stages plus a linear head."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        cins = (3,) + spec.channels[:-1]
        self.stages = nn.ModuleList(_stage(ci, co) for ci, co in zip(cins, spec.channels))
        self.head = _head_linear(spec.channels[-1], spec.num_classes)

    def stage_features(self, x: torch.Tensor):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(_gap(self.stage_features(x)[-1]))


class GRLNet(nn.Module):
    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        self.backbone = Backbone(spec)
        d = spec.aligned_dim
        self.aligners = nn.ModuleList(nn.Linear(c, d) for c in spec.channels)
        self.aux_heads = nn.ModuleList(
            _head_linear(d, spec.num_classes) for _ in range(spec.levels - 1)
        )
        self.pw_mix = nn.Conv1d(spec.levels, spec.levels, kernel_size=1)
        self.cat_head = _head_linear(spec.levels * d, spec.num_classes)

    def forward(self, x: torch.Tensor) -> LevelOutputs:
        stage_feats = self.backbone.stage_features(x)
        aligned = [g(_gap(f)) for g, f in zip(self.aligners, stage_feats)]
        logits_aux = tuple(c(f) for c, f in zip(self.aux_heads, aligned[:-1]))
        logits_final = self.backbone.head(_gap(stage_feats[-1]))
        f_cat = torch.cat(aligned, dim=1)
        mixed = self.pw_mix(torch.stack(aligned, dim=1)).flatten(1)
        logits_cat = self.cat_head(mixed)
        return LevelOutputs(
            features=tuple(aligned[:-1]),
            f_cat=f_cat,
            logits_aux=logits_aux,
            logits_final=logits_final,
            logits_cat=logits_cat,
        )


class DiscriminatorBank(nn.Module):
    """K two-layer discriminators: one per aligned level, the last on F_cat.

    Final layers are zero-initialized so an untrained bank outputs 0.5;
    probabilities are clamped 1e-7 away from {0, 1}.
    """

    CLAMP = 1e-7

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.levels = spec.levels
        d = spec.aligned_dim
        dims = [d] * (spec.levels - 1) + [spec.levels * d]
        self.discs = nn.ModuleList()
        for cin in dims:
            final = nn.Linear(d, 1)
            nn.init.zeros_(final.weight)
            nn.init.zeros_(final.bias)
            self.discs.append(nn.Sequential(nn.Linear(cin, d), nn.ReLU(inplace=True), final))

    def prob(self, index: int, feature: torch.Tensor) -> torch.Tensor:
        net = self.discs[index]
        if feature.shape[-1] != net[0].in_features:
            raise ValueError(
                f"discriminator {index} expects dim {net[0].in_features}, "
                f"got {feature.shape[-1]}"
            )
        p = torch.sigmoid(net(feature).squeeze(-1))
        return p.clamp(self.CLAMP, 1.0 - self.CLAMP)


def discriminate(bank: DiscriminatorBank, features) -> list:
    """Run every discriminator on its feature; returns K probabilities."""
    if len(features) != bank.levels:
        raise ValueError(f"expected {bank.levels} features, got {len(features)}")
    dtype = next(bank.parameters()).dtype
    return [bank.prob(i, torch.as_tensor(f, dtype=dtype)) for i, f in enumerate(features)]


class InferenceNet(nn.Module):
    """Backbone-only model produced by stripping a trained detector."""

    def __init__(self, backbone: Backbone):
        super().__init__()
        self.backbone = backbone
        self.spec = backbone.spec

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)

    def discriminate(self, *args, **kwargs):
        raise NotImplementedError("discriminators are removed from the inference model")


def strip_inference(model: GRLNet) -> InferenceNet:
    """Detach the auxiliary machinery; only the backbone and its head remain."""
    stripped = InferenceNet(copy.deepcopy(model.backbone))
    stripped.eval()
    return stripped


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def build_model(spec: BackboneSpec, seed: int = 0):
    """Seeded construction of a detector and its discriminator bank."""
    torch.manual_seed(int(seed))
    return GRLNet(spec), DiscriminatorBank(spec)


def _images_to_tensor(img, input_size: int) -> torch.Tensor:
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[3] != 3 or arr.shape[1:3] != (input_size, input_size):
        raise ValueError(
            f"expected images shaped (B, {input_size}, {input_size}, 3), got {arr.shape}"
        )
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def forward_levels(model: GRLNet, img) -> LevelOutputs:
    """Evaluation-mode forward pass on [0,1] HWC images (single or batch)."""
    x = _images_to_tensor(img, model.spec.input_size)
    model.eval()
    with torch.no_grad():
        return model(x)


def save_checkpoint(
    path: str,
    model: GRLNet,
    bank: DiscriminatorBank,
    *,
    loss_weights,
    seed: int,
    epoch: int,
    corpus_hash: str,
    extra_state: dict | None = None,
) -> str:
    """Write the parameter archive plus its JSON sidecar; returns sidecar path."""
    payload = {
        "model": model.state_dict(),
        "bank": bank.state_dict(),
        "extra": extra_state or {},
    }
    torch.save(payload, path)
    sidecar = {
        "spec": asdict(model.spec),
        "loss_weights": asdict(loss_weights),
        "seed": int(seed),
        "epoch": int(epoch),
        "corpus_hash": corpus_hash,
        "format_version": FORMAT_VERSION,
    }
    sidecar_path = path + ".json"
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar_path


def load_checkpoint(path: str):
    """Load (model, bank, sidecar, extra_state) from a checkpoint pair."""
    from .regloss import LossWeights

    sidecar_path = path + ".json"
    if not os.path.isfile(path) or not os.path.isfile(sidecar_path):
        raise OSError(f"checkpoint or sidecar missing for {path}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    if sidecar.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format: {sidecar.get('format_version')}")
    spec_kw = dict(sidecar["spec"])
    spec_kw["channels"] = tuple(spec_kw["channels"])
    spec = BackboneSpec(**spec_kw)
    model = GRLNet(spec)
    bank = DiscriminatorBank(spec)
    payload = torch.load(path, weights_only=True)
    model.load_state_dict(payload["model"])
    bank.load_state_dict(payload["bank"])
    sidecar["loss_weights"] = LossWeights(**sidecar["loss_weights"])
    return model, bank, sidecar, payload.get("extra", {})
