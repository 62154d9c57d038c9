"""U-Net backbone with reflectance/shading/non-Lambertian/uncertainty heads, and baselines.

Architectures:

* ``direct_cnn``      five 3x3 convs, no pooling, predicts R and S
* ``unet2``           U-Net, R and S heads
* ``unet3_physics``   U-Net, R, S and N heads
* ``proposed_noskip`` U-Net, R, S, N heads + 3-channel log-variance head on decoder features
* ``proposed_full``   as above, uncertainty head sees ``[features; input image]``
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

ARCHS = ("direct_cnn", "unet2", "unet3_physics", "proposed_noskip", "proposed_full")
PROPOSED = ("proposed_noskip", "proposed_full")
CHECKPOINT_FORMAT = "iuq-checkpoint"
CHECKPOINT_VERSION = 1
DIRECT_CNN_WIDTHS = (32, 64, 64, 48)


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "proposed_full"
    # 18 keeps the 4-level doubling backbone at ~1.25M parameters
    base_channels: int = 18
    levels: int = 4
    dropout_rate: float = 0.1
    logvar_clamp: tuple[float, float] = (-10.0, 2.0)
    uncertainty_hidden: int = 48
    resolution: int = 256

    def __post_init__(self) -> None:
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.base_channels < 1 or self.levels < 1 or self.uncertainty_hidden < 1:
            raise ValueError("base_channels, levels and uncertainty_hidden must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        lo, hi = self.logvar_clamp
        if not lo < hi:
            raise ValueError("logvar_clamp low must be < high")
        object.__setattr__(self, "logvar_clamp", (float(lo), float(hi)))
        if self.arch != "direct_cnn" and self.resolution % (2**self.levels):
            raise ValueError(f"resolution {self.resolution} not divisible by 2**levels")

    @property
    def has_n(self) -> bool:
        return self.arch in ("unet3_physics",) + PROPOSED

    @property
    def has_uncertainty(self) -> bool:
        return self.arch in PROPOSED

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["logvar_clamp"] = list(self.logvar_clamp)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelSpec":
        d = dict(d)
        d["logvar_clamp"] = tuple(d["logvar_clamp"])
        return cls(**d)


@dataclass
class ModelOutputs:
    R_hat: torch.Tensor
    S_hat: torch.Tensor
    I_hat: torch.Tensor
    N_hat: torch.Tensor | None = None
    logvar: torch.Tensor | None = None
    features: torch.Tensor | None = field(default=None, repr=False)

    def detach(self) -> "ModelOutputs":
        def d(t):
            return None if t is None else t.detach()

        return ModelOutputs(d(self.R_hat), d(self.S_hat), d(self.I_hat), d(self.N_hat), d(self.logvar), d(self.features))


def _double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.ReLU(inplace=True),
    )


class UNetBackbone(nn.Module):
    """Encoder of ``levels`` (double conv, dropout, 2x2 max-pool) blocks, mirrored decoder.

    No normalization layers. Dropout follows each encoder block's second conv
    and is controlled by the ``stochastic`` argument rather than module mode.
    """

    def __init__(self, in_channels: int, base: int, levels: int, dropout_rate: float):
        super().__init__()
        widths = [base * 2**i for i in range(levels)]
        self.dropout_rate = dropout_rate
        self.encoder = nn.ModuleList()
        c = in_channels
        for w in widths:
            self.encoder.append(_double_conv(c, w))
            c = w
        self.up = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for w in reversed(widths):
            self.up.append(nn.ConvTranspose2d(c, w, kernel_size=2, stride=2))
            self.decoder.append(_double_conv(2 * w, w))
            c = w
        self.out_channels = base

    def forward(self, x: torch.Tensor, stochastic: bool = False) -> torch.Tensor:
        skips = []
        for block in self.encoder:
            x = block(x)
            if self.dropout_rate > 0:
                x = F.dropout(x, self.dropout_rate, training=stochastic)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        for up, block, skip in zip(self.up, self.decoder, reversed(skips)):
            x = block(torch.cat([up(x), skip], dim=1))
        return x


class UncertaintyHead(nn.Module):
    """3x3 conv + ReLU, 1x1 conv to (log var_tex, log var_light, log var_nl)."""

    def __init__(self, feat_channels: int, hidden: int, use_image: bool):
        super().__init__()
        self.use_image = use_image
        cin = feat_channels + (3 if use_image else 0)
        self.net = nn.Sequential(nn.Conv2d(cin, hidden, 3, padding=1), nn.ReLU(inplace=True), nn.Conv2d(hidden, 3, 1))

    def forward(self, features: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
        x = torch.cat([features, image], dim=1) if self.use_image else features
        return self.net(x)


class IntrinsicNet(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.backbone = UNetBackbone(3, spec.base_channels, spec.levels, spec.dropout_rate)
        c = self.backbone.out_channels
        self.head_R = nn.Conv2d(c, 3, 1)
        self.head_S = nn.Conv2d(c, 3, 1)
        self.head_N = nn.Conv2d(c, 3, 1) if spec.has_n else None
        self.uncertainty_head = (
            UncertaintyHead(c, spec.uncertainty_hidden, use_image=spec.arch == "proposed_full")
            if spec.has_uncertainty
            else None
        )

    def forward(self, image: torch.Tensor, stochastic: bool = False) -> ModelOutputs:
        d = self.backbone(image, stochastic=stochastic)
        R = torch.sigmoid(self.head_R(d))
        S = torch.sigmoid(self.head_S(d))
        N = F.relu(self.head_N(d)) if self.head_N is not None else None
        I_hat = R * S + N if N is not None else R * S
        logvar = None
        if self.uncertainty_head is not None:
            lo, hi = self.spec.logvar_clamp
            logvar = torch.clamp(self.uncertainty_head(d, image), lo, hi)
        return ModelOutputs(R_hat=R, S_hat=S, I_hat=I_hat, N_hat=N, logvar=logvar, features=d)

    def main_parameters(self) -> list[nn.Parameter]:
        unc = {id(p) for p in self.uncertainty_parameters()}
        return [p for p in self.parameters() if id(p) not in unc]

    def uncertainty_parameters(self) -> list[nn.Parameter]:
        return list(self.uncertainty_head.parameters()) if self.uncertainty_head is not None else []


class DirectCNN(nn.Module):
    """Five 3x3 conv layers, no pooling or skips; last layer emits R and S logits."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        layers: list[nn.Module] = []
        c = 3
        for w in DIRECT_CNN_WIDTHS:
            layers += [nn.Conv2d(c, w, 3, padding=1), nn.ReLU(inplace=True)]
            c = w
        layers.append(nn.Conv2d(c, 6, 3, padding=1))
        self.net = nn.Sequential(*layers)
        self.head_N = None
        self.uncertainty_head = None

    def forward(self, image: torch.Tensor, stochastic: bool = False) -> ModelOutputs:
        logits = self.net(image)
        R = torch.sigmoid(logits[:, :3])
        S = torch.sigmoid(logits[:, 3:])
        return ModelOutputs(R_hat=R, S_hat=S, I_hat=R * S)

    def main_parameters(self) -> list[nn.Parameter]:
        return list(self.parameters())

    def uncertainty_parameters(self) -> list[nn.Parameter]:
        return []


Model = IntrinsicNet | DirectCNN


def build_model(spec: ModelSpec, seed: int | None = None) -> Model:
    """Instantiate the architecture; ``seed`` fixes the (fan-in uniform) initialization."""
    if spec.arch not in ARCHS:
        raise ValueError(f"unknown arch {spec.arch!r}")
    if seed is not None:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            return DirectCNN(spec) if spec.arch == "direct_cnn" else IntrinsicNet(spec)
    return DirectCNN(spec) if spec.arch == "direct_cnn" else IntrinsicNet(spec)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def to_batch(image: Any) -> torch.Tensor:
    """Accept (3,H,W) / (B,3,H,W) numpy arrays or tensors; return a float32 batch tensor."""
    t = image if isinstance(image, torch.Tensor) else torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
    if t.ndim == 3:
        t = t[None]
    if t.ndim != 4 or t.shape[1] != 3:
        raise ValueError(f"expected (B,3,H,W) input, got {tuple(t.shape)}")
    return t.float()


def forward(model: Model, image: Any, stochastic: bool = False) -> ModelOutputs:
    """Run the model on one image or a batch, checking the configured resolution."""
    x = to_batch(image)
    res = model.spec.resolution
    if tuple(x.shape[-2:]) != (res, res):
        raise ValueError(f"model expects {res}x{res} input, got {x.shape[-2]}x{x.shape[-1]}")
    with torch.no_grad():
        return model(x, stochastic=stochastic).detach()


def save_checkpoint(model: Model, path: str | Path, extra: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "spec": model.spec.to_dict(),
            "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
            "extra": extra or {},
        },
        path,
    )
    return path


def load_checkpoint(path: str | Path) -> Model:
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an iuq checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    model = build_model(ModelSpec.from_dict(blob["spec"]))
    model.load_state_dict(blob["state_dict"])
    return model
