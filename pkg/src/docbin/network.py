"""U-Net-like binarization network with FFC residual blocks at its bottleneck.

Three stride-2 down-scale blocks, ``n_ffc_blocks`` FFC residual blocks, three
transpose-convolution up-scale blocks with concatenated skips, and a
1-channel sigmoid head.  ``variant="conv_baseline"`` swaps every spectral
transform for a 1x1 convolution.
"""
from __future__ import annotations

import base64
import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import torch
import yaml
from safetensors.torch import load_file, save_file
from torch import nn

from .ffc import DualTensor, FfcConfig, FFCResidualBlock, check_finite

FORMAT_VERSION = 1
VARIANTS = ("ffc", "conv_baseline")


class ShapeError(ValueError):
    """Raised for inputs whose spatial size the network cannot process."""


class CheckpointSchemaError(ValueError):
    """Raised when a checkpoint does not match the expected layout or version."""


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    base_width: int = 16
    width_multipliers: tuple[int, int, int] = (1, 2, 4)
    n_ffc_blocks: int = 4
    global_ratio: float = 0.5
    local_kernel: int = 3
    use_batch_norm: bool = True
    variant: str = "ffc"
    preset: str = "desk"

    def __post_init__(self):
        object.__setattr__(self, "width_multipliers", tuple(int(m) for m in self.width_multipliers))
        if len(self.width_multipliers) != 3:
            raise ValueError("width_multipliers needs exactly 3 entries")
        if self.n_ffc_blocks < 1:
            raise ValueError("n_ffc_blocks must be >= 1")
        if self.base_width < 4:
            raise ValueError("base_width must be >= 4")
        if self.in_channels not in (1, 3):
            raise ValueError("in_channels must be 1 or 3")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def stage_widths(self) -> tuple[int, int, int]:
        return tuple(self.base_width * m for m in self.width_multipliers)

    @property
    def ffc(self) -> FfcConfig:
        return FfcConfig(
            total_channels=self.stage_widths[-1],
            global_ratio=self.global_ratio,
            local_kernel=self.local_kernel,
            use_batch_norm=self.use_batch_norm,
        )

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["width_multipliers"] = list(self.width_multipliers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "ModelConfig":
        text = resources.files("docbin.configs").joinpath(f"{name}.yaml").read_text()
        doc = yaml.safe_load(text)
        return cls.from_dict({**doc["model"], **overrides})


def conv_bn_relu(c_in: int, c_out: int, stride: int = 1, k: int = 3) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel_size=k, stride=stride, padding=k // 2),
        nn.BatchNorm2d(c_out),
        nn.ReLU(),
    )


class DownBlock(nn.Sequential):
    def __init__(self, c_in: int, c_out: int):
        super().__init__(
            conv_bn_relu(c_in, c_out, stride=2),
            conv_bn_relu(c_out, c_out),
            conv_bn_relu(c_out, c_out),
        )


class UpBlock(nn.Sequential):
    def __init__(self, c_in: int, c_out: int):
        super().__init__(
            nn.ConvTranspose2d(c_in, c_out, kernel_size=3, stride=2, padding=1, output_padding=1),
            nn.BatchNorm2d(c_out),
            nn.ReLU(),
            conv_bn_relu(c_out, c_out),
            conv_bn_relu(c_out, c_out),
        )


class BinarizationNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        w0, w1, w2 = cfg.stage_widths
        spectral = cfg.variant == "ffc"
        self.down = nn.ModuleList([
            DownBlock(cfg.in_channels, w0),
            DownBlock(w0, w1),
            DownBlock(w1, w2),
        ])
        self.bottleneck = nn.ModuleList(
            [FFCResidualBlock(cfg.ffc, spectral=spectral) for _ in range(cfg.n_ffc_blocks)]
        )
        # up[i] consumes concat(previous, down[i] output); iterated deepest first
        self.up_channels = [(w0 + w0, w0), (w1 + w1, w0), (w2 + w2, w1)]
        self.up = nn.ModuleList([UpBlock(c_in, c_out) for c_in, c_out in self.up_channels])
        self.head = nn.Conv2d(w0, 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected (N, {self.cfg.in_channels}, H, W) input, got {tuple(x.shape)}")
        if x.shape[-2] % 8 or x.shape[-1] % 8:
            raise ShapeError(f"spatial size {tuple(x.shape[-2:])} is not divisible by 8")
        skips = []
        for i, block in enumerate(self.down):
            x = check_finite(block(x), f"down.{i}")
            skips.append(x)
        dual = DualTensor.split(x, self.cfg.ffc.global_channels)
        for i, block in enumerate(self.bottleneck):
            dual = block(dual)
            check_finite(dual.local, f"bottleneck.{i}.local")
            check_finite(dual.glob, f"bottleneck.{i}.global")
        x = dual.merge()
        for i in reversed(range(3)):
            x = torch.cat([x, skips[i]], dim=1)
            x = check_finite(self.up[i](x), f"up.{i}")
        logits = check_finite(self.head(x), "head")
        eps = torch.finfo(logits.dtype).eps
        return torch.sigmoid(logits).clamp(eps, 1.0 - eps)


def _init_weights(model: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for module in model.modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            weight = module.weight
            # ConvTranspose2d stores (in, out, k, k); fan-in is over the input side
            if isinstance(module, nn.ConvTranspose2d):
                fan_in = weight.shape[0] * weight.shape[2] * weight.shape[3]
            else:
                fan_in = weight[0].numel()
            bound = (1.0 / fan_in) ** 0.5
            with torch.no_grad():
                weight.copy_(torch.rand(weight.shape, generator=gen) * 2 * bound - bound)
                if module.bias is not None:
                    module.bias.copy_(torch.rand(module.bias.shape, generator=gen) * 2 * bound - bound)
        elif isinstance(module, nn.BatchNorm2d):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)
            module.reset_running_stats()


def build_model(cfg: ModelConfig, seed: int = 0) -> BinarizationNet:
    """Construct the network described by ``cfg`` with seeded initialization."""
    model = BinarizationNet(cfg)
    _init_weights(model, seed)
    return model


def build_conv_baseline(cfg: ModelConfig, seed: int = 0) -> BinarizationNet:
    """Same topology as :func:`build_model` with 1x1 convs in place of spectral transforms."""
    return build_model(cfg.replace(variant="conv_baseline"), seed)


def forward(model: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Eval-mode, gradient-free forward pass."""
    model.eval()
    with torch.no_grad():
        return model(x)


def predict_patches(model, patches) -> np.ndarray:
    """Probability maps ``(N, H, W)`` for image patches ``(N, H, W, C)``.

    ``model`` is any callable mapping an ``(N, C, H, W)`` tensor to
    ``(N, 1, H, W)`` probabilities; modules are switched to eval mode.
    """
    dtype = torch.float32
    if isinstance(model, nn.Module):
        model.eval()
        first = next(model.parameters(), None)
        if first is not None:
            dtype = first.dtype
    x = torch.from_numpy(np.ascontiguousarray(np.asarray(patches).transpose(0, 3, 1, 2))).to(dtype)
    with torch.no_grad():
        out = model(x)
    return out[:, 0].to(torch.float32).numpy()


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def receptive_field_radius(cfg: ModelConfig) -> int:
    """Upper bound on how far (in input pixels) a perturbation can travel
    through the convolution-only baseline.

    Each layer's kernel half-width is multiplied by the stride product
    (jump) at which it operates; transposed convolutions are bounded the
    same way.
    """
    k = cfg.local_kernel
    radius, jump = 0, 1
    for _ in range(3):  # down blocks: stride-2 conv then two convs
        radius += 1 * jump
        jump *= 2
        radius += 2 * 1 * jump
    radius += cfg.n_ffc_blocks * 2 * (k // 2) * jump
    for _ in range(3):  # up blocks: tconv (k=3) then two convs at finer scale
        radius += 1 * jump
        jump //= 2
        radius += 2 * 1 * jump
    return radius


# -- checkpoints ---------------------------------------------------------


@dataclass
class Checkpoint:
    model_config: ModelConfig
    tensors: dict[str, torch.Tensor]
    training_step: int = 0
    rng_state: str = ""
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)


def state_to_tensors(model: nn.Module) -> dict[str, torch.Tensor]:
    tensors = {}
    for name, p in model.named_parameters():
        tensors[f"param.{name}"] = p.detach().to(torch.float32).contiguous().clone()
    for name, b in model.named_buffers():
        b = b.detach()
        if b.is_floating_point():
            b = b.to(torch.float32)
        tensors[f"buffer.{name}"] = b.contiguous().clone()
    return tensors


def save_checkpoint(model: BinarizationNet, path, training_step: int = 0,
                    rng_state: str = "", extra: dict | None = None) -> None:
    """Write model weights and config to a single safetensors file.

    Tensors are stored as ``param.<module path>`` (float32) and
    ``buffer.<module path>``; configuration and bookkeeping live in a single
    sorted-JSON metadata entry so the bytes are reproducible.
    """
    meta = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "training_step": int(training_step),
        "rng_state": rng_state,
        "extra": extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_file(state_to_tensors(model), str(path),
              metadata={"docbin": json.dumps(meta, sort_keys=True)})


def read_checkpoint(path) -> Checkpoint:
    from safetensors import safe_open

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such checkpoint")
    with safe_open(str(path), framework="pt") as f:
        raw = (f.metadata() or {}).get("docbin")
    if raw is None:
        raise CheckpointSchemaError(f"{path}: missing docbin metadata block")
    meta = json.loads(raw)
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointSchemaError(
            f"{path}: checkpoint format_version {version}, this build reads {FORMAT_VERSION}"
        )
    return Checkpoint(
        model_config=ModelConfig.from_dict(meta["model_config"]),
        tensors=load_file(str(path)),
        training_step=meta["training_step"],
        rng_state=meta["rng_state"],
        format_version=version,
        extra=meta.get("extra", {}),
    )


def load_state(model: BinarizationNet, tensors: dict[str, torch.Tensor]) -> None:
    expected = {k: v.shape for k, v in state_to_tensors(model).items()}
    missing = sorted(set(expected) - set(tensors))
    unexpected = sorted(set(tensors) - set(expected))
    wrong_shape = sorted(
        k for k in set(expected) & set(tensors) if tuple(expected[k]) != tuple(tensors[k].shape)
    )
    if missing or unexpected or wrong_shape:
        raise CheckpointSchemaError(
            f"checkpoint does not match model: missing={missing} "
            f"unexpected={unexpected} wrong_shape={wrong_shape}"
        )
    state = {}
    for key, value in tensors.items():
        kind, name = key.split(".", 1)
        state[name] = value
    model.load_state_dict(state, strict=True)


def load_checkpoint(path, model_config: ModelConfig | None = None) -> BinarizationNet:
    """Rebuild a model from a checkpoint file.

    When ``model_config`` is given the tensors are loaded into that
    architecture instead, and any name or shape mismatch is reported.
    """
    ckpt = read_checkpoint(path)
    model = BinarizationNet(model_config or ckpt.model_config)
    load_state(model, ckpt.tensors)
    model.eval()
    return model


def rng_state_to_str(state: dict) -> str:
    return base64.b64encode(json.dumps(state, sort_keys=True).encode()).decode()


def rng_state_from_str(blob: str) -> dict:
    return json.loads(base64.b64decode(blob.encode()))
