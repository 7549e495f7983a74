"""Two-stream RGB + SRM segmentation network with ASPP, a segmentation head
and a contrastive projection head."""

from dataclasses import asdict, dataclass, field
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

from cflnet.srm import SrmFilter

CHECKPOINT_FORMAT = "cflnet-checkpoint/1"

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_STAGE_CHANNELS = {
    "resnet50": (256, 512, 1024, 2048),
    "resnet18": (64, 128, 256, 512),
}


@dataclass
class ModelConfig:
    input_size: int = 256
    embed_dim: int = 256
    num_classes: int = 2
    aspp_rates: tuple = (6, 12, 18)
    aspp_channels: int = 256
    encoder: str = "resnet50"
    encoder_stages: int = 4
    pretrained: bool = False
    # 1 = heads at full resolution; 4 = heads at stride 4 (pick k = input_size / 4)
    head_stride: int = 1
    freeze_rgb_bn: bool = False

    def __post_init__(self):
        self.aspp_rates = tuple(int(r) for r in self.aspp_rates)
        if self.encoder not in _STAGE_CHANNELS:
            raise ValueError(f"unknown encoder {self.encoder!r}; choose from {sorted(_STAGE_CHANNELS)}")
        if not 1 <= self.encoder_stages <= 4:
            raise ValueError("encoder_stages must be in 1..4")
        if self.input_size % self.head_stride:
            raise ValueError("input_size must be divisible by head_stride")

    @property
    def encoder_channels(self):
        return _STAGE_CHANNELS[self.encoder][self.encoder_stages - 1]

    @property
    def encoder_stride(self):
        return 4 * 2 ** (self.encoder_stages - 1)


@dataclass
class ModelOutput:
    logits: torch.Tensor
    projection: Optional[torch.Tensor] = None
    features: Optional[torch.Tensor] = field(default=None, repr=False)


def _resnet_stages(cfg, pretrained):
    builder = getattr(torchvision.models, cfg.encoder)
    weights = "DEFAULT" if pretrained else None
    net = builder(weights=weights)
    stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
    layers = [net.layer1, net.layer2, net.layer3, net.layer4][: cfg.encoder_stages]
    return nn.Sequential(stem, *layers)


class ASPP(nn.Module):
    """Parallel 1x1, dilated 3x3 and image-pooling branches, fused by a 1x1 projection.

    Dilated branches pad by edge replication so a constant field stays constant
    and maps smaller than the dilation rate remain valid.
    """

    def __init__(self, in_channels, out_channels=256, rates=(6, 12, 18)):
        super().__init__()
        branches = [nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )]
        for r in rates:
            branches.append(nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 3, padding=r, dilation=r,
                          padding_mode="replicate", bias=False),
                nn.BatchNorm2d(out_channels),
                nn.ReLU(inplace=True),
            ))
        self.branches = nn.ModuleList(branches)
        # no BatchNorm on the pooled branch: a 1x1 map with batch size 1 has no statistics
        self.pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(in_channels, out_channels, 1),
            nn.ReLU(inplace=True),
        )
        self.project = nn.Sequential(
            nn.Conv2d(out_channels * (len(rates) + 2), out_channels, 1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        outs = [b(x) for b in self.branches]
        pooled = self.pool(x).expand(-1, -1, x.shape[-2], x.shape[-1])
        outs.append(pooled)
        return self.project(torch.cat(outs, dim=1))


class SegmentationHead(nn.Module):
    """3x3 conv + ReLU, then a 1x1 conv to class logits."""

    def __init__(self, in_channels, hidden=256, num_classes=2):
        super().__init__()
        self.hidden = nn.Sequential(
            nn.Conv2d(in_channels, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.classifier = nn.Conv2d(hidden, num_classes, 1)

    def forward(self, x, return_features=False):
        h = self.hidden(x)
        logits = self.classifier(h)
        return (logits, h) if return_features else logits


class ProjectionHead(nn.Module):
    """Conv-BatchNorm-Conv map to the raw (unnormalized) embedding space."""

    def __init__(self, in_channels, embed_dim=256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, embed_dim, 1, bias=False),
            nn.BatchNorm2d(embed_dim),
            nn.ReLU(inplace=True),
            nn.Conv2d(embed_dim, embed_dim, 1),
        )

    def forward(self, x):
        return self.net(x)


class CFLNet(nn.Module):
    """Forgery localization network.

    Input is a (B, 3, H, W) RGB batch in raw [0, 255] pixel units. The RGB
    stream sees the image standardized with ImageNet statistics; the noise
    stream sees the SRM residual of the raw pixels.
    """

    def __init__(self, config=None):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        self.srm = SrmFilter()
        self.rgb_encoder = _resnet_stages(cfg, cfg.pretrained)
        self.noise_encoder = _resnet_stages(cfg, False)
        self.aspp = ASPP(2 * cfg.encoder_channels, cfg.aspp_channels, cfg.aspp_rates)
        self.seg_head = SegmentationHead(cfg.aspp_channels, cfg.aspp_channels, cfg.num_classes)
        self.proj_head = ProjectionHead(cfg.aspp_channels, cfg.embed_dim)
        self.register_buffer("rgb_mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("rgb_std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1), persistent=False)
        if cfg.freeze_rgb_bn:
            for m in self.rgb_encoder.modules():
                if isinstance(m, nn.BatchNorm2d):
                    m.requires_grad_(False)

    def train(self, mode=True):
        super().train(mode)
        if self.config.freeze_rgb_bn:
            for m in self.rgb_encoder.modules():
                if isinstance(m, nn.BatchNorm2d):
                    m.eval()
        return self

    def encode_two_stream(self, rgb, srm):
        """Run both encoders and concatenate their deepest maps channel-wise."""
        if rgb.shape[-2:] != srm.shape[-2:]:
            raise ValueError(f"stream size mismatch: rgb {tuple(rgb.shape[-2:])} vs srm {tuple(srm.shape[-2:])}")
        return torch.cat([self.rgb_encoder(rgb), self.noise_encoder(srm)], dim=1)

    def forward(self, image, training=None, return_features=False):
        if training is None:
            training = self.training
        size = self.config.input_size
        if image.dim() != 4 or image.shape[1] != 3 or tuple(image.shape[-2:]) != (size, size):
            raise ValueError(f"expected (B, 3, {size}, {size}) input, got {tuple(image.shape)}")
        srm = self.srm(image)
        rgb = (image / 255.0 - self.rgb_mean.to(image.dtype)) / self.rgb_std.to(image.dtype)
        fused = self.encode_two_stream(rgb, srm)
        a = self.aspp(fused)
        head_size = size // self.config.head_stride
        u = F.interpolate(a, size=(head_size, head_size), mode="bilinear", align_corners=False)
        logits, feats = self.seg_head(u, return_features=True)
        if self.config.head_stride != 1:
            logits = F.interpolate(logits, size=(size, size), mode="bilinear", align_corners=False)
        projection = self.proj_head(u) if training else None
        return ModelOutput(logits=logits, projection=projection,
                           features=feats if return_features else None)

    @torch.no_grad()
    def predict_proba(self, image):
        """Tampered-class probability map (B, H, W), computed in eval mode."""
        was_training = self.training
        self.eval()
        try:
            out = self(image, training=False)
        finally:
            self.train(was_training)
        return out.logits.softmax(dim=1)[:, 1]


def save_checkpoint(path, model, **extra):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
    }
    payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path, map_location="cpu"):
    """Rebuild a model from a checkpoint written by :func:`save_checkpoint`.

    Returns ``(model, payload)``; the model is in eval mode.
    """
    payload = torch.load(path, map_location=map_location, weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    cfg = dict(payload["config"])
    cfg["pretrained"] = False
    model = CFLNet(ModelConfig(**cfg))
    missing, unexpected = model.load_state_dict(payload["state_dict"], strict=False)
    if missing or unexpected:
        raise ValueError(f"{path}: incompatible weights (missing={missing[:5]}, unexpected={unexpected[:5]})")
    model.eval()
    return model, payload
