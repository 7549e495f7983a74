"""Training configuration and its flat ``key = value`` text format."""

from dataclasses import asdict, dataclass, fields

from cflnet.model import ModelConfig


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_decay: float = 0.8
    decay_every: int = 20
    batch_size: int = 4
    epochs: int = 100
    max_steps: int = 0  # 0 = no step cap
    image_size: int = 256
    k: int = 64
    tau: float = 0.1
    ce_weights: tuple = (1.0, 10.0)
    use_contrastive: bool = True
    seed: int = 0
    flip_augment: bool = False
    # model
    encoder: str = "resnet50"
    encoder_stages: int = 4
    embed_dim: int = 256
    aspp_channels: int = 256
    head_stride: int = 1
    pretrained: bool = False
    freeze_rgb_bn: bool = False

    def __post_init__(self):
        self.ce_weights = tuple(float(w) for w in self.ce_weights)
        if len(self.ce_weights) != 2:
            raise ValueError("ce_weights needs exactly two values")
        for name in ("lr", "tau", "batch_size", "epochs", "lr_decay", "decay_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        head = self.image_size // self.head_stride
        if self.image_size % self.k or head % self.k:
            raise ValueError(f"k={self.k} must divide image_size={self.image_size} (and the head resolution {head})")

    def model_config(self):
        return ModelConfig(
            input_size=self.image_size,
            embed_dim=self.embed_dim,
            aspp_channels=self.aspp_channels,
            encoder=self.encoder,
            encoder_stages=self.encoder_stages,
            pretrained=self.pretrained,
            head_stride=self.head_stride,
            freeze_rgb_bn=self.freeze_rgb_bn,
        )

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return TrainConfig(**d)


def _parse_value(field_type, text):
    text = text.strip()
    if field_type in (bool, "bool"):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if field_type in (int, "int"):
        return int(text)
    if field_type in (float, "float"):
        return float(text)
    if field_type in (tuple, "tuple"):
        return tuple(float(v) for v in text.strip("()[] ").split(","))
    return text


def parse_overrides(pairs):
    """Turn ``["key=value", ...]`` into a typed dict; unknown keys raise KeyError."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override must look like key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        key = key.strip()
        if key not in types:
            raise KeyError(f"unknown config key {key!r}")
        out[key] = _parse_value(types[key], value)
    return out


def load_config(path=None, overrides=()):
    """Read a config file (if given), apply overrides, validate."""
    pairs = []
    if path is not None:
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    pairs.append(line.replace(" = ", "=", 1) if " = " in line else line)
    values = parse_overrides(pairs)
    values.update(parse_overrides(overrides))
    return TrainConfig(**values)


def dump_config(cfg):
    lines = []
    for key, value in asdict(cfg).items():
        if isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
