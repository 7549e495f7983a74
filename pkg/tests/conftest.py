import pytest
import torch

from cflnet.config import TrainConfig
from cflnet.model import CFLNet, ModelConfig

# reduced encoder used wherever the full ResNet-50 would only cost time
TOY = dict(image_size=64, k=16, encoder="resnet18", encoder_stages=2, embed_dim=64, aspp_channels=64)


@pytest.fixture
def toy_cfg():
    return TrainConfig(**TOY)


@pytest.fixture
def tiny_model():
    torch.manual_seed(0)
    cfg = ModelConfig(input_size=32, embed_dim=8, aspp_channels=8, encoder="resnet18", encoder_stages=2)
    return CFLNet(cfg)


ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    """Log one pass/fail line per acceptance criterion for the terminal summary."""
    def record(number, name, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {name}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
