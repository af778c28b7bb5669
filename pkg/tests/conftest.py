import numpy as np
import pytest

from solo.encoding import VISION_BEGIN, VISION_END, VROW_SEP, Patch, Text
from solo.packing import Example


def random_span(rng, patch_size=2, max_rows=3, max_cols=3):
    rows = int(rng.integers(1, max_rows + 1))
    cols = int(rng.integers(1, max_cols + 1))
    out = [VISION_BEGIN]
    for r in range(rows):
        if r:
            out.append(VROW_SEP)
        for _ in range(cols):
            out.append(Patch(rng.integers(0, 256, patch_size * patch_size * 3, dtype=np.uint8).tobytes(),
                             patch_size))
    out.append(VISION_END)
    return out


def random_example(rng, vocab=20, patch_size=2, max_text=12, p_image=0.6, supervised=False,
                   max_rows=3, max_cols=3):
    """Random mix of text runs and vision spans."""
    elements = []
    for _ in range(int(rng.integers(1, 4))):
        if rng.random() < p_image:
            elements += random_span(rng, patch_size, max_rows, max_cols)
        elements += [Text(int(t)) for t in rng.integers(0, vocab, int(rng.integers(0, max_text + 1)))]
    if not elements:
        elements = [Text(0)]
    if supervised:
        cut = int(rng.integers(0, len(elements) + 1))
        response = [t >= cut for t in range(len(elements))]
        return Example(elements, "synthetic", "supervised", response)
    return Example(elements, "synthetic", "pretrain-captioned")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TOY_PATCH = 2
TOY_VOCAB = 20


def toy_model_config(**overrides):
    from solo.model import ModelConfig
    kw = dict(d_model=16, n_layers=2, n_heads=2, ffn_dim=32, text_vocab_size=TOY_VOCAB,
              patch_size=TOY_PATCH, max_seq_len=64)
    kw.update(overrides)
    return ModelConfig(**kw)


# one line per acceptance criterion, filled by test_acceptance and echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
