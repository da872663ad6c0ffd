import numpy as np
import pytest

from twinflow.config import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_config():
    """Smallest config that still exercises every mechanism."""
    return RunConfig(
        depth=1, width=8, d_in=4, seq_video=3, seq_audio=3,
        seq_ref_video=2, seq_ref_audio=2, seq_text=2, n_text_templates=4,
        lora_rank=2, mlp_ratio=2, seed=7,
    )


@pytest.fixture
def small_config():
    """Two blocks, a bit wider; used where depth matters."""
    return RunConfig(
        depth=2, width=16, d_in=6, seq_video=4, seq_audio=4,
        seq_ref_video=2, seq_ref_audio=2, seq_text=2, n_text_templates=4,
        lora_rank=4, mlp_ratio=2, seed=3,
    )
