import pytest

from prefixasr import trainer
from prefixasr.config import load_config
from prefixasr.toydata import write_toy_corpus

# small model + short schedules for fast unit tests
FAST_OVERRIDES = [
    "encoder.num_layers=1",
    "encoder.d_model=32",
    "encoder.ffn_dim=64",
    "encoder.num_heads=2",
    "encoder.subsample_channels=16",
    "encoder.dropout=0.0",
    "lm.d_llm=64",
    "lm.num_layers=1",
    "lm.num_heads=2",
    "lm.ffn_dim=128",
    "lm.dropout=0.0",
    "training.valid_fraction=0.0",
    "training.eval_interval=10",
    "training.mask_fraction=0.1",
    "training.pretrain.max_steps=30",
    "training.pretrain.warmup_steps=5",
    "training.joint.max_steps=30",
    "training.joint.warmup_steps=5",
]


def fast_config(extra=()):
    return load_config(overrides=FAST_OVERRIDES + list(extra))


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Rendered tone corpus shared across tests: (manifest path, entries)."""
    manifest = write_toy_corpus(tmp_path_factory.mktemp("corpus"))
    return manifest, trainer.read_manifest(manifest)
