import wave

import numpy as np
import pytest


@pytest.fixture(scope="session")
def small_model():
    """Randomly initialized 2-layer wav2vec 2.0 with the standard 768-dim
    hidden size; small everywhere else so tests stay fast."""
    import torch
    from transformers import Wav2Vec2Config, Wav2Vec2Model
    config = Wav2Vec2Config(hidden_size=768, num_hidden_layers=2,
                            num_attention_heads=12, intermediate_size=512,
                            conv_dim=(512,) * 7)
    torch.manual_seed(0)
    return Wav2Vec2Model(config).eval()


def write_wav(path, samples):
    data = np.clip(np.round(np.asarray(samples) * 32768.0),
                   -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(data.tobytes())


@pytest.fixture(scope="session")
def wav_manifest(tmp_path_factory):
    """Two short noise utterances plus a manifest pointing at them."""
    root = tmp_path_factory.mktemp("wavs")
    rng = np.random.default_rng(7)
    lines = []
    for i, n in enumerate((16000, 12000)):
        name = f"utt{i}.wav"
        write_wav(root / name, 0.1 * rng.standard_normal(n))
        lines.append(f"utt{i}\tspk0\twav={name}")
    manifest = root / "corpus.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
