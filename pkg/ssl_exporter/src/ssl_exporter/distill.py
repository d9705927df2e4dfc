"""Distill frame-aligned (log-mel, embedding) pairs into a frozen
mel-window encoder: a small MLP over an odd context window of mel frames,
exported in the toolkit's frozen-encoder checkpoint layout.

The mel window is a local-context stand-in for transformer context; its
fidelity is whatever the reported held-out R² says, never assumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import formats

NONLIN_IDENTITY = 0
NONLIN_TANH = 1


class AlignmentError(ValueError):
    pass


@dataclass
class DistillReport:
    r2_per_dim: np.ndarray
    r2_mean: float
    n_train: int
    n_val: int
    history: list


def stack_context(mel: np.ndarray, window: int) -> np.ndarray:
    """Edge-replicated shifted copies concatenated along features,
    T x (window * dim); matches the toolkit's frozen-encoder semantics."""
    if window == 1:
        return mel
    half = window // 2
    T = mel.shape[0]
    cols = []
    for off in range(-half, half + 1):
        src = np.clip(np.arange(T) + off, 0, T - 1)
        cols.append(mel[src])
    return np.concatenate(cols, axis=1)


def _gather(pairs, window):
    xs, ys = [], []
    for i, (mel, feats) in enumerate(pairs):
        mel = np.atleast_2d(np.asarray(mel, dtype=np.float64))
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        diff = mel.shape[0] - feats.shape[0]
        if abs(diff) > 1:
            raise AlignmentError(
                f"pair {i}: {mel.shape[0]} mel frames vs "
                f"{feats.shape[0]} feature frames")
        T = min(mel.shape[0], feats.shape[0])
        xs.append(stack_context(mel[:T], window))
        ys.append(feats[:T])
    return np.concatenate(xs), np.concatenate(ys)


def distill_encoder(pairs, out_path, window=3, hidden_sizes=(256,),
                    epochs=200, lr=1e-3, batch=256, seed=0,
                    val_fraction=0.1):
    """Train the MLP with Adam on MSE, write the frozen-encoder checkpoint,
    and return a DistillReport with held-out R² per embedding dimension."""
    import torch

    if window % 2 != 1:
        raise AlignmentError(f"window must be odd, got {window}")
    X, Y = _gather(pairs, window)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if not len(train_idx):
        raise AlignmentError("not enough frames to train")

    torch.manual_seed(seed)
    sizes = [X.shape[1], *hidden_sizes, Y.shape[1]]
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(torch.nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(torch.nn.Tanh())
    net = torch.nn.Sequential(*layers)
    opt = torch.optim.Adam(net.parameters(), lr=lr)

    Xt = torch.as_tensor(X, dtype=torch.float32)
    Yt = torch.as_tensor(Y, dtype=torch.float32)
    tr = torch.as_tensor(train_idx)
    history = []
    for epoch in range(epochs):
        order = tr[torch.randperm(len(tr))]
        for lo in range(0, len(order), batch):
            idx = order[lo: lo + batch]
            opt.zero_grad()
            loss = torch.mean((net(Xt[idx]) - Yt[idx]) ** 2)
            loss.backward()
            opt.step()
        history.append(float(loss.item()))

    net.eval()
    with torch.no_grad():
        pred = net(Xt[torch.as_tensor(val_idx)]).numpy().astype(np.float64)
    truth = Y[val_idx]
    sse = ((pred - truth) ** 2).sum(axis=0)
    sst = ((truth - truth.mean(axis=0)) ** 2).sum(axis=0)
    r2 = 1.0 - sse / np.maximum(sst, 1e-12)

    records = []
    linear = [m for m in net if isinstance(m, torch.nn.Linear)]
    for i, m in enumerate(linear):
        code = NONLIN_TANH if i < len(linear) - 1 else NONLIN_IDENTITY
        w = m.weight.detach().numpy().T.astype(np.float64)
        b = m.bias.detach().numpy().astype(np.float64)
        records.append((w, b, window if i == 0 else 1, code))
    formats.write_frozen_encoder(out_path, records)
    return DistillReport(r2, float(r2.mean()), len(train_idx), len(val_idx),
                         history)


def encoder_forward(path, mel: np.ndarray) -> np.ndarray:
    """Reference forward pass for a written checkpoint (used to verify
    round trips)."""
    import json
    import struct
    with open(path, "rb") as fh:
        blob = fh.read()
    (mlen,) = struct.unpack("<I", blob[4:8])
    metadata = json.loads(blob[8:8 + mlen].decode("utf-8"))
    body = blob[8 + mlen:]
    tensors = {}
    for t in metadata["tensors"]:
        size = 4 * t["rows"] * t["cols"]
        tensors[t["name"]] = np.frombuffer(
            body[t["offset"]: t["offset"] + size],
            dtype="<f4").reshape(t["rows"], t["cols"]).astype(np.float64)
    h = np.atleast_2d(np.asarray(mel, dtype=np.float64))
    for i, spec in enumerate(metadata["meta"]["layers"]):
        h = stack_context(h, int(spec["window"]))
        h = h @ tensors[f"layer{i}_W"] + tensors[f"layer{i}_b"].reshape(-1)
        if spec["nonlinearity"] == NONLIN_TANH:
            h = np.tanh(h)
    return h
