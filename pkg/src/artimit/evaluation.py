"""Evaluation metrics: pooled Pearson trajectory correlation, DTW-based
place-of-articulation ABX, frame-level linear probes, and word error rate.

DTW uses cosine distance per frame pair, steps (1,0)/(0,1)/(1,1), and
normalizes the minimal total cost by the winning path's length (endpoints
included). ABX scores a triplet correct when d(A, X) < d(B, X); exact ties
count one half.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import graph, kernels
from .graph import Adam, DimensionError, ParameterSet, Tensor

PLACES = ("labial", "coronal", "dorsal", "none")
MANNERS = ("stop", "fricative", "vowel", "other")


class UndefinedCorrelationError(ValueError):
    pass


class UndefinedWerError(ValueError):
    pass


class LabelCoverageError(ValueError):
    pass


class MissingItemError(KeyError):
    pass


# ---------------------------------------------------------------------------
# Pearson correlation
# ---------------------------------------------------------------------------

def pearson_per_param(pred, truth):
    """Pooled per-parameter Pearson r over frame-aligned trajectory pairs.

    `pred` and `truth` are sequences of T x 6 arrays (or single arrays).
    Returns (r[6], mean_r).
    """
    if isinstance(pred, np.ndarray):
        pred, truth = [pred], [truth]
    ps, ts = [], []
    for p, t in zip(pred, truth, strict=True):
        p, t = np.atleast_2d(p), np.atleast_2d(t)
        if p.shape != t.shape:
            raise DimensionError(f"pair shapes {p.shape} vs {t.shape}")
        ps.append(p)
        ts.append(t)
    P = np.concatenate(ps, axis=0)
    T = np.concatenate(ts, axis=0)
    rs = np.zeros(P.shape[1])
    names = ("JH", "TB", "TD", "TT", "LP", "LH")
    for k in range(P.shape[1]):
        sp, st = P[:, k].std(), T[:, k].std()
        if sp < 1e-12 or st < 1e-12:
            name = names[k] if k < len(names) else str(k)
            raise UndefinedCorrelationError(
                f"zero variance for parameter {name}")
        rs[k] = np.corrcoef(P[:, k], T[:, k])[0, 1]
    return rs, float(rs.mean())


# ---------------------------------------------------------------------------
# DTW
# ---------------------------------------------------------------------------

def cosine_cost_matrix(x, y):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"feature dims {x.shape[1]} vs {y.shape[1]}")
    nx = np.sqrt((x * x).sum(axis=1))
    ny = np.sqrt((y * y).sum(axis=1))
    dots = x @ y.T
    return 1.0 - dots / (np.outer(nx, ny) + graph.COSINE_EPS)


def dtw_distance(x, y):
    """Mean cosine cost per step along the minimal-total-cost warping path."""
    cost = cosine_cost_matrix(x, y)
    if cost.size == 0:
        raise DimensionError("empty sequence")
    total, length = kernels.dtw_accumulate(np.ascontiguousarray(cost))
    return total / length


# ---------------------------------------------------------------------------
# ABX
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VcvItem:
    """One vowel-consonant-vowel token; start/end delimit the consonant's
    frame span within its utterance (the slice representations score on)."""
    utt_id: str
    speaker: str
    consonant: str
    place: str
    manner: str
    context: str  # flanking vowels, e.g. "a_i"
    start: int
    end: int


@dataclass(frozen=True)
class AbxTriplet:
    a: VcvItem
    b: VcvItem
    x: VcvItem

    @property
    def contrast(self):
        return (self.a.consonant, self.b.consonant, self.a.manner)


@dataclass
class AbxReport:
    overall: float
    per_contrast: dict  # contrast -> (n, score)
    n_triplets: int
    n_ties: int
    skipped: list = field(default_factory=list)


def vcv_items_from_segments(utt_id, speaker, segments):
    """Extract V-C-V label runs; `segments` yields
    (label, place, manner, start_frame, end_frame)."""
    items = []
    seq = list(segments)
    for i in range(len(seq) - 2):
        (l1, _, m1, _, _) = seq[i]
        (l2, p2, m2, s2, e2) = seq[i + 1]
        (l3, _, m3, _, _) = seq[i + 2]
        if m1 == "vowel" and m3 == "vowel" and m2 not in ("vowel", "other"):
            items.append(VcvItem(utt_id, speaker, l2, p2, m2,
                                 f"{l1}_{l3}", s2, e2))
    return items


def build_abx_triplets(items, mode="within_speaker", cap_per_contrast=None,
                       seed=0):
    """All valid (A, B, X) triplets: A and X share the consonant, B shares
    A's manner but differs in place.

    Modes: "within_speaker" keeps all three items from one speaker;
    "across_context" ignores speakers but requires A and X to occur in
    different vocalic contexts. Returns (triplets, skipped_contrasts).
    """
    if mode not in ("within_speaker", "across_context"):
        raise ValueError(f"unknown mode {mode!r}")
    triplets = []
    skipped = []
    by_contrast = {}
    for a in items:
        for x in items:
            if x is a or x.consonant != a.consonant:
                continue
            if mode == "within_speaker" and x.speaker != a.speaker:
                continue
            if mode == "across_context" and x.context == a.context:
                continue
            for b in items:
                if b.manner != a.manner or b.place == a.place:
                    continue
                if mode == "within_speaker" and b.speaker != a.speaker:
                    continue
                by_contrast.setdefault((a.consonant, b.consonant, a.manner),
                                       []).append(AbxTriplet(a, b, x))
    consonants = {i.consonant: i for i in items}
    for ca in consonants.values():
        for cb in consonants.values():
            if cb.manner == ca.manner and cb.place != ca.place:
                key = (ca.consonant, cb.consonant, ca.manner)
                if key not in by_contrast:
                    skipped.append(key)
    rng = np.random.default_rng(seed)
    for key in sorted(by_contrast):
        group = by_contrast[key]
        group = sorted(set(group), key=lambda t: (t.a.utt_id, t.b.utt_id, t.x.utt_id))
        if cap_per_contrast is not None and len(group) > cap_per_contrast:
            pick = rng.choice(len(group), size=cap_per_contrast, replace=False)
            group = [group[i] for i in sorted(pick)]
        triplets.extend(group)
    return triplets, sorted(skipped)


def abx_score(triplets, representation) -> AbxReport:
    """`representation` maps a VcvItem to its T x D matrix."""
    per = {}
    ties = 0
    cache = {}

    def render(item):
        if item not in cache:
            try:
                cache[item] = np.atleast_2d(representation(item))
            except KeyError as e:
                raise MissingItemError(f"cannot render item {item.utt_id!r}") from e
        return cache[item]

    for t in triplets:
        dax = dtw_distance(render(t.a), render(t.x))
        dbx = dtw_distance(render(t.b), render(t.x))
        if dax < dbx:
            score = 1.0
        elif dax == dbx:
            score = 0.5
            ties += 1
        else:
            score = 0.0
        n, s = per.get(t.contrast, (0, 0.0))
        per[t.contrast] = (n + 1, s + score)
    per_contrast = {k: (n, s / n) for k, (n, s) in per.items()}
    total = sum(n for n, _ in per_contrast.values())
    overall = (sum(n * sc for n, sc in per_contrast.values()) / total
               if total else float("nan"))
    return AbxReport(overall, per_contrast, total, ties)


# ---------------------------------------------------------------------------
# Linear probes
# ---------------------------------------------------------------------------

@dataclass
class ProbeModel:
    weights: np.ndarray  # D x K
    bias: np.ndarray     # K
    classes: list
    history: list = field(default_factory=list)

    def predict(self, features):
        logits = np.atleast_2d(features) @ self.weights + self.bias
        return np.argmax(logits, axis=1)

    def to_tensors(self):
        return {"weights": self.weights, "bias": self.bias.reshape(1, -1)}


@dataclass
class ProbeConfig:
    lr: float = 0.05
    epochs: int = 100
    weight_decay: float = 1e-4
    seed: int = 0


def train_probe(features, labels, cfg: ProbeConfig | None = None) -> ProbeModel:
    """Multinomial logistic regression on frame features, Adam on
    cross-entropy with L2 weight decay."""
    cfg = cfg or ProbeConfig()
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = list(labels)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise LabelCoverageError("need at least 2 classes in training labels")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[l] for l in labels])
    D, K = X.shape[1], len(classes)

    params = ParameterSet()
    rng = np.random.default_rng(cfg.seed)
    params.add("W", rng.normal(0, 0.01, size=(D, K)))
    params.add("b", np.zeros(K))
    opt = Adam(params, lr=cfg.lr)
    onehot = np.zeros((len(y), K))
    onehot[np.arange(len(y)), y] = 1.0

    history = []
    for epoch in range(cfg.epochs):
        params.zero_grad()
        logits = Tensor(X) @ params["W"] + params["b"]
        shift = logits.value.max(axis=1, keepdims=True)  # detached stabilizer
        ex = (logits - shift).exp()
        logz = ex.sum(axis=1, keepdims=True).log() + shift
        nll = ((logz - logits) * onehot).sum() * (1.0 / len(y))
        loss = nll + params["W"].square().sum() * cfg.weight_decay
        loss.backward()
        opt.step()
        history.append(float(loss.item()))
    return ProbeModel(params["W"].value.copy(), params["b"].value.copy(),
                      classes, history)


def probe_accuracy(model: ProbeModel, features, labels):
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = list(labels)
    for l in labels:
        if l not in model.classes:
            raise LabelCoverageError(f"label {l!r} absent from training classes")
    y = np.array([model.classes.index(l) for l in labels])
    return float(np.mean(model.predict(X) == y))


# ---------------------------------------------------------------------------
# WER
# ---------------------------------------------------------------------------

def wer(reference, hypothesis):
    """(substitutions + deletions + insertions) / len(reference), unit costs."""
    ref, hyp = list(reference), list(hypothesis)
    if not ref:
        raise UndefinedWerError("empty reference")
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (0 if r == h else 1))
        prev = cur
    return prev[-1] / len(ref)
