"""Sentence encoder: frozen feature extractor + trainable MLP head.

A small pretrained causal LM (frozen) produces a feature vector per
sentence: the final-layer hidden state at a dedicated terminal token
appended to the sentence. A four-layer ReLU MLP maps features to the
latent space. The head is trained with a contrastive objective: for each
triplet of sentences (t1 < t2 < t3) from one document, the true middle
must outscore the middles of all other triplets in the batch under the
bridge transition log density with relative times (0, t2-t1, t3-t1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .bridge import DEFAULT_VAR_FLOOR
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DimensionError, DomainError
from .nn import (
    Adam,
    MlpHead,
    SgdMomentum,
    TransformerConfig,
    TransformerLM,
    finite_difference_check,
    params_hash,
)
from .tokenizer import TokenizedDocument

logger = logging.getLogger(__name__)

DEFAULT_LATENT_DIM = 32


@dataclass(frozen=True)
class Triplet:
    """Ordered sentence indices within one document."""

    doc_id: str
    t1: int
    t2: int
    t3: int

    def __post_init__(self):
        if not 0 <= self.t1 < self.t2 < self.t3:
            raise DomainError(f"triplet indices must satisfy 0 <= t1 < t2 < t3, "
                              f"got ({self.t1}, {self.t2}, {self.t3})")


@dataclass
class EncoderTrainConfig:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 32
    steps: int = 500
    seed: int = 0
    log_every: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DomainError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise DomainError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 2:
            raise DomainError("batch_size must be >= 2 (in-batch negatives)")


class FeatureExtractor:
    """Frozen causal LM exposing per-sentence feature vectors."""

    def __init__(self, model: TransformerLM, sentence_eos_id: int):
        self.model = model
        self.sentence_eos_id = sentence_eos_id
        self._hash = params_hash(model.params)

    @property
    def feature_width(self) -> int:
        return self.model.cfg.d_model

    @property
    def context_limit(self) -> int:
        # One slot is reserved for the appended terminal token.
        return self.model.cfg.context - 1

    def weight_hash(self) -> str:
        return params_hash(self.model.params)

    def assert_frozen(self):
        if self.weight_hash() != self._hash:
            raise DomainError("feature extractor weights changed after freezing")

    def extract(self, sentence_tokens) -> np.ndarray:
        """Final-layer hidden state at the sentence's terminal position.

        Sentences longer than context_limit are truncated from the left,
        keeping the end.
        """
        ids = np.asarray(sentence_tokens, dtype=np.int64).ravel()
        if ids.size == 0:
            raise DomainError("cannot extract features from an empty sentence")
        if ids.size > self.context_limit:
            ids = ids[-self.context_limit:]
        seq = np.concatenate([ids, [self.sentence_eos_id]])
        hidden = self.model.hidden_states(seq[None, :])
        return hidden[0, -1]

    def extract_document(self, doc: TokenizedDocument) -> np.ndarray:
        """(n_sentences, feature_width) feature matrix for one document."""
        return np.stack([self.extract(doc.sentence_tokens(i))
                         for i in range(doc.n_sentences)])


def encode(extractor: FeatureExtractor, head: MlpHead, sentence_tokens) -> np.ndarray:
    """Latent point for one sentence; output length is the latent dimension."""
    return head(extractor.extract(sentence_tokens)[None, :])[0]


def encode_document(extractor: FeatureExtractor, head: MlpHead,
                    doc: TokenizedDocument) -> np.ndarray:
    """(n_sentences, d) latent trajectory of a document's sentences."""
    return head(extractor.extract_document(doc))


# ---------------------------------------------------------------------------
# contrastive objective
# ---------------------------------------------------------------------------

def contrastive_loss(z1: np.ndarray, z2: np.ndarray, z3: np.ndarray,
                     t_mid: np.ndarray, t_end: np.ndarray,
                     var_floor: float = DEFAULT_VAR_FLOOR,
                     want_grads: bool = False):
    """InfoNCE over in-batch middle candidates scored by bridge log density.

    z1, z2, z3: (B, d) encoded triplet points. t_mid, t_end: relative times
    of the middle and the end (start is 0), so triplet i is scored under the
    bridge pinned at (z1[i], 0) and (z3[i], t_end[i]) evaluated at t_mid[i].
    Candidates for row i are every z2[j] in the batch; the diagonal is true.

    Returns (loss, per_triplet) or (loss, per_triplet, (dz1, dz2, dz3)).
    """
    z1, z2, z3 = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (z1, z2, z3))
    B, d = z2.shape
    if B < 2:
        raise DomainError("contrastive loss needs batch size >= 2 for negatives")
    if z1.shape != (B, d) or z3.shape != (B, d):
        raise DimensionError("triplet arrays must share shape (B, d)")
    t_mid = np.asarray(t_mid, dtype=np.float64).ravel()
    t_end = np.asarray(t_end, dtype=np.float64).ravel()
    if t_mid.shape != (B,) or t_end.shape != (B,):
        raise DimensionError("t_mid and t_end must have one entry per triplet")
    if np.any(t_mid <= 0) or np.any(t_mid >= t_end):
        raise DomainError("relative times must satisfy 0 < t_mid < t_end")

    tau = t_mid / t_end
    var = np.maximum(t_mid * (t_end - t_mid) / t_end, var_floor)  # (B,)
    mean = (1.0 - tau)[:, None] * z1 + tau[:, None] * z3           # (B, d)

    # diff[i, j] = z2[j] - mean[i]
    diff = z2[None, :, :] - mean[:, None, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    scores = -0.5 * d * np.log(2.0 * np.pi * var)[:, None] - sq / (2.0 * var)[:, None]

    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    per_triplet = logz - np.diag(shifted)
    loss = float(per_triplet.mean())
    if not want_grads:
        return loss, per_triplet

    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    g = (probs - np.eye(B)) / B                      # dL/dscores
    w = g / var[:, None]                             # row-scaled
    dz2 = -np.einsum("ij,ijk->jk", w, diff)
    dmean = np.einsum("ij,ijk->ik", w, diff)
    dz1 = (1.0 - tau)[:, None] * dmean
    dz3 = tau[:, None] * dmean
    return loss, per_triplet, (dz1, dz2, dz3)


def sample_triplet_indices(rng: np.random.Generator, n_sentences: int) -> tuple[int, int, int]:
    """Uniform strictly ordered triple from range(n_sentences)."""
    if n_sentences < 3:
        raise DomainError(f"need >= 3 sentences, got {n_sentences}")
    idx = rng.choice(n_sentences, size=3, replace=False)
    idx.sort()
    return int(idx[0]), int(idx[1]), int(idx[2])


@dataclass
class TripletFeatureBatch:
    """Frozen feature vectors of a triplet batch plus relative times."""

    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    t_mid: np.ndarray
    t_end: np.ndarray


def _batch_loss(head: MlpHead, batch: TripletFeatureBatch, want_grads: bool):
    B = batch.x1.shape[0]
    stacked = np.concatenate([batch.x1, batch.x2, batch.x3], axis=0)
    z, cache = head.forward(stacked)
    z1, z2, z3 = z[:B], z[B:2 * B], z[2 * B:]
    if not want_grads:
        loss, per = contrastive_loss(z1, z2, z3, batch.t_mid, batch.t_end)
        return loss, per, None
    loss, per, (dz1, dz2, dz3) = contrastive_loss(
        z1, z2, z3, batch.t_mid, batch.t_end, want_grads=True)
    grads, _ = head.backward(cache, np.concatenate([dz1, dz2, dz3], axis=0))
    return loss, per, grads


def sample_feature_batch(rng: np.random.Generator,
                         features: list[np.ndarray],
                         batch_size: int) -> TripletFeatureBatch:
    """Draw batch_size triplets uniformly across eligible documents."""
    eligible = [f for f in features if f.shape[0] >= 3]
    if not eligible:
        raise DomainError("no document has >= 3 sentences")
    x1, x2, x3, tm, te = [], [], [], [], []
    for _ in range(batch_size):
        f = eligible[int(rng.integers(len(eligible)))]
        t1, t2, t3 = sample_triplet_indices(rng, f.shape[0])
        x1.append(f[t1])
        x2.append(f[t2])
        x3.append(f[t3])
        tm.append(float(t2 - t1))
        te.append(float(t3 - t1))
    return TripletFeatureBatch(np.stack(x1), np.stack(x2), np.stack(x3),
                               np.array(tm), np.array(te))


def train_head_on_features(features: list[np.ndarray], cfg: EncoderTrainConfig,
                           latent_dim: int = DEFAULT_LATENT_DIM,
                           hidden_width: int = 128,
                           head: MlpHead | None = None):
    """Core trainer over precomputed per-document feature matrices.

    Returns (head, loss_curve) where loss_curve is a list of
    (step, mean loss since last record).
    """
    eligible = [np.asarray(f, dtype=np.float64) for f in features if f.shape[0] >= 3]
    skipped = len(features) - len(eligible)
    if skipped:
        logger.info("skipping %d documents with < 3 sentences", skipped)
    if not eligible:
        raise DomainError("no document has >= 3 sentences")
    feat_width = eligible[0].shape[1]

    rng = np.random.default_rng(cfg.seed)
    if head is None:
        head = MlpHead(feat_width, latent_dim, hidden_width=hidden_width, seed=cfg.seed)
    opt = SgdMomentum(cfg.learning_rate, cfg.momentum)
    curve: list[tuple[int, float]] = []
    window: list[float] = []
    for step in range(cfg.steps):
        batch = sample_feature_batch(rng, eligible, cfg.batch_size)
        loss, _, grads = _batch_loss(head, batch, want_grads=True)
        opt.step(head.params, grads)
        window.append(loss)
        if (step + 1) % cfg.log_every == 0 or step == cfg.steps - 1:
            curve.append((step + 1, float(np.mean(window))))
            window.clear()
    return head, curve


@dataclass
class ExtractorPretrainConfig:
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    context: int = 256
    window: int = 128
    steps: int = 250
    batch_size: int = 4
    learning_rate: float = 1e-3
    seed: int = 0
    log_every: int = 25


def pretrain_extractor(docs: list[TokenizedDocument], vocab_size: int,
                       eot_id: int, cfg: ExtractorPretrainConfig):
    """Train the small causal LM that will be frozen as the extractor.

    Documents are concatenated with an end-of-text token between them and
    the model fits next-token prediction on random windows of the stream.
    Returns (model, loss curve); freeze by wrapping in FeatureExtractor.
    """
    if not docs:
        raise DomainError("empty corpus")
    stream = np.concatenate(
        [np.concatenate([d.tokens, [eot_id]]) for d in docs])
    window = min(cfg.window, cfg.context)
    if len(stream) <= window:
        raise DomainError(f"corpus stream of {len(stream)} tokens is shorter "
                          f"than the training window {window}")
    model_cfg = TransformerConfig(vocab_size=vocab_size, context=cfg.context,
                                  d_model=cfg.d_model, n_heads=cfg.n_heads,
                                  n_layers=cfg.n_layers)
    model = TransformerLM(model_cfg, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(lr=cfg.learning_rate)
    curve: list[tuple[int, float]] = []
    pending: list[float] = []
    for step in range(cfg.steps):
        starts = rng.integers(0, len(stream) - window, size=cfg.batch_size)
        batch = np.stack([stream[s:s + window] for s in starts])
        loss, grads = model.loss_and_grads(batch)
        opt.step(model.params, grads)
        pending.append(loss)
        if (step + 1) % cfg.log_every == 0 or step == cfg.steps - 1:
            curve.append((step + 1, float(np.mean(pending))))
            pending.clear()
    return model, curve


EXTRACTOR_FORMAT = 1


def save_extractor(path, model: TransformerLM, cfg: ExtractorPretrainConfig) -> None:
    meta = {
        "kind": "extractor",
        "format": EXTRACTOR_FORMAT,
        "model": model.state_meta(),
        "train_config": {
            "window": cfg.window, "steps": cfg.steps, "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate, "seed": cfg.seed,
        },
        "seed": cfg.seed,
    }
    save_checkpoint(path, model.params, meta)


def load_extractor(path, sentence_eos_id: int) -> tuple[FeatureExtractor, dict]:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "extractor":
        raise DomainError(f"{path} is not an extractor checkpoint")
    model = TransformerLM.from_state(arrays, meta["model"])
    return FeatureExtractor(model, sentence_eos_id), meta


def train_encoder(extractor: FeatureExtractor, corpus: list[TokenizedDocument],
                  cfg: EncoderTrainConfig, latent_dim: int = DEFAULT_LATENT_DIM,
                  hidden_width: int = 128):
    """Train the MLP head on a tokenized corpus with the extractor frozen.

    Only head parameters are updated; the extractor hash is checked before
    and after. Deterministic given (seed, corpus, config).
    """
    if not corpus:
        raise DomainError("empty corpus")
    before = extractor.weight_hash()
    features = [extractor.extract_document(doc) for doc in corpus]
    head, curve = train_head_on_features(
        features, cfg, latent_dim=latent_dim, hidden_width=hidden_width)
    if extractor.weight_hash() != before:
        raise DomainError("feature extractor changed during encoder training")
    return head, curve


def gradient_check(head: MlpHead, batch: TripletFeatureBatch,
                   epsilon: float = 1e-5, n_coords: int = 60,
                   seed: int = 0) -> float:
    """Max relative error of analytic head gradients vs central differences."""
    _, _, grads = _batch_loss(head, batch, want_grads=True)
    return finite_difference_check(
        lambda: _batch_loss(head, batch, want_grads=False)[0],
        head.params, grads, epsilon=epsilon, n_coords=n_coords, seed=seed)


def retrieval_accuracy(head: MlpHead, batches: list[TripletFeatureBatch]) -> float:
    """Top-1 rate of the true middle beating all in-batch negatives."""
    hits = total = 0
    for batch in batches:
        B = batch.x1.shape[0]
        stacked = np.concatenate([batch.x1, batch.x2, batch.x3], axis=0)
        z = head(stacked)
        z1, z2, z3 = z[:B], z[B:2 * B], z[2 * B:]
        tau = batch.t_mid / batch.t_end
        var = np.maximum(batch.t_mid * (batch.t_end - batch.t_mid) / batch.t_end,
                         DEFAULT_VAR_FLOOR)
        mean = (1.0 - tau)[:, None] * z1 + tau[:, None] * z3
        diff = z2[None, :, :] - mean[:, None, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        scores = -sq / (2.0 * var)[:, None]
        hits += int(np.sum(scores.argmax(axis=1) == np.arange(B)))
        total += B
    return hits / total


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

ENCODER_FORMAT = 1


def save_encoder(path, head: MlpHead, extractor_hash: str,
                 cfg: EncoderTrainConfig) -> None:
    meta = {
        "kind": "encoder_head",
        "format": ENCODER_FORMAT,
        "head": head.state_meta(),
        "latent_dim": head.output_width,
        "extractor_hash": extractor_hash,
        "train_config": {
            "learning_rate": cfg.learning_rate,
            "momentum": cfg.momentum,
            "batch_size": cfg.batch_size,
            "steps": cfg.steps,
            "seed": cfg.seed,
            "log_every": cfg.log_every,
        },
        "seed": cfg.seed,
    }
    save_checkpoint(path, head.params, meta)


def load_encoder(path) -> tuple[MlpHead, dict]:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "encoder_head":
        raise DomainError(f"{path} is not an encoder checkpoint")
    return MlpHead.from_state(arrays, meta["head"]), meta
