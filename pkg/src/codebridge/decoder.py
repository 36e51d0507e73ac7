"""Latent-plan-conditioned autoregressive decoder.

A small causal transformer whose per-position input adds a learned
projection of the position's sentence-level latent code to the token and
positional embeddings. Training teacher-forces true encoded latents;
generation conditions on a sampled bridge trajectory, advancing the
sentence index at every emitted newline. The ablation variant is the
same network with no conditioning pathway.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .bridge import BridgeTrajectory
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import FeatureExtractor, MlpHead, encode_document
from .errors import DimensionError, DomainError
from .nn import Adam, TransformerConfig, TransformerLM, log_softmax, params_hash, softmax
from .tokenizer import TokenizedDocument

logger = logging.getLogger(__name__)

MAX_GENERATION_TOKENS = 750


@dataclass
class GenerationConfig:
    max_tokens: int = 256
    temperature: float = 1.0
    top_k: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.max_tokens <= MAX_GENERATION_TOKENS:
            raise DomainError(
                f"max_tokens must be in [1, {MAX_GENERATION_TOKENS}], got {self.max_tokens}")
        if self.temperature < 0:
            raise DomainError(f"temperature must be nonnegative, got {self.temperature}")
        if self.top_k is not None and self.top_k < 1:
            raise DomainError(f"top_k must be positive, got {self.top_k}")


@dataclass
class DecoderTrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 4
    steps: int = 200
    seed: int = 0
    log_every: int = 10


def build_decoder(vocab_size: int, latent_dim: int | None, *, context: int = 256,
                  d_model: int = 128, n_heads: int = 4, n_layers: int = 4,
                  seed: int = 0) -> TransformerLM:
    """Fresh decoder; latent_dim None builds the unconditioned ablation."""
    cfg = TransformerConfig(vocab_size=vocab_size, context=context, d_model=d_model,
                            n_heads=n_heads, n_layers=n_layers, latent_dim=latent_dim)
    return TransformerLM(cfg, seed=seed)


def _plan_to_latents(doc: TokenizedDocument, plan: np.ndarray,
                     latent_dim: int) -> np.ndarray:
    plan = np.asarray(plan, dtype=np.float64)
    if plan.ndim != 2 or plan.shape[0] != doc.n_sentences or plan.shape[1] != latent_dim:
        raise DimensionError(
            f"plan shape {plan.shape} does not match "
            f"({doc.n_sentences} sentences, {latent_dim})")
    return plan[doc.sentence_of_token]


def forward(model: TransformerLM, doc: TokenizedDocument,
            plan: np.ndarray | None) -> np.ndarray:
    """Next-token logits for every position, shape (W, vocab).

    plan holds one latent point per sentence; each position receives the
    projection of its own sentence's point. The ablation model takes
    plan=None.
    """
    if model.cfg.latent_dim is None:
        if plan is not None:
            raise DomainError("ablation model does not accept a plan")
        logits, _ = model.forward(doc.tokens[None, :])
    else:
        if plan is None:
            raise DomainError("conditioned model requires a plan")
        latents = _plan_to_latents(doc, plan, model.cfg.latent_dim)
        logits, _ = model.forward(doc.tokens[None, :], latents[None, :, :])
    return logits[0]


def nll_loss(model: TransformerLM, doc: TokenizedDocument,
             plan: np.ndarray | None) -> float:
    """Mean next-token negative log likelihood over positions 1..W-1."""
    if model.cfg.latent_dim is None:
        if plan is not None:
            raise DomainError("ablation model does not accept a plan")
        return model.nll(doc.tokens[None, :])
    if plan is None:
        raise DomainError("conditioned model requires a plan")
    latents = _plan_to_latents(doc, plan, model.cfg.latent_dim)
    return model.nll(doc.tokens[None, :], latents[None, :, :])


def compute_teacher_plans(extractor: FeatureExtractor, head: MlpHead,
                          docs: list[TokenizedDocument]) -> list[np.ndarray]:
    """Encode every sentence of every document once (teacher forcing)."""
    return [encode_document(extractor, head, doc) for doc in docs]


def _window(doc_tokens: np.ndarray, latents: np.ndarray | None, context: int,
            rng: np.random.Generator):
    w = len(doc_tokens)
    if w <= context:
        return doc_tokens, latents
    start = int(rng.integers(0, w - context + 1))
    lat = latents[start:start + context] if latents is not None else None
    return doc_tokens[start:start + context], lat


def train_decoder(docs: list[TokenizedDocument], cfg: DecoderTrainConfig, *,
                  model: TransformerLM,
                  extractor: FeatureExtractor | None = None,
                  encoder_head: MlpHead | None = None,
                  plans: list[np.ndarray] | None = None):
    """Minimize next-token NLL; returns (model, loss curve).

    Conditioned training needs either precomputed plans or the frozen
    encoder pieces (plans are then encoded once up front). The encoder and
    extractor are asserted unchanged afterwards. Deterministic given
    (seed, corpus, config); documents shorter than 2 tokens are skipped.
    """
    if not docs:
        raise DomainError("empty corpus")
    conditioned = model.cfg.latent_dim is not None
    enc_hash = params_hash(encoder_head.params) if encoder_head is not None else None
    ext_hash = extractor.weight_hash() if extractor is not None else None
    if conditioned and plans is None:
        if extractor is None or encoder_head is None:
            raise DomainError("conditioned training requires plans or encoder pieces")
        plans = compute_teacher_plans(extractor, encoder_head, docs)
    if conditioned and len(plans) != len(docs):
        raise DimensionError("one plan per document required")

    usable = [i for i, d in enumerate(docs) if d.n_tokens >= 2]
    skipped = len(docs) - len(usable)
    if skipped:
        logger.info("skipping %d documents with < 2 tokens", skipped)
    if not usable:
        raise DomainError("no document has >= 2 tokens")

    latent_full = None
    if conditioned:
        latent_full = {
            i: _plan_to_latents(docs[i], plans[i], model.cfg.latent_dim) for i in usable}

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(lr=cfg.learning_rate)
    context = model.cfg.context
    curve: list[tuple[int, float]] = []
    window_losses: list[float] = []
    for step in range(cfg.steps):
        chosen = [usable[int(rng.integers(len(usable)))] for _ in range(cfg.batch_size)]
        toks, lats, lens = [], [], []
        for i in chosen:
            t, l = _window(docs[i].tokens,
                           latent_full[i] if conditioned else None, context, rng)
            toks.append(t)
            lats.append(l)
            lens.append(len(t))
        wmax = max(lens)
        batch_tokens = np.zeros((len(chosen), wmax), dtype=np.int64)
        mask = np.zeros((len(chosen), wmax - 1), dtype=np.float64)
        batch_lat = (np.zeros((len(chosen), wmax, model.cfg.latent_dim))
                     if conditioned else None)
        for b, (t, l, n) in enumerate(zip(toks, lats, lens)):
            batch_tokens[b, :n] = t
            mask[b, :n - 1] = 1.0
            if conditioned:
                batch_lat[b, :n] = l
        loss, grads = model.loss_and_grads(batch_tokens, batch_lat, loss_mask=mask)
        opt.step(model.params, grads)
        window_losses.append(loss)
        if (step + 1) % cfg.log_every == 0 or step == cfg.steps - 1:
            curve.append((step + 1, float(np.mean(window_losses))))
            window_losses.clear()

    if encoder_head is not None and params_hash(encoder_head.params) != enc_hash:
        raise DomainError("encoder head changed during decoder training")
    if extractor is not None and extractor.weight_hash() != ext_hash:
        raise DomainError("feature extractor changed during decoder training")
    return model, curve


def mean_heldout_nll(model: TransformerLM, docs: list[TokenizedDocument],
                     plans: list[np.ndarray] | None) -> float:
    """Mean per-document NLL on each document's first context-window tokens."""
    if not docs:
        raise DomainError("no held-out documents")
    context = model.cfg.context
    total = 0.0
    n = 0
    for i, doc in enumerate(docs):
        if doc.n_tokens < 2:
            continue
        w = min(doc.n_tokens, context)
        tokens = doc.tokens[:w]
        if model.cfg.latent_dim is None:
            total += model.nll(tokens[None, :])
        else:
            lat = _plan_to_latents(doc, plans[i], model.cfg.latent_dim)[:w]
            total += model.nll(tokens[None, :], lat[None, :, :])
        n += 1
    if n == 0:
        raise DomainError("no held-out document has >= 2 tokens")
    return total / n


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _pick_token(logits: np.ndarray, cfg: GenerationConfig,
                rng: np.random.Generator) -> tuple[int, float]:
    logprobs = log_softmax(logits)
    if cfg.temperature == 0.0:
        tok = int(np.argmax(logits))  # first max = lowest id on ties
        return tok, float(logprobs[tok])
    scaled = logits / cfg.temperature
    if cfg.top_k is not None and cfg.top_k < len(logits):
        # Deterministic tie handling: sort by (-logit, id).
        order = np.lexsort((np.arange(len(logits)), -scaled))
        keep = order[:cfg.top_k]
        masked = np.full_like(scaled, -np.inf)
        masked[keep] = scaled[keep]
        scaled = masked
    probs = softmax(scaled)
    tok = int(rng.choice(len(probs), p=probs))
    return tok, float(logprobs[tok])


def generate(model: TransformerLM, prompt_tokens, plan: BridgeTrajectory,
             cfg: GenerationConfig, *, newline_id: int = 10,
             stop_token: int | None = None, want_trace: bool = False):
    """Sample up to cfg.max_tokens continuation tokens.

    The sentence index starts at the prompt's newline count and advances at
    every emitted newline; when more sentences are generated than the plan
    holds, the final plan point is reused. Temperature 0 is argmax with ties
    broken by lowest token id. Returns generated ids, or (ids, trace) with
    want_trace, where each trace record is (position, token id, sentence
    index, log probability).
    """
    prompt = np.asarray(prompt_tokens, dtype=np.int64).ravel()
    if prompt.size == 0:
        raise DomainError("prompt must contain at least one token")
    if len(plan) == 0:
        raise DomainError("empty plan")
    plan_points = plan.points if model.cfg.latent_dim is not None else None
    if plan_points is not None and plan_points.shape[1] != model.cfg.latent_dim:
        raise DimensionError(
            f"plan dimension {plan_points.shape[1]} != model latent {model.cfg.latent_dim}")

    rng = np.random.default_rng(cfg.seed)
    context = model.cfg.context
    seq = list(prompt)
    # sentence index of token position p = newlines strictly before p
    sent_of = []
    count = 0
    for t in seq:
        sent_of.append(count)
        if t == newline_id:
            count += 1

    generated: list[int] = []
    trace: list[tuple[int, int, int, float]] = []
    for _ in range(cfg.max_tokens):
        window = np.array(seq[-context:], dtype=np.int64)
        if plan_points is not None:
            sents = np.array(sent_of[-context:], dtype=np.int64)
            lat = plan_points[np.minimum(sents, len(plan) - 1)]
            logits, _ = model.forward(window[None, :], lat[None, :, :])
        else:
            logits, _ = model.forward(window[None, :])
        tok, logprob = _pick_token(logits[0, -1], cfg, rng)
        position = len(seq)
        sent_of.append(count)
        if tok == newline_id:
            count += 1
        seq.append(tok)
        generated.append(tok)
        trace.append((position, tok, sent_of[position], logprob))
        if stop_token is not None and tok == stop_token:
            break
    out = np.array(generated, dtype=np.int64)
    return (out, trace) if want_trace else out


def trace_to_jsonl(trace) -> str:
    """One JSON record per emitted token: position, id, sentence, logprob."""
    lines = [
        json.dumps({"position": pos, "token_id": tok, "sentence_index": sent,
                    "log_probability": logprob})
        for pos, tok, sent, logprob in trace
    ]
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# endpoint prior for inference-time plans
# ---------------------------------------------------------------------------

VAR_PRIOR_FLOOR = 1e-6


@dataclass(frozen=True)
class EndpointPrior:
    """Diagonal Gaussian fits over encoded first and last sentences."""

    mean0: np.ndarray
    var0: np.ndarray
    meanT: np.ndarray
    varT: np.ndarray

    def sample_endpoints(self, rng: np.random.Generator):
        z0 = self.mean0 + np.sqrt(self.var0) * rng.standard_normal(self.mean0.shape)
        zT = self.meanT + np.sqrt(self.varT) * rng.standard_normal(self.meanT.shape)
        return z0, zT


def fit_endpoint_prior(encoded_docs: list[np.ndarray]) -> EndpointPrior:
    """Per-dimension mean/variance of first and last sentence latents.

    Variances are floored at 1e-6 (a single document or identical documents
    otherwise give a degenerate prior).
    """
    if not encoded_docs:
        raise DomainError("empty corpus")
    firsts = np.stack([np.asarray(e, dtype=np.float64)[0] for e in encoded_docs])
    lasts = np.stack([np.asarray(e, dtype=np.float64)[-1] for e in encoded_docs])
    return EndpointPrior(
        mean0=firsts.mean(axis=0),
        var0=np.maximum(firsts.var(axis=0), VAR_PRIOR_FLOOR),
        meanT=lasts.mean(axis=0),
        varT=np.maximum(lasts.var(axis=0), VAR_PRIOR_FLOOR),
    )


def fit_endpoint_prior_from_corpus(extractor: FeatureExtractor, head: MlpHead,
                                   docs: list[TokenizedDocument]) -> EndpointPrior:
    return fit_endpoint_prior([encode_document(extractor, head, d) for d in docs])


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

DECODER_FORMAT = 1


def save_decoder(path, model: TransformerLM, cfg: DecoderTrainConfig, *,
                 encoder_hash: str | None, extractor_hash: str | None) -> None:
    meta = {
        "kind": "decoder",
        "format": DECODER_FORMAT,
        "model": model.state_meta(),
        "train_config": {
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "steps": cfg.steps,
            "seed": cfg.seed,
            "log_every": cfg.log_every,
        },
        "seed": cfg.seed,
        "encoder_hash": encoder_hash,
        "extractor_hash": extractor_hash,
    }
    save_checkpoint(path, model.params, meta)


def load_decoder(path) -> tuple[TransformerLM, dict]:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "decoder":
        raise DomainError(f"{path} is not a decoder checkpoint")
    return TransformerLM.from_state(arrays, meta["model"]), meta
