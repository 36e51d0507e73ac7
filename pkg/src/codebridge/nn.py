"""Hand-written neural network core, float64 numpy throughout.

Everything here is deterministic given explicit seeds and single-threaded
apart from BLAS matmuls, which is what makes bitwise-reproducible training
and tight finite-difference gradient checks possible. Parameters live in
plain dicts keyed by dotted names; backward passes return a grad dict with
the same keys.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def affine_init(rng: np.random.Generator, fan_in: int, fan_out: int):
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weight and bias."""
    bound = 1.0 / math.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=(fan_out,))
    return w, b


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def gelu(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + _GELU_A * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


def layernorm_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layernorm_backward(dout, cache):
    xhat, inv, g = cache
    n = xhat.shape[-1]
    dg = (dout * xhat).sum(axis=tuple(range(dout.ndim - 1)))
    db = dout.sum(axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * g
    dx = inv * (dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def params_hash(params: dict[str, np.ndarray]) -> str:
    """SHA-256 over all tensors in key order; detects any weight change."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# four-layer MLP head (rectifier between hidden layers, linear output)
# ---------------------------------------------------------------------------

class MlpHead:
    """Four affine layers with ReLU after the first three.

    Maps a frozen feature vector to the latent space. Output width is the
    latent dimension; hidden widths default to 128.
    """

    N_LAYERS = 4

    def __init__(self, input_width: int, output_width: int,
                 hidden_width: int = 128, seed: int = 0):
        self.input_width = input_width
        self.output_width = output_width
        self.hidden_width = hidden_width
        widths = [input_width] + [hidden_width] * (self.N_LAYERS - 1) + [output_width]
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for i, (fi, fo) in enumerate(zip(widths, widths[1:])):
            w, b = affine_init(rng, fi, fo)
            self.params[f"w{i}"] = w
            self.params[f"b{i}"] = b

    def forward(self, x: np.ndarray):
        """x: (n, input_width) -> (z: (n, output_width), cache)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.input_width:
            raise DimensionError(f"expected feature width {self.input_width}, got {x.shape[1]}")
        acts = [x]
        pre = []
        h = x
        for i in range(self.N_LAYERS):
            a = h @ self.params[f"w{i}"] + self.params[f"b{i}"]
            pre.append(a)
            h = relu(a) if i < self.N_LAYERS - 1 else a
            acts.append(h)
        return h, (acts, pre)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dz: np.ndarray):
        """Gradient of a scalar loss wrt parameters and input, given dL/dz."""
        acts, pre = cache
        grads: dict[str, np.ndarray] = {}
        d = dz
        for i in reversed(range(self.N_LAYERS)):
            if i < self.N_LAYERS - 1:
                d = d * (pre[i] > 0)
            grads[f"w{i}"] = acts[i].T @ d
            grads[f"b{i}"] = d.sum(axis=0)
            d = d @ self.params[f"w{i}"].T
        return grads, d

    def copy(self) -> "MlpHead":
        c = MlpHead.__new__(MlpHead)
        c.input_width = self.input_width
        c.output_width = self.output_width
        c.hidden_width = self.hidden_width
        c.params = {k: v.copy() for k, v in self.params.items()}
        return c

    def state_meta(self) -> dict:
        return {
            "input_width": self.input_width,
            "output_width": self.output_width,
            "hidden_width": self.hidden_width,
        }

    @classmethod
    def from_state(cls, arrays: dict[str, np.ndarray], meta: dict) -> "MlpHead":
        head = cls.__new__(cls)
        head.input_width = meta["input_width"]
        head.output_width = meta["output_width"]
        head.hidden_width = meta["hidden_width"]
        head.params = dict(arrays)
        return head


# ---------------------------------------------------------------------------
# causal transformer language model with optional per-position conditioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    context: int = 256
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    latent_dim: int | None = None  # None: plain LM, no conditioning pathway

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise DomainError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")


class TransformerLM:
    """Pre-LN causal transformer over token ids.

    When cfg.latent_dim is set, the per-position input is
    token_embedding + positional_embedding + latent_projection(latent),
    where the latent is the conditioning vector of the position's sentence.
    With a zero projection the conditioned model collapses exactly onto the
    unconditioned one.
    """

    def __init__(self, cfg: TransformerConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        D, V, C = cfg.d_model, cfg.vocab_size, cfg.context
        p: dict[str, np.ndarray] = {
            "tok_emb": rng.normal(0.0, 0.02, size=(V, D)),
            "pos_emb": rng.normal(0.0, 0.02, size=(C, D)),
        }
        if cfg.latent_dim is not None:
            # Embedding-scale init keeps the conditioning signal from
            # swamping token embeddings at the start of training.
            p["lat_proj.w"] = rng.normal(0.0, 0.02, size=(cfg.latent_dim, D))
            p["lat_proj.b"] = np.zeros(D)
        for i in range(cfg.n_layers):
            pre = f"blocks.{i}."
            p[pre + "ln1.g"] = np.ones(D)
            p[pre + "ln1.b"] = np.zeros(D)
            for nm in ("wq", "wk", "wv", "wo"):
                w, b = affine_init(rng, D, D)
                p[pre + f"attn.{nm}"] = w
                p[pre + f"attn.{nm[1]}b"] = b
            p[pre + "ln2.g"] = np.ones(D)
            p[pre + "ln2.b"] = np.zeros(D)
            w1, b1 = affine_init(rng, D, 4 * D)
            w2, b2 = affine_init(rng, 4 * D, D)
            p[pre + "mlp.w1"] = w1
            p[pre + "mlp.b1"] = b1
            p[pre + "mlp.w2"] = w2
            p[pre + "mlp.b2"] = b2
        p["ln_f.g"] = np.ones(D)
        p["ln_f.b"] = np.zeros(D)
        p["head.w"] = rng.normal(0.0, 0.02, size=(D, V))
        self.params = p

    # -- forward ------------------------------------------------------------

    def forward(self, tokens: np.ndarray, latents: np.ndarray | None = None,
                want_cache: bool = False):
        """tokens: (B, W) int ids; latents: (B, W, latent_dim) or None.

        Returns (logits (B, W, V), cache). Logits at position t depend only
        on tokens and latents at positions <= t.
        """
        cfg = self.cfg
        tokens = np.atleast_2d(np.asarray(tokens))
        B, W = tokens.shape
        if W > cfg.context:
            raise DomainError(f"sequence length {W} exceeds context {cfg.context}")
        if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
            raise DomainError("token id outside vocabulary")
        p = self.params

        x = p["tok_emb"][tokens] + p["pos_emb"][:W]
        if cfg.latent_dim is not None and latents is not None:
            latents = np.asarray(latents, dtype=np.float64)
            if latents.shape != (B, W, cfg.latent_dim):
                raise DimensionError(
                    f"latents shape {latents.shape} != {(B, W, cfg.latent_dim)}")
            x = x + latents @ p["lat_proj.w"] + p["lat_proj.b"]
        elif cfg.latent_dim is not None and latents is None:
            raise DomainError("conditioned model requires latents")

        H, Dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        causal = np.triu(np.full((W, W), -1e30), k=1)

        cache = {"tokens": tokens, "latents": latents, "blocks": []}
        for i in range(cfg.n_layers):
            pre = f"blocks.{i}."
            h1, ln1c = layernorm_forward(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            q = h1 @ p[pre + "attn.wq"] + p[pre + "attn.qb"]
            k = h1 @ p[pre + "attn.wk"] + p[pre + "attn.kb"]
            v = h1 @ p[pre + "attn.wv"] + p[pre + "attn.vb"]
            qh = q.reshape(B, W, H, Dh).transpose(0, 2, 1, 3)
            kh = k.reshape(B, W, H, Dh).transpose(0, 2, 1, 3)
            vh = v.reshape(B, W, H, Dh).transpose(0, 2, 1, 3)
            att = qh @ kh.transpose(0, 1, 3, 2) / math.sqrt(Dh) + causal
            probs = softmax(att)
            oh = probs @ vh
            o = oh.transpose(0, 2, 1, 3).reshape(B, W, cfg.d_model)
            attn_out = o @ p[pre + "attn.wo"] + p[pre + "attn.ob"]
            x = x + attn_out

            h2, ln2c = layernorm_forward(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            a1 = h2 @ p[pre + "mlp.w1"] + p[pre + "mlp.b1"]
            g1 = gelu(a1)
            mlp_out = g1 @ p[pre + "mlp.w2"] + p[pre + "mlp.b2"]
            x = x + mlp_out
            if want_cache:
                cache["blocks"].append((h1, ln1c, qh, kh, vh, probs, o, h2, ln2c, a1, g1))

        hf, lnfc = layernorm_forward(x, p["ln_f.g"], p["ln_f.b"])
        logits = hf @ p["head.w"]
        if want_cache:
            cache["final"] = (hf, lnfc)
        return logits, cache if want_cache else None

    def hidden_states(self, tokens: np.ndarray) -> np.ndarray:
        """Final-layer hidden states (post final norm), shape (B, W, d_model).

        Shares the forward code path, so hidden_states @ head.w reproduces
        forward's logits bitwise.
        """
        _, cache = self.forward(tokens, want_cache=True)
        return cache["final"][0]

    # -- loss and gradients ---------------------------------------------------

    def nll(self, tokens: np.ndarray, latents: np.ndarray | None = None,
            loss_mask: np.ndarray | None = None) -> float:
        """Mean next-token NLL over predicted positions 1..W-1."""
        loss, _ = self._nll_impl(tokens, latents, loss_mask, want_grads=False)
        return loss

    def loss_and_grads(self, tokens: np.ndarray, latents: np.ndarray | None = None,
                       loss_mask: np.ndarray | None = None):
        """Returns (nll, grads dict). Same averaging as nll()."""
        return self._nll_impl(tokens, latents, loss_mask, want_grads=True)

    def _nll_impl(self, tokens, latents, loss_mask, want_grads: bool):
        tokens = np.atleast_2d(np.asarray(tokens))
        B, W = tokens.shape
        if W < 2:
            raise DomainError("need at least 2 tokens for next-token loss")
        logits, cache = self.forward(tokens, latents, want_cache=want_grads)
        pred = logits[:, :-1]                      # predicts tokens[:, 1:]
        targets = tokens[:, 1:]
        if loss_mask is None:
            mask = np.ones((B, W - 1), dtype=np.float64)
        else:
            mask = np.asarray(loss_mask, dtype=np.float64)
            if mask.shape != (B, W - 1):
                raise DimensionError(f"loss_mask shape {mask.shape} != {(B, W - 1)}")
        count = mask.sum()
        if count == 0:
            raise DomainError("loss_mask excludes every position")
        logp = log_softmax(pred)
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        loss = float(-(picked * mask).sum() / count)
        if not want_grads:
            return loss, None

        dpred = softmax(pred)
        np.subtract.at(dpred, (np.arange(B)[:, None], np.arange(W - 1)[None, :], targets),
                       1.0)
        dpred *= (mask / count)[..., None]
        dlogits = np.zeros_like(logits)
        dlogits[:, :-1] = dpred
        grads = self._backward(cache, dlogits)
        return loss, grads

    def _backward(self, cache, dlogits):
        cfg = self.cfg
        p = self.params
        tokens = cache["tokens"]
        latents = cache["latents"]
        B, W = tokens.shape
        H, Dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        D = cfg.d_model
        grads = {k: np.zeros_like(v) for k, v in p.items()}

        hf, lnfc = cache["final"]
        grads["head.w"] = hf.reshape(-1, D).T @ dlogits.reshape(-1, cfg.vocab_size)
        dx = dlogits @ p["head.w"].T
        dx, grads["ln_f.g"], grads["ln_f.b"] = layernorm_backward(dx, lnfc)

        for i in reversed(range(cfg.n_layers)):
            pre = f"blocks.{i}."
            h1, ln1c, qh, kh, vh, probs, o, h2, ln2c, a1, g1 = cache["blocks"][i]

            # mlp branch
            dmlp = dx
            grads[pre + "mlp.w2"] = g1.reshape(-1, 4 * D).T @ dmlp.reshape(-1, D)
            grads[pre + "mlp.b2"] = dmlp.sum(axis=(0, 1))
            dg1 = dmlp @ p[pre + "mlp.w2"].T
            da1 = dg1 * gelu_grad(a1)
            grads[pre + "mlp.w1"] = h2.reshape(-1, D).T @ da1.reshape(-1, 4 * D)
            grads[pre + "mlp.b1"] = da1.sum(axis=(0, 1))
            dh2 = da1 @ p[pre + "mlp.w1"].T
            dres, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = layernorm_backward(dh2, ln2c)
            dx = dx + dres

            # attention branch
            dattn_out = dx
            do = dattn_out @ p[pre + "attn.wo"].T
            grads[pre + "attn.wo"] = o.reshape(-1, D).T @ dattn_out.reshape(-1, D)
            grads[pre + "attn.ob"] = dattn_out.sum(axis=(0, 1))
            doh = do.reshape(B, W, H, Dh).transpose(0, 2, 1, 3)
            dprobs = doh @ vh.transpose(0, 1, 3, 2)
            dvh = probs.transpose(0, 1, 3, 2) @ doh
            datt = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
            datt /= math.sqrt(Dh)
            dqh = datt @ kh
            dkh = datt.transpose(0, 1, 3, 2) @ qh
            dq = dqh.transpose(0, 2, 1, 3).reshape(B, W, D)
            dk = dkh.transpose(0, 2, 1, 3).reshape(B, W, D)
            dv = dvh.transpose(0, 2, 1, 3).reshape(B, W, D)
            h1_flat = h1.reshape(-1, D)
            grads[pre + "attn.wq"] = h1_flat.T @ dq.reshape(-1, D)
            grads[pre + "attn.qb"] = dq.sum(axis=(0, 1))
            grads[pre + "attn.wk"] = h1_flat.T @ dk.reshape(-1, D)
            grads[pre + "attn.kb"] = dk.sum(axis=(0, 1))
            grads[pre + "attn.wv"] = h1_flat.T @ dv.reshape(-1, D)
            grads[pre + "attn.vb"] = dv.sum(axis=(0, 1))
            dh1 = dq @ p[pre + "attn.wq"].T + dk @ p[pre + "attn.wk"].T \
                + dv @ p[pre + "attn.wv"].T
            dres, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = layernorm_backward(dh1, ln1c)
            dx = dx + dres

        # input embeddings
        np.add.at(grads["tok_emb"], tokens, dx)
        grads["pos_emb"][:W] = dx.sum(axis=0)
        if cfg.latent_dim is not None:
            lat_flat = latents.reshape(-1, cfg.latent_dim)
            grads["lat_proj.w"] = lat_flat.T @ dx.reshape(-1, D)
            grads["lat_proj.b"] = dx.sum(axis=(0, 1))
        return grads

    # -- persistence ----------------------------------------------------------

    def copy(self) -> "TransformerLM":
        c = TransformerLM.__new__(TransformerLM)
        c.cfg = self.cfg
        c.params = {k: v.copy() for k, v in self.params.items()}
        return c

    def state_meta(self) -> dict:
        return {
            "vocab_size": self.cfg.vocab_size,
            "context": self.cfg.context,
            "d_model": self.cfg.d_model,
            "n_heads": self.cfg.n_heads,
            "n_layers": self.cfg.n_layers,
            "latent_dim": self.cfg.latent_dim,
        }

    @classmethod
    def from_state(cls, arrays: dict[str, np.ndarray], meta: dict) -> "TransformerLM":
        cfg = TransformerConfig(
            vocab_size=meta["vocab_size"], context=meta["context"],
            d_model=meta["d_model"], n_heads=meta["n_heads"],
            n_layers=meta["n_layers"], latent_dim=meta["latent_dim"])
        model = cls.__new__(cls)
        model.cfg = cfg
        model.params = dict(arrays)
        return model


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class SgdMomentum:
    """Classic momentum: v <- mu v + g; p <- p - lr v."""

    def __init__(self, lr: float, momentum: float = 0.9):
        if lr <= 0:
            raise DomainError(f"learning rate must be positive, got {lr}")
        if not 0 <= momentum < 1:
            raise DomainError(f"momentum must be in [0, 1), got {momentum}")
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for k, g in grads.items():
            v = self.velocity.get(k)
            if v is None:
                v = np.zeros_like(g)
            v = self.momentum * v + g
            self.velocity[k] = v
            params[k] -= self.lr * v


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m.get(k, np.zeros_like(g))
            v = self.v.get(k, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            params[k] -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def finite_difference_check(loss_fn, params: dict[str, np.ndarray],
                            grads: dict[str, np.ndarray], *,
                            epsilon: float, n_coords: int = 50,
                            seed: int = 0) -> float:
    """Max relative error between analytic grads and central differences.

    Samples n_coords parameter coordinates (at least one per tensor when
    possible), perturbs each by +-epsilon, and compares. Relative error uses
    denominator max(|analytic|, |fd|, 1e-6) so roundoff noise on exactly-zero
    gradient entries does not register.
    """
    if not (1e-8 < epsilon < 1e-2):
        raise DomainError(f"epsilon {epsilon} outside (1e-8, 1e-2)")
    rng = np.random.default_rng(seed)
    names = sorted(params)
    coords = []
    for name in names:
        size = params[name].size
        coords.append((name, int(rng.integers(size))))
    while len(coords) < n_coords:
        name = names[int(rng.integers(len(names)))]
        coords.append((name, int(rng.integers(params[name].size))))

    worst = 0.0
    for name, flat_idx in coords[:max(n_coords, len(names))]:
        w = params[name]
        orig = w.flat[flat_idx]
        w.flat[flat_idx] = orig + epsilon
        lp = loss_fn()
        w.flat[flat_idx] = orig - epsilon
        lm = loss_fn()
        w.flat[flat_idx] = orig
        fd = (lp - lm) / (2.0 * epsilon)
        an = grads[name].flat[flat_idx]
        rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
        worst = max(worst, rel)
    return worst
