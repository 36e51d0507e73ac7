"""Pipeline orchestration: staged artifacts, content hashing, idempotent reruns.

Seven stages (corpus, pretrain, encoder, decoder, ablation, generate, eval)
run off one configuration. Every stage records its artifacts with content
hashes plus the hashes of everything it consumed; a rerun whose inputs are
unchanged is skipped as up-to-date. Two runs with the same config and seed
produce byte-identical artifacts.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from pathlib import Path

import numpy as np

from .bridge import BridgeSchedule, sample_bridge
from .corpus import (
    build_corpus,
    load_corpus_manifest,
    load_rendered_entries,
    read_problem_dir,
    tokenize_entry,
)
from .decoder import (
    DecoderTrainConfig,
    GenerationConfig,
    build_decoder,
    compute_teacher_plans,
    fit_endpoint_prior,
    generate,
    load_decoder,
    mean_heldout_nll,
    save_decoder,
    train_decoder,
)
from .encoder import (
    EncoderTrainConfig,
    ExtractorPretrainConfig,
    encode_document,
    load_encoder,
    load_extractor,
    pretrain_extractor,
    save_encoder,
    save_extractor,
    train_encoder,
)
from .errors import DependencyError, DomainError
from .evalharness import evaluate_samples
from .nn import params_hash
from .tokenizer import ByteTokenizer
from .toydata import generate_toy_problems, toy_eval_problems

STAGES = ("corpus", "pretrain", "encoder", "decoder", "ablation", "generate", "eval")

STAGE_DEPS = {
    "corpus": (),
    "pretrain": ("corpus",),
    "encoder": ("corpus", "pretrain"),
    "decoder": ("corpus", "pretrain", "encoder"),
    "ablation": ("corpus",),
    "generate": ("corpus", "pretrain", "encoder", "decoder", "ablation"),
    "eval": ("generate",),
}

DEFAULT_CONFIG = {
    "seed": 0,
    "latent_dim": 32,
    "corpus": {
        "source": "toy",
        "toy_docs": 200,
        "in_dir": None,
        "split": "train=0.9,heldout=0.1",
    },
    "extractor": {
        "d_model": 128, "n_heads": 4, "n_layers": 2, "context": 256,
        "window": 128, "steps": 250, "batch_size": 4, "learning_rate": 1e-3,
    },
    "encoder": {
        "learning_rate": 1e-4, "momentum": 0.9, "batch_size": 32,
        "steps": 300, "hidden_width": 128,
    },
    "decoder": {
        "d_model": 128, "n_heads": 4, "n_layers": 4, "context": 256,
        "steps": 150, "batch_size": 4, "learning_rate": 1e-3,
    },
    "generation": {
        "max_tokens": 48, "temperature": 0.8, "top_k": 12,
        "plan_sentences": 8, "samples_per_problem": 2,
    },
    "eval": {"ks": [1, 2], "timeout": 5.0, "mem_limit_mb": 512, "jobs": 2},
}

# Config sections each stage reads; part of its input hash.
STAGE_CONFIG_KEYS = {
    "corpus": ("seed", "corpus"),
    "pretrain": ("seed", "extractor"),
    "encoder": ("seed", "latent_dim", "encoder"),
    "decoder": ("seed", "latent_dim", "decoder"),
    "ablation": ("seed", "decoder"),
    "generate": ("seed", "latent_dim", "generation"),
    "eval": ("seed", "eval"),
}


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path, encoding="utf-8") as f:
            user = json.load(f)
        _deep_update(cfg, user)
    if overrides:
        _deep_update(cfg, overrides)
    if cfg["latent_dim"] < 1:
        raise DomainError(f"latent_dim must be >= 1, got {cfg['latent_dim']}")
    return cfg


def _deep_update(base: dict, update: dict) -> None:
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical_hash(obj) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


class RunManifest:
    """Persistent record of stage outcomes, artifact hashes, and provenance."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.path = self.root / "manifest.json"
        if self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))
        else:
            self.data = {"stages": {}}

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")

    def stage(self, name: str) -> dict | None:
        return self.data["stages"].get(name)

    def record(self, name: str, *, input_hash: str, config: dict,
               inputs: dict[str, str], artifacts: list[str], wall_time: float) -> dict:
        entry = {
            "status": "completed",
            "input_hash": input_hash,
            "config": config,
            "inputs": inputs,
            "artifacts": {rel: sha256_file(self.root / rel) for rel in sorted(artifacts)},
            "wall_time_s": round(wall_time, 3),
        }
        self.data["stages"][name] = entry
        self.save()
        return entry

    def artifacts_ok(self, name: str) -> bool:
        entry = self.stage(name)
        if entry is None:
            return False
        for rel, digest in entry["artifacts"].items():
            p = self.root / rel
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def dependency_inputs(self, name: str) -> dict[str, str]:
        """Artifact hashes of all dependency stages, keyed by relative path."""
        inputs: dict[str, str] = {}
        for dep in STAGE_DEPS[name]:
            entry = self.stage(dep)
            if entry is None or not self.artifacts_ok(dep):
                raise DependencyError(
                    f"stage '{name}' requires stage '{dep}' to have run first")
            inputs.update(entry["artifacts"])
        return inputs


# ---------------------------------------------------------------------------
# stage bodies: each returns a list of artifact paths relative to root
# ---------------------------------------------------------------------------

def _corpus_dir(root: Path) -> Path:
    return root / "corpus"


def _load_docs(root: Path, tokenizer: ByteTokenizer, split: str | None):
    out_dir = _corpus_dir(root)
    records = load_corpus_manifest(out_dir)
    pairs = load_rendered_entries(out_dir, records, split=split)
    return [tokenize_entry(text, tokenizer, doc_id=doc_id) for doc_id, text in pairs]


def _stage_corpus(cfg, root: Path) -> list[str]:
    ccfg = cfg["corpus"]
    if ccfg.get("in_dir"):
        in_dir = Path(ccfg["in_dir"])
        problem_dirs = sorted(p for p in in_dir.iterdir() if p.is_dir())
        problems = [read_problem_dir(p) for p in problem_dirs]
    else:
        problems = generate_toy_problems(ccfg["toy_docs"], seed=cfg["seed"])
    records = build_corpus(problems, _corpus_dir(root), ccfg["split"], seed=cfg["seed"])
    rels = [f"corpus/{r['path']}" for r in records]
    rels.append("corpus/corpus_manifest.jsonl")
    return rels


def _stage_pretrain(cfg, root: Path) -> list[str]:
    tok = ByteTokenizer()
    docs = _load_docs(root, tok, split="train")
    pcfg = ExtractorPretrainConfig(seed=cfg["seed"], **cfg["extractor"])
    model, curve = pretrain_extractor(docs, tok.vocab_size, tok.eot_id, pcfg)
    save_extractor(root / "extractor.ckpt", model, pcfg)
    (root / "pretrain_curve.json").write_text(
        json.dumps({"loss_curve": curve}, indent=2) + "\n", encoding="utf-8")
    return ["extractor.ckpt", "pretrain_curve.json"]


def _stage_encoder(cfg, root: Path) -> list[str]:
    tok = ByteTokenizer()
    extractor, _ = load_extractor(root / "extractor.ckpt", tok.sentence_eos_id)
    docs = _load_docs(root, tok, split="train")
    section = dict(cfg["encoder"])
    hidden = section.pop("hidden_width", 128)
    ecfg = EncoderTrainConfig(seed=cfg["seed"], **section)
    head, curve = train_encoder(extractor, docs, ecfg,
                                latent_dim=cfg["latent_dim"], hidden_width=hidden)
    save_encoder(root / "encoder.ckpt", head, extractor.weight_hash(), ecfg)
    (root / "encoder_curve.json").write_text(
        json.dumps({"loss_curve": curve}, indent=2) + "\n", encoding="utf-8")
    return ["encoder.ckpt", "encoder_curve.json"]


def _train_one_decoder(cfg, root: Path, conditioned: bool):
    tok = ByteTokenizer()
    dcfg = cfg["decoder"]
    train_docs = _load_docs(root, tok, split="train")
    held_docs = _load_docs(root, tok, split="heldout")
    tcfg = DecoderTrainConfig(
        learning_rate=dcfg["learning_rate"], batch_size=dcfg["batch_size"],
        steps=dcfg["steps"], seed=cfg["seed"], log_every=10)
    model = build_decoder(
        tok.vocab_size,
        latent_dim=cfg["latent_dim"] if conditioned else None,
        context=dcfg["context"], d_model=dcfg["d_model"],
        n_heads=dcfg["n_heads"], n_layers=dcfg["n_layers"], seed=cfg["seed"])
    if conditioned:
        extractor, _ = load_extractor(root / "extractor.ckpt", tok.sentence_eos_id)
        head, _ = load_encoder(root / "encoder.ckpt")
        model, curve = train_decoder(train_docs, tcfg, model=model,
                                     extractor=extractor, encoder_head=head)
        held_plans = compute_teacher_plans(extractor, head, held_docs)
        heldout = mean_heldout_nll(model, held_docs, held_plans)
        enc_hash, ext_hash = params_hash(head.params), extractor.weight_hash()
    else:
        model, curve = train_decoder(train_docs, tcfg, model=model)
        heldout = mean_heldout_nll(model, held_docs, None)
        enc_hash = ext_hash = None
    name = "decoder" if conditioned else "ablation"
    save_decoder(root / f"{name}.ckpt", model, tcfg,
                 encoder_hash=enc_hash, extractor_hash=ext_hash)
    report = {
        "conditioned": conditioned,
        "train_curve": curve,
        "heldout_nll": heldout,
        "heldout_window": "first min(doc_tokens, context) tokens per document",
        "heldout_docs": len(held_docs),
    }
    (root / f"{name}_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [f"{name}.ckpt", f"{name}_report.json"]


def _stage_decoder(cfg, root: Path) -> list[str]:
    return _train_one_decoder(cfg, root, conditioned=True)


def _stage_ablation(cfg, root: Path) -> list[str]:
    return _train_one_decoder(cfg, root, conditioned=False)


def _stage_generate(cfg, root: Path) -> list[str]:
    tok = ByteTokenizer()
    gcfg = cfg["generation"]
    extractor, _ = load_extractor(root / "extractor.ckpt", tok.sentence_eos_id)
    head, _ = load_encoder(root / "encoder.ckpt")
    train_docs = _load_docs(root, tok, split="train")
    prior = fit_endpoint_prior([encode_document(extractor, head, d)
                                for d in train_docs])
    problems, _ = toy_eval_problems()
    (root / "generated").mkdir(exist_ok=True)

    out_paths = []
    for name in ("decoder", "ablation"):
        model, _ = load_decoder(root / f"{name}.ckpt")
        rel = f"generated/samples_{name}.jsonl"
        with open(root / rel, "w", encoding="utf-8") as f:
            for p_idx, problem in enumerate(problems):
                prompt_text = f"[QUESTION]\n{problem.prompt}[SOLUTION]\n"
                prompt_ids = tok.encode(prompt_text)
                for i in range(gcfg["samples_per_problem"]):
                    seed = cfg["seed"] * 1_000_003 + p_idx * 101 + i
                    rng = np.random.default_rng(seed)
                    z0, zT = prior.sample_endpoints(rng)
                    sched = BridgeSchedule.unit_spaced(max(2, gcfg["plan_sentences"]))
                    plan = sample_bridge(z0, zT, sched, rng_seed=seed + 1)
                    gen_cfg = GenerationConfig(
                        max_tokens=gcfg["max_tokens"],
                        temperature=gcfg["temperature"],
                        top_k=gcfg["top_k"], seed=seed + 2)
                    out = generate(model, prompt_ids, plan, gen_cfg,
                                   newline_id=tok.newline_id, stop_token=tok.eot_id)
                    completion = tok.decode([t for t in out if t != tok.eot_id])
                    f.write(json.dumps({
                        "problem_id": problem.problem_id,
                        "sample_index": i,
                        "completion": completion,
                        "program": problem.prompt + completion,
                    }, sort_keys=True) + "\n")
        out_paths.append(rel)
    return out_paths


def _stage_eval(cfg, root: Path) -> list[str]:
    ecfg = cfg["eval"]
    problems, _ = toy_eval_problems()
    reports = {}
    for name in ("decoder", "ablation"):
        samples: dict[str, list[str]] = {}
        with open(root / f"generated/samples_{name}.jsonl", encoding="utf-8") as f:
            for line in f:
                rec = json.loads(line)
                samples.setdefault(rec["problem_id"], []).append(rec["program"])
        report = evaluate_samples(
            samples, problems, ks=ecfg["ks"], timeout=ecfg["timeout"],
            mem_limit=ecfg["mem_limit_mb"] * 1024 * 1024, jobs=ecfg["jobs"])
        reports["conditioned" if name == "decoder" else name] = json.loads(
            report.to_json())
    (root / "eval_report.json").write_text(
        json.dumps(reports, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return ["eval_report.json"]


_STAGE_FN = {
    "corpus": _stage_corpus,
    "pretrain": _stage_pretrain,
    "encoder": _stage_encoder,
    "decoder": _stage_decoder,
    "ablation": _stage_ablation,
    "generate": _stage_generate,
    "eval": _stage_eval,
}


def run_stage(stage: str, cfg: dict, root, force: bool = False) -> dict:
    """Run one stage (or skip when up-to-date); returns its manifest entry."""
    if stage not in STAGES:
        raise DomainError(f"unknown stage {stage!r}; expected one of {STAGES}")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(root)
    dep_inputs = manifest.dependency_inputs(stage)
    stage_cfg = {k: cfg[k] for k in STAGE_CONFIG_KEYS[stage]}
    input_hash = _canonical_hash({"config": stage_cfg, "inputs": dep_inputs})

    existing = manifest.stage(stage)
    if (not force and existing is not None
            and existing["input_hash"] == input_hash
            and manifest.artifacts_ok(stage)):
        entry = dict(existing)
        entry["status"] = "up-to-date"
        return entry

    start = time.perf_counter()
    artifacts = _STAGE_FN[stage](cfg, root)
    wall = time.perf_counter() - start
    return manifest.record(stage, input_hash=input_hash, config=stage_cfg,
                           inputs=dep_inputs, artifacts=artifacts, wall_time=wall)


def run_all(cfg: dict, root, force: bool = False) -> dict[str, dict]:
    """Run the full pipeline in order, then write the comparison report."""
    results = {stage: run_stage(stage, cfg, root, force=force) for stage in STAGES}
    comparison = compare_ablation(root)
    Path(root, "comparison.json").write_text(comparison_to_json(comparison),
                                             encoding="utf-8")
    return results


# ---------------------------------------------------------------------------
# conditioned-vs-ablation comparison
# ---------------------------------------------------------------------------

def compare_ablation(root) -> dict:
    """Side-by-side held-out NLL and pass@k of the two decoders.

    Pure function of the stage artifacts: identical artifacts give a
    byte-identical report.
    """
    root = Path(root)
    needed = {
        "decoder": root / "decoder_report.json",
        "ablation": root / "ablation_report.json",
    }
    for stage, path in needed.items():
        if not path.exists():
            raise DependencyError(f"comparison requires stage '{stage}' to have run")
    dec = json.loads(needed["decoder"].read_text(encoding="utf-8"))
    abl = json.loads(needed["ablation"].read_text(encoding="utf-8"))
    result = {
        "heldout_nll": {
            "conditioned": dec["heldout_nll"],
            "ablation": abl["heldout_nll"],
            "delta_conditioned_minus_ablation":
                dec["heldout_nll"] - abl["heldout_nll"],
            "window": dec["heldout_window"],
        },
    }
    eval_path = root / "eval_report.json"
    if eval_path.exists():
        reports = json.loads(eval_path.read_text(encoding="utf-8"))
        result["pass_at_k"] = {
            "conditioned": reports["conditioned"]["pass_at_k"],
            "ablation": reports["ablation"]["pass_at_k"],
        }
    return result


def comparison_to_json(comparison: dict) -> str:
    return json.dumps(comparison, indent=2, sort_keys=True) + "\n"
