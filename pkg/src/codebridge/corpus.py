"""Corpus preprocessing: line labeling, five-section entries, manifests.

Solution code is labeled line by line with a parser (stdlib ast; a regex
line classifier takes over for source that does not parse), partitioned
into class / def / import buckets plus a residual bucket, and rendered in
a fixed five-marker layout. Rendering is lossless: every solution line
lands in exactly one bucket, original order preserved within buckets.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DomainError
from .tokenizer import SECTION_TOKENS, ByteTokenizer, TokenizedDocument, tokenize_text

DIFFICULTIES = ("introductory", "interview", "competition")

Q_MARK, S_MARK, C_MARK, D_MARK, I_MARK = SECTION_TOKENS


class Label(str, Enum):
    CLASS_STATEMENT = "CLASS_STATEMENT"
    DEF_STATEMENT = "DEF_STATEMENT"
    IMPORT_STATEMENT = "IMPORT_STATEMENT"
    OTHER = "OTHER"


@dataclass(frozen=True)
class LineLabel:
    line_no: int  # 0-based source line index
    label: Label


@dataclass(frozen=True)
class RawProblem:
    question: str
    solutions: tuple[str, ...]
    difficulty: str
    source_id: str

    def __post_init__(self):
        if not self.solutions:
            raise DomainError(f"problem {self.source_id} has no solutions")
        if self.difficulty not in DIFFICULTIES:
            raise DomainError(
                f"difficulty {self.difficulty!r} not one of {DIFFICULTIES}")


@dataclass
class SectionedEntry:
    question: str
    class_stmts: list[str] = field(default_factory=list)
    def_stmts: list[str] = field(default_factory=list)
    import_stmts: list[str] = field(default_factory=list)
    residual: list[str] = field(default_factory=list)

    def all_solution_lines(self) -> list[str]:
        return self.residual + self.class_stmts + self.def_stmts + self.import_stmts


_FALLBACK_PATTERNS = (
    (re.compile(r"^(import\s|from\s+\S+\s+import\b)"), Label.IMPORT_STATEMENT),
    (re.compile(r"^(async\s+def\s|def\s)"), Label.DEF_STATEMENT),
    (re.compile(r"^class\s"), Label.CLASS_STATEMENT),
)


def _labels_from_ast(source: str, n_lines: int) -> list[Label]:
    labels = [Label.OTHER] * n_lines
    tree = ast.parse(source)
    for node in tree.body:
        idx = node.lineno - 1
        if isinstance(node, ast.ClassDef):
            labels[idx] = Label.CLASS_STATEMENT
        elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            labels[idx] = Label.DEF_STATEMENT
        elif isinstance(node, (ast.Import, ast.ImportFrom)):
            labels[idx] = Label.IMPORT_STATEMENT
    return labels


def _labels_from_patterns(lines: list[str]) -> list[Label]:
    # Top-level constructs only: indented lines are bodies, hence OTHER.
    labels = []
    for line in lines:
        label = Label.OTHER
        if line and not line[0].isspace():
            for pattern, lab in _FALLBACK_PATTERNS:
                if pattern.match(line):
                    label = lab
                    break
        labels.append(label)
    return labels


def label_lines(source: str) -> list[LineLabel]:
    """Label each source line; never fails.

    A line on which a top-level class / def / import construct begins gets
    that label; every other line (bodies, blanks, loose statements) is
    OTHER. Unparseable source degrades to the pattern classifier.
    """
    lines = source.splitlines()
    if not lines:
        return []
    try:
        labels = _labels_from_ast(source, len(lines))
    except (SyntaxError, ValueError, RecursionError):
        # ValueError: null bytes; RecursionError: pathological nesting.
        labels = _labels_from_patterns(lines)
    return [LineLabel(i, lab) for i, lab in enumerate(labels)]


def build_entry(problem: RawProblem, solution_index: int) -> SectionedEntry:
    """Partition one solution's lines into the five-section layout."""
    if not 0 <= solution_index < len(problem.solutions):
        raise DomainError(
            f"solution index {solution_index} out of range for {problem.source_id} "
            f"({len(problem.solutions)} solutions)")
    source = problem.solutions[solution_index]
    lines = source.splitlines()
    entry = SectionedEntry(question=problem.question)
    buckets = {
        Label.CLASS_STATEMENT: entry.class_stmts,
        Label.DEF_STATEMENT: entry.def_stmts,
        Label.IMPORT_STATEMENT: entry.import_stmts,
        Label.OTHER: entry.residual,
    }
    for ll in label_lines(source):
        buckets[ll.label].append(lines[ll.line_no])
    return entry


def render_entry(entry: SectionedEntry) -> str:
    """Render the fixed layout; each marker appears exactly once."""
    out: list[str] = [Q_MARK]
    out.extend(entry.question.splitlines())
    out.append(S_MARK)
    out.extend(entry.residual)
    out.append(C_MARK)
    out.extend(entry.class_stmts)
    out.append(D_MARK)
    out.extend(entry.def_stmts)
    out.append(I_MARK)
    out.extend(entry.import_stmts)
    return "\n".join(out) + "\n"


def parse_entry(text: str) -> SectionedEntry:
    """Inverse of render_entry for rendered entries."""
    lines = text.splitlines()
    marker_pos = {}
    for i, line in enumerate(lines):
        if line in SECTION_TOKENS:
            if line in marker_pos:
                raise DomainError(f"duplicate section marker {line}")
            marker_pos[line] = i
    missing = [m for m in SECTION_TOKENS if m not in marker_pos]
    if missing:
        raise DomainError(f"missing section markers: {missing}")
    order = sorted(marker_pos, key=marker_pos.get)
    if tuple(order) != SECTION_TOKENS:
        raise DomainError(f"section markers out of order: {order}")

    def section(mark: str) -> list[str]:
        start = marker_pos[mark] + 1
        later = [p for p in marker_pos.values() if p > marker_pos[mark]]
        end = min(later) if later else len(lines)
        return lines[start:end]

    return SectionedEntry(
        question="\n".join(section(Q_MARK)),
        residual=section(S_MARK),
        class_stmts=section(C_MARK),
        def_stmts=section(D_MARK),
        import_stmts=section(I_MARK),
    )


def tokenize_entry(text: str, tokenizer: ByteTokenizer,
                   doc_id: str = "") -> TokenizedDocument:
    """Tokenize a rendered entry into a line-sentence document."""
    return tokenize_text(text, tokenizer, doc_id=doc_id)


@dataclass(frozen=True)
class ManifestStats:
    by_difficulty: dict[str, int]
    by_split: dict[str, dict[str, int]]

    @property
    def total(self) -> int:
        return sum(self.by_difficulty.values())


def manifest_stats(records) -> ManifestStats:
    """Exact counts per difficulty, and per split when records carry one.

    Accepts RawProblems, manifest dicts, or anything with a `difficulty`
    attribute/key (and optional `split`).
    """
    by_difficulty = {d: 0 for d in DIFFICULTIES}
    by_split: dict[str, dict[str, int]] = {}
    for rec in records:
        if isinstance(rec, dict):
            diff = rec["difficulty"]
            split = rec.get("split")
        else:
            diff = rec.difficulty
            split = getattr(rec, "split", None)
        if diff not in by_difficulty:
            raise DomainError(f"unknown difficulty {diff!r}")
        by_difficulty[diff] += 1
        if split is not None:
            per = by_split.setdefault(split, {d: 0 for d in DIFFICULTIES})
            per[diff] += 1
    return ManifestStats(by_difficulty=by_difficulty, by_split=by_split)


# ---------------------------------------------------------------------------
# on-disk corpus
# ---------------------------------------------------------------------------

def read_problem_dir(path: Path) -> RawProblem:
    """One problem = question.txt + metadata.json + solutions/*.py."""
    path = Path(path)
    question = (path / "question.txt").read_text(encoding="utf-8")
    meta = json.loads((path / "metadata.json").read_text(encoding="utf-8"))
    sol_dir = path / "solutions"
    solutions = tuple(
        p.read_text(encoding="utf-8") for p in sorted(sol_dir.glob("*.py")))
    return RawProblem(
        question=question,
        solutions=solutions,
        difficulty=meta["difficulty"],
        source_id=meta.get("source_id", path.name),
    )


def write_problem_dir(problem: RawProblem, root: Path) -> Path:
    d = Path(root) / problem.source_id
    (d / "solutions").mkdir(parents=True, exist_ok=True)
    (d / "question.txt").write_text(problem.question, encoding="utf-8")
    (d / "metadata.json").write_text(
        json.dumps({"difficulty": problem.difficulty, "source_id": problem.source_id},
                   sort_keys=True) + "\n", encoding="utf-8")
    for i, sol in enumerate(problem.solutions):
        (d / "solutions" / f"solution_{i:03d}.py").write_text(sol, encoding="utf-8")
    return d


def parse_split_spec(spec: str) -> list[tuple[str, float]]:
    """'train=0.9,heldout=0.1' -> [('train', 0.9), ('heldout', 0.1)]."""
    parts = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        name, _, frac = chunk.partition("=")
        try:
            parts.append((name.strip(), float(frac)))
        except ValueError:
            raise DomainError(f"bad split spec fragment {chunk!r}") from None
    if not parts:
        raise DomainError(f"empty split spec {spec!r}")
    total = sum(f for _, f in parts)
    if abs(total - 1.0) > 1e-9:
        raise DomainError(f"split fractions sum to {total}, expected 1.0")
    return parts


def build_corpus(problems: list[RawProblem], out_dir: Path, split_spec: str,
                 seed: int) -> list[dict]:
    """Render one entry per (problem, solution) pair and write the manifest.

    Splits are assigned by a seeded shuffle over entries. Returns the
    manifest records, which are also written as JSONL.
    """
    out_dir = Path(out_dir)
    entries_dir = out_dir / "entries"
    entries_dir.mkdir(parents=True, exist_ok=True)
    splits = parse_split_spec(split_spec)

    pending = []
    for prob in problems:
        for si in range(len(prob.solutions)):
            pending.append((prob, si))

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pending))
    split_of = [""] * len(pending)
    start = 0
    for i, (name, frac) in enumerate(splits):
        count = round(frac * len(pending)) if i < len(splits) - 1 else len(pending) - start
        for j in order[start:start + count]:
            split_of[j] = name
        start += count

    records = []
    for idx, (prob, si) in enumerate(pending):
        entry = build_entry(prob, si)
        rendered = render_entry(entry)
        rel = f"entries/{prob.source_id}__{si:03d}.txt"
        (out_dir / rel).write_text(rendered, encoding="utf-8", newline="\n")
        records.append({
            "source_id": prob.source_id,
            "solution_index": si,
            "difficulty": prob.difficulty,
            "split": split_of[idx],
            "path": rel,
        })
    with open(out_dir / "corpus_manifest.jsonl", "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return records


def load_corpus_manifest(out_dir: Path) -> list[dict]:
    path = Path(out_dir) / "corpus_manifest.jsonl"
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def load_rendered_entries(out_dir: Path, records: list[dict],
                          split: str | None = None) -> list[tuple[str, str]]:
    """Returns (doc_id, rendered_text) pairs, optionally filtered by split."""
    out = []
    for rec in records:
        if split is not None and rec["split"] != split:
            continue
        text = (Path(out_dir) / rec["path"]).read_text(encoding="utf-8")
        out.append((f"{rec['source_id']}__{rec['solution_index']}", text))
    return out
