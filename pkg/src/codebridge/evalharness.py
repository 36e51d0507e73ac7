"""Sandboxed functional-correctness evaluation and pass@k estimation.

Candidate programs run in a separate interpreter process inside a
throwaway working directory, with wall-clock and address-space limits and
a guard preamble that blocks network use, write access outside the
sandbox, and subprocess escape. A candidate failure is always classified
(passed / failed_assertion / compile_error / runtime_error / timeout /
resource_exceeded); only harness breakage raises SandboxError.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import DomainError, SandboxError

DEFAULT_TIMEOUT = 5.0
DEFAULT_MEM_LIMIT = 512 * 1024 * 1024


class Status(str, Enum):
    PASSED = "passed"
    FAILED_ASSERTION = "failed_assertion"
    COMPILE_ERROR = "compile_error"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"
    RESOURCE_EXCEEDED = "resource_exceeded"


@dataclass(frozen=True)
class ExecutionResult:
    status: Status
    wall_time: float
    detail: str = ""


@dataclass(frozen=True)
class EvalProblem:
    """One evaluation task: prompt plus an executable test specification.

    `test` is an assertion program (defines check(candidate) when
    entry_point is set, or is run as-is otherwise); `io_pairs` is the
    stdin/stdout alternative. At least one of the two must be present.
    """

    problem_id: str
    prompt: str
    test: str | None = None
    entry_point: str | None = None
    io_pairs: tuple[tuple[str, str], ...] | None = None

    def __post_init__(self):
        if not self.test and not self.io_pairs:
            raise DomainError(f"problem {self.problem_id} has no tests")


@dataclass
class ProblemOutcome:
    n: int
    c: int
    statuses: list[str] = field(default_factory=list)


@dataclass
class PassAtKReport:
    per_problem: dict[str, ProblemOutcome]
    estimates: dict[int, float]

    def to_json(self) -> str:
        """Deterministic serialization: sorted ids, 4-decimal aggregates."""
        doc = {
            "problems": {
                pid: {"n": out.n, "c": out.c, "statuses": out.statuses}
                for pid, out in sorted(self.per_problem.items())
            },
            "pass_at_k": {str(k): round(v, 4) for k, v in sorted(self.estimates.items())},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# sandboxed execution
# ---------------------------------------------------------------------------

_GUARD = r"""
import builtins as _b, io as _io, os as _os, sys as _sys, socket as _socket
_SANDBOX = _os.path.realpath(_os.getcwd())

def _deny_socket(*a, **k):
    raise OSError("network access is disabled in the sandbox")
_socket.socket = _deny_socket
_socket.create_connection = _deny_socket

def _inside(path):
    try:
        real = _os.path.realpath(_os.path.join(_SANDBOX, _os.fspath(path)))
    except TypeError:
        return True  # file descriptors etc.
    return real == _SANDBOX or real.startswith(_SANDBOX + _os.sep) or \
        real == "/dev/null"

_real_open = _b.open
def _guarded_open(file, mode="r", *a, **k):
    if isinstance(file, (str, bytes, _os.PathLike)) and any(c in str(mode) for c in "wax+"):
        if not _inside(file):
            raise PermissionError(f"write outside sandbox blocked: {file!r}")
    return _real_open(file, mode, *a, **k)
_b.open = _guarded_open
_io.open = _guarded_open

for _name in ("remove", "unlink", "rmdir", "rename", "replace", "truncate"):
    def _deny_fs(*a, _n=_name, **k):
        if a and not _inside(a[0]):
            raise PermissionError(f"os.{_n} outside sandbox blocked")
        return getattr(_os, "_orig_" + _n)(*a, **k)
    setattr(_os, "_orig_" + _name, getattr(_os, _name))
    setattr(_os, _name, _deny_fs)

def _deny_exec(*a, **k):
    raise PermissionError("spawning processes is disabled in the sandbox")
_os.system = _deny_exec
_os.execv = _deny_exec
_os.execve = _deny_exec
_os.fork = _deny_exec
_os.popen = _deny_exec
import subprocess as _sp
_sp.Popen = _deny_exec
_sp.run = _deny_exec
_sp.call = _deny_exec
_sp.check_output = _deny_exec
"""

_RUNNER = r"""
import io, json, os, sys, traceback

def _emit(status, detail=""):
    sys.stdout.write("@@CBRESULT@@"
                     + json.dumps({"status": status, "detail": detail[-2000:]}) + "\n")
    sys.stdout.flush()
    os._exit(0)  # no exception interplay with candidate handlers

spec = json.loads(sys.argv[1])
program = spec["program"]
try:
    code = compile(program, "<candidate>", "exec")
except SyntaxError as e:
    _emit("compile_error", f"{type(e).__name__}: {e}")
except MemoryError:
    _emit("resource_exceeded", "MemoryError during compile")

def _fresh_exec():
    # sys.exit(0) from a main-style candidate is normal termination.
    ns = {"__name__": "__main__"}
    try:
        exec(code, ns)
    except SystemExit as e:
        if e.code not in (0, None):
            raise RuntimeError(f"candidate exited with status {e.code}") from None
    return ns

try:
    if spec["io_pairs"] is not None:
        for case_in, case_out in spec["io_pairs"]:
            sys.stdin = io.StringIO(case_in)
            captured = io.StringIO()
            real_stdout = sys.stdout
            sys.stdout = captured
            try:
                _fresh_exec()
            finally:
                sys.stdout = real_stdout
                sys.stdin = sys.__stdin__
            if captured.getvalue().strip() != case_out.strip():
                _emit("failed_assertion",
                      f"expected {case_out!r}, got {captured.getvalue()!r}")
    else:
        ns = _fresh_exec()
        test_code = compile(spec["test"], "<test>", "exec")
        exec(test_code, ns)
        entry = spec["entry_point"]
        if entry is not None:
            if entry not in ns:
                _emit("runtime_error", f"entry point {entry!r} not defined")
            if "check" not in ns:
                _emit("runtime_error", "test program defines no check()")
            ns["check"](ns[entry])
except AssertionError as e:
    _emit("failed_assertion", f"AssertionError: {e}")
except MemoryError:
    _emit("resource_exceeded", "MemoryError")
except SystemExit as e:
    if e.code not in (0, None):
        _emit("runtime_error", f"SystemExit({e.code})")
    _emit("passed")
except BaseException:
    _emit("runtime_error", traceback.format_exc())
_emit("passed")
"""


def _make_limit_setter(mem_limit: int, timeout: float):
    def set_limits():
        import resource

        resource.setrlimit(resource.RLIMIT_AS, (mem_limit, mem_limit))
        cpu = max(2, int(math.ceil(timeout)) + 2)
        resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu))
        resource.setrlimit(resource.RLIMIT_FSIZE, (64 * 1024 * 1024,) * 2)
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
        os.setsid()
    return set_limits


def run_candidate(program: str, problem: EvalProblem,
                  timeout: float = DEFAULT_TIMEOUT,
                  mem_limit: int = DEFAULT_MEM_LIMIT) -> ExecutionResult:
    """Execute one candidate against one problem's tests in a sandbox."""
    try:
        workdir = tempfile.mkdtemp(prefix="cbsandbox_")
    except OSError as e:
        raise SandboxError(f"cannot create sandbox directory: {e}") from e
    try:
        runner_path = Path(workdir) / "_runner.py"
        runner_path.write_text(_GUARD + _RUNNER, encoding="utf-8")
        spec = json.dumps({
            "program": program,
            "test": problem.test,
            "entry_point": problem.entry_point,
            "io_pairs": list(problem.io_pairs) if problem.io_pairs else None,
        })
        env = {"PATH": os.environ.get("PATH", "/usr/bin:/bin"), "HOME": workdir}
        start = time.perf_counter()
        try:
            proc = subprocess.run(
                [sys.executable, "-I", str(runner_path), spec],
                cwd=workdir, env=env, capture_output=True, text=True,
                timeout=timeout,
                preexec_fn=_make_limit_setter(mem_limit, timeout),
            )
        except subprocess.TimeoutExpired:
            return ExecutionResult(Status.TIMEOUT, time.perf_counter() - start,
                                   f"no result within {timeout}s")
        except OSError as e:
            raise SandboxError(f"failed to launch sandbox process: {e}") from e
        wall = time.perf_counter() - start

        marker = None
        for line in reversed(proc.stdout.splitlines()):
            if line.startswith("@@CBRESULT@@"):
                marker = line[len("@@CBRESULT@@"):]
                break
        if marker is not None:
            try:
                payload = json.loads(marker)
                return ExecutionResult(Status(payload["status"]), wall,
                                       payload.get("detail", ""))
            except (json.JSONDecodeError, ValueError, KeyError):
                pass
        if proc.returncode < 0 or proc.returncode == 137:
            return ExecutionResult(Status.RESOURCE_EXCEEDED, wall,
                                   f"killed (rc={proc.returncode})")
        return ExecutionResult(Status.RUNTIME_ERROR, wall,
                               (proc.stderr or proc.stdout)[-2000:])
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


# ---------------------------------------------------------------------------
# pass@k
# ---------------------------------------------------------------------------

def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimator 1 - C(n-c, k) / C(n, k) in stable product form."""
    if k < 1 or k > n:
        raise DomainError(f"k must satisfy 1 <= k <= n, got k={k}, n={n}")
    if c < 0 or c > n:
        raise DomainError(f"c must satisfy 0 <= c <= n, got c={c}, n={n}")
    if n - c < k:
        return 1.0
    prod = 1.0
    for i in range(n - c + 1, n + 1):
        prod *= 1.0 - k / i
    return 1.0 - prod


def evaluate_model(generator, problems: list[EvalProblem], n_samples: int,
                   ks: list[int], *, timeout: float = DEFAULT_TIMEOUT,
                   mem_limit: int = DEFAULT_MEM_LIMIT,
                   jobs: int = 1) -> PassAtKReport:
    """Generate n_samples per problem, execute all, aggregate pass@k.

    generator(problem, sample_index) -> program text. A generator exception
    is recorded as a runtime_error sample (still counted in n). Candidate
    executions run on up to `jobs` parallel workers; aggregation is
    order-independent and the report is sorted by problem id.
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks:
        raise DomainError("no k values given")
    if n_samples < max(ks):
        raise DomainError(f"n_samples={n_samples} < max k={max(ks)}")

    tasks = []  # (problem, sample_index, program | None)
    for problem in problems:
        for i in range(n_samples):
            try:
                program = generator(problem, i)
            except Exception as e:  # generator bug, not harness failure
                tasks.append((problem, i, None, f"generation failed: {e}"))
                continue
            tasks.append((problem, i, program, ""))

    def run_one(task):
        problem, i, program, note = task
        if program is None:
            return problem.problem_id, i, ExecutionResult(Status.RUNTIME_ERROR, 0.0, note)
        return problem.problem_id, i, run_candidate(program, problem,
                                                    timeout=timeout, mem_limit=mem_limit)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, tasks))
    else:
        results = [run_one(t) for t in tasks]

    per_problem: dict[str, ProblemOutcome] = {
        p.problem_id: ProblemOutcome(n=0, c=0, statuses=[""] * n_samples)
        for p in problems
    }
    for pid, i, result in results:
        out = per_problem[pid]
        out.n += 1
        out.statuses[i] = result.status.value
        if result.status is Status.PASSED:
            out.c += 1

    estimates = {
        k: (sum(pass_at_k(o.n, o.c, k) for o in per_problem.values()) / len(per_problem)
            if per_problem else 0.0)
        for k in ks
    }
    return PassAtKReport(per_problem=per_problem, estimates=estimates)


def evaluate_samples(samples: dict[str, list[str]], problems: list[EvalProblem],
                     ks: list[int], **kwargs) -> PassAtKReport:
    """Evaluate pregenerated samples (problem_id -> list of programs)."""
    counts = {len(v) for v in samples.values()}
    if len(counts) != 1:
        raise DomainError(f"uneven sample counts per problem: {sorted(counts)}")
    n_samples = counts.pop()
    by_id = {p.problem_id: p for p in problems}
    missing = set(samples) - set(by_id)
    if missing:
        raise DomainError(f"samples reference unknown problems: {sorted(missing)}")
    chosen = [by_id[pid] for pid in samples]

    def generator(problem, i):
        return samples[problem.problem_id][i]

    return evaluate_model(generator, chosen, n_samples, ks, **kwargs)


# ---------------------------------------------------------------------------
# problem files
# ---------------------------------------------------------------------------

def load_problems(path) -> list[EvalProblem]:
    """Load JSONL problems; accepts task_id/problem_id field spellings."""
    problems = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            pid = rec.get("problem_id") or rec.get("task_id")
            if not pid:
                raise DomainError("problem record missing problem_id/task_id")
            io_pairs = rec.get("io_pairs")
            problems.append(EvalProblem(
                problem_id=pid,
                prompt=rec.get("prompt", ""),
                test=rec.get("test"),
                entry_point=rec.get("entry_point"),
                io_pairs=tuple((p["input"], p["output"]) for p in io_pairs)
                if io_pairs else None,
            ))
    if not problems:
        raise DomainError(f"no problems in {path}")
    return problems


def dump_problems(problems: list[EvalProblem], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in problems:
            rec = {
                "task_id": p.problem_id,
                "prompt": p.prompt,
                "test": p.test,
                "entry_point": p.entry_point,
            }
            if p.io_pairs:
                rec["io_pairs"] = [{"input": a, "output": b} for a, b in p.io_pairs]
            f.write(json.dumps(rec, sort_keys=True) + "\n")
