import itertools
import json
import os
import tempfile
import time
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codebridge.errors import DomainError
from codebridge.evalharness import (
    EvalProblem,
    Status,
    dump_problems,
    evaluate_model,
    evaluate_samples,
    load_problems,
    pass_at_k,
    run_candidate,
)
from codebridge.toydata import toy_eval_problems


def brute_force_pass_at_k(n: int, c: int, k: int) -> Fraction:
    """Probability over all C(n, k) subsets that at least one sample passes."""
    outcomes = [True] * c + [False] * (n - c)
    subsets = list(itertools.combinations(range(n), k))
    hits = sum(1 for subset in subsets if any(outcomes[i] for i in subset))
    return Fraction(hits, len(subsets))


class TestPassAtK:
    def test_all_pass(self):
        for k in (1, 3, 5):
            assert pass_at_k(5, 5, k) == 1.0

    def test_none_pass(self):
        for k in (1, 3, 5):
            assert pass_at_k(5, 0, k) == 0.0

    def test_derived_point(self):
        # Enumeration: C(5,2)=10 subsets, 3 contain no passing sample.
        assert brute_force_pass_at_k(5, 2, 2) == Fraction(7, 10)
        assert pass_at_k(5, 2, 2) == pytest.approx(0.7, abs=1e-12)

    def test_oracle_equivalence_exhaustive(self):
        for n in range(1, 9):
            for c in range(n + 1):
                for k in range(1, n + 1):
                    expect = float(brute_force_pass_at_k(n, c, k))
                    assert pass_at_k(n, c, k) == pytest.approx(expect, abs=1e-12), \
                        (n, c, k)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            pass_at_k(5, 2, 6)
        with pytest.raises(DomainError):
            pass_at_k(5, 2, 0)
        with pytest.raises(DomainError):
            pass_at_k(5, 6, 2)
        with pytest.raises(DomainError):
            pass_at_k(5, -1, 2)

    def test_no_overflow_large_n(self):
        val = pass_at_k(10_000, 37, 100)
        assert 0.0 <= val <= 1.0

    @given(n=st.integers(1, 40), data=st.data())
    @settings(max_examples=200, deadline=None)
    def test_monotonicity(self, n, data):
        c = data.draw(st.integers(0, n))
        k = data.draw(st.integers(1, n))
        v = pass_at_k(n, c, k)
        assert 0.0 <= v <= 1.0
        if k < n:
            assert pass_at_k(n, c, k + 1) >= v - 1e-12
        if c < n:
            assert pass_at_k(n, c + 1, k) >= v - 1e-12


@pytest.fixture(scope="module")
def toy():
    problems, solutions = toy_eval_problems()
    return problems, solutions


class TestRunCandidate:
    def test_reference_solutions_pass(self, toy):
        problems, solutions = toy
        for problem in problems[:3]:
            result = run_candidate(solutions[problem.problem_id], problem, timeout=10)
            assert result.status is Status.PASSED, (problem.problem_id, result.detail)

    def test_infinite_loop_times_out(self, toy):
        problems, _ = toy
        start = time.perf_counter()
        result = run_candidate("while True: pass", problems[0], timeout=2)
        elapsed = time.perf_counter() - start
        assert result.status is Status.TIMEOUT
        assert elapsed < 3.0  # timeout + 1s slack

    def test_syntax_error(self, toy):
        problems, _ = toy
        result = run_candidate("def broken(:\n    pass\n", problems[0], timeout=10)
        assert result.status is Status.COMPILE_ERROR

    def test_wrong_answer_is_assertion_failure(self, toy):
        problems, _ = toy
        assert problems[0].entry_point == "add_2"
        result = run_candidate("def add_2(x):\n    return x + 99\n", problems[0],
                               timeout=10)
        assert result.status is Status.FAILED_ASSERTION

    def test_runtime_error(self, toy):
        problems, _ = toy
        result = run_candidate("1 / 0\n", problems[0], timeout=10)
        assert result.status is Status.RUNTIME_ERROR

    def test_memory_hog_classified(self, toy):
        problems, _ = toy
        result = run_candidate("x = ' ' * (10 ** 10)\n", problems[0], timeout=10,
                               mem_limit=256 * 1024 * 1024)
        assert result.status is Status.RESOURCE_EXCEEDED

    def test_canary_outside_sandbox_untouched(self, toy):
        problems, solutions = toy
        fd, canary = tempfile.mkstemp(suffix=".canary")
        os.write(fd, b"untouched")
        os.close(fd)
        try:
            program = (f"open({canary!r}, 'w').write('clobbered')\n"
                       + solutions[problems[0].problem_id])
            result = run_candidate(program, problems[0], timeout=10)
            assert result.status in (Status.RUNTIME_ERROR, Status.RESOURCE_EXCEEDED)
            with open(canary) as f:
                assert f.read() == "untouched"
        finally:
            os.unlink(canary)

    def test_network_blocked(self, toy):
        problems, _ = toy
        result = run_candidate("import socket\nsocket.socket()\n", problems[0],
                               timeout=10)
        assert result.status is Status.RUNTIME_ERROR
        assert "network" in result.detail or "OSError" in result.detail

    def test_writes_inside_sandbox_allowed(self, toy):
        problems, solutions = toy
        program = ("with open('notes.txt', 'w') as f:\n"
                   "    f.write('scratch')\n" + solutions[problems[0].problem_id])
        result = run_candidate(program, problems[0], timeout=10)
        assert result.status is Status.PASSED

    def test_io_pairs_problem(self):
        problem = EvalProblem(
            problem_id="io/0", prompt="",
            io_pairs=((("3 4"), "7"), (("10 2"), "12")))
        good = "a, b = map(int, input().split())\nprint(a + b)\n"
        assert run_candidate(good, problem, timeout=10).status is Status.PASSED
        bad = "a, b = map(int, input().split())\nprint(a * b)\n"
        assert run_candidate(bad, problem, timeout=10).status is Status.FAILED_ASSERTION

    def test_problem_requires_tests(self):
        with pytest.raises(DomainError):
            EvalProblem(problem_id="x", prompt="")


class TestEvaluateModel:
    def test_always_correct_generator(self, toy):
        problems, solutions = toy
        subset = problems[:4]
        report = evaluate_model(
            lambda p, i: solutions[p.problem_id], subset, n_samples=2,
            ks=[1, 2], timeout=10, jobs=2)
        assert report.estimates[1] == 1.0
        assert report.estimates[2] == 1.0
        for out in report.per_problem.values():
            assert out.n == 2 and out.c == 2

    def test_always_broken_generator(self, toy):
        problems, _ = toy
        report = evaluate_model(
            lambda p, i: "def broken(:\n", problems[:3], n_samples=2,
            ks=[1], timeout=10, jobs=2)
        assert report.estimates[1] == 0.0
        for out in report.per_problem.values():
            assert out.statuses == ["compile_error", "compile_error"]

    def test_mixed_oracle_matches_hand_computation(self, toy):
        # Generator passes on exactly the first 2 of 4 samples for problem 0
        # and never for problem 1: pass@2 = (pass_at_k(4,2,2) + 0) / 2.
        problems, solutions = toy
        subset = problems[:2]

        def generator(problem, i):
            if problem.problem_id == subset[0].problem_id and i < 2:
                return solutions[problem.problem_id]
            return "raise ValueError('nope')\n"

        report = evaluate_model(generator, subset, n_samples=4, ks=[1, 2, 4],
                                timeout=10, jobs=2)
        expect2 = (float(brute_force_pass_at_k(4, 2, 2)) + 0.0) / 2
        assert report.estimates[2] == pytest.approx(expect2, abs=1e-12)
        expect1 = (float(brute_force_pass_at_k(4, 2, 1)) + 0.0) / 2
        assert report.estimates[1] == pytest.approx(expect1, abs=1e-12)
        assert report.estimates[4] == pytest.approx(0.5, abs=1e-12)

    def test_generator_exception_counts_in_n(self, toy):
        problems, solutions = toy

        def flaky(problem, i):
            if i == 0:
                raise RuntimeError("generator crashed")
            return solutions[problem.problem_id]

        report = evaluate_model(flaky, problems[:1], n_samples=2, ks=[1], timeout=10)
        out = report.per_problem[problems[0].problem_id]
        assert out.n == 2 and out.c == 1
        assert out.statuses[0] == "runtime_error"

    def test_n_samples_must_cover_max_k(self, toy):
        problems, _ = toy
        with pytest.raises(DomainError):
            evaluate_model(lambda p, i: "", problems[:1], n_samples=2, ks=[1, 10])

    def test_report_serialization_deterministic(self, toy):
        problems, solutions = toy
        report = evaluate_model(
            lambda p, i: solutions[p.problem_id], problems[:3], n_samples=1,
            ks=[1], timeout=10, jobs=3)
        a = report.to_json()
        report2 = evaluate_model(
            lambda p, i: solutions[p.problem_id], problems[:3], n_samples=1,
            ks=[1], timeout=10, jobs=1)
        assert a == report2.to_json()
        parsed = json.loads(a)
        assert parsed["pass_at_k"]["1"] == 1.0

    def test_evaluate_samples_path(self, toy):
        problems, solutions = toy
        subset = problems[:2]
        samples = {p.problem_id: [solutions[p.problem_id], "1/0\n"] for p in subset}
        report = evaluate_samples(samples, subset, ks=[1, 2], timeout=10, jobs=2)
        for out in report.per_problem.values():
            assert (out.n, out.c) == (2, 1)
        assert report.estimates[2] == 1.0

    def test_evaluate_samples_validates_counts(self, toy):
        problems, _ = toy
        with pytest.raises(DomainError):
            evaluate_samples({problems[0].problem_id: ["a"],
                              problems[1].problem_id: ["a", "b"]},
                             problems[:2], ks=[1])


class TestProblemFiles:
    def test_round_trip(self, tmp_path, toy):
        problems, _ = toy
        path = tmp_path / "problems.jsonl"
        dump_problems(problems, path)
        back = load_problems(path)
        assert back == problems

    def test_humaneval_field_names(self, tmp_path):
        rec = {"task_id": "HumanEval/0", "prompt": "def f(x):\n",
               "entry_point": "f", "test": "def check(candidate):\n    pass\n",
               "canonical_solution": "    return x\n"}
        path = tmp_path / "he.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        problems = load_problems(path)
        assert problems[0].problem_id == "HumanEval/0"
        assert problems[0].entry_point == "f"

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(DomainError):
            load_problems(path)
