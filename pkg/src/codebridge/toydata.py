"""Bundled synthetic data: a toy training corpus and a toy eval set.

Both are generated deterministically from templates so every test and the
full pipeline run without downloads. The training corpus produces small
valid Python programs mixing imports, defs, classes, and loose statements;
the eval set is 20 function-completion problems with assertion tests and
reference solutions that pass them.
"""

from __future__ import annotations

import numpy as np

from .corpus import DIFFICULTIES, RawProblem
from .evalharness import EvalProblem

WORDS = ("lantern", "orbit", "pebble", "quartz", "meadow", "ember", "violet",
         "harbor", "juniper", "krill", "nomad", "prism")


def _sum_of_squares(rng) -> tuple[str, str]:
    n = int(rng.integers(4, 30))
    q = (f"Compute the sum of squares of the first {n} positive integers.\n"
         "Read no input.\nPrint a single integer.")
    sol = (
        "def sum_squares(limit):\n"
        "    total = 0\n"
        "    for i in range(1, limit + 1):\n"
        "        total += i * i\n"
        "    return total\n"
        "\n"
        f"print(sum_squares({n}))\n"
    )
    return q, sol


def _tally_class(rng) -> tuple[str, str]:
    k = int(rng.integers(2, 12))
    s = int(rng.integers(1, 9))
    q = (f"A tally starts at zero and receives {k} increments of size {s}.\n"
         f"Print the final total.")
    sol = (
        "class Tally:\n"
        "    def __init__(self):\n"
        "        self.total = 0\n"
        "\n"
        "    def add(self, amount):\n"
        "        self.total += amount\n"
        "\n"
        "tally = Tally()\n"
        f"for _ in range({k}):\n"
        f"    tally.add({s})\n"
        "print(tally.total)\n"
    )
    return q, sol


def _reverse_word(rng) -> tuple[str, str]:
    w = WORDS[int(rng.integers(len(WORDS)))]
    q = f"Reverse the string '{w}' and print the result."
    sol = (
        "def reverse_text(text):\n"
        "    return text[::-1]\n"
        "\n"
        f"print(reverse_text('{w}'))\n"
    )
    return q, sol


def _gcd(rng) -> tuple[str, str]:
    a = int(rng.integers(6, 200))
    b = int(rng.integers(6, 200))
    q = (f"Print the greatest common divisor of {a} and {b}.\n"
         "Use a single line of output.")
    sol = (
        "import math\n"
        "\n"
        f"print(math.gcd({a}, {b}))\n"
    )
    return q, sol


def _even_count(rng) -> tuple[str, str]:
    vals = [int(v) for v in rng.integers(0, 50, size=int(rng.integers(5, 10)))]
    q = (f"Given the list {vals}, count how many entries are even.\n"
         "Print the count.")
    sol = (
        f"values = {vals}\n"
        "evens = [v for v in values if v % 2 == 0]\n"
        "print(len(evens))\n"
    )
    return q, sol


def _converter(rng) -> tuple[str, str]:
    off = int(rng.integers(-10, 11))
    scale = int(rng.integers(2, 6))
    val = int(rng.integers(0, 20))
    q = (f"An affine converter applies offset {off} and scale {scale}.\n"
         f"Print the converted value of {val}.")
    sol = (
        "import sys\n"
        "\n"
        "class Converter:\n"
        "    def __init__(self, offset, scale):\n"
        "        self.offset = offset\n"
        "        self.scale = scale\n"
        "\n"
        "    def apply(self, value):\n"
        "        return self.offset + self.scale * value\n"
        "\n"
        "def main():\n"
        f"    conv = Converter({off}, {scale})\n"
        f"    sys.stdout.write(str(conv.apply({val})) + '\\n')\n"
        "\n"
        "main()\n"
    )
    return q, sol


def _fibonacci(rng) -> tuple[str, str]:
    n = int(rng.integers(3, 25))
    q = f"Print the {n}th Fibonacci number, counting fib(0) = 0."
    sol = (
        "def fib(n):\n"
        "    a, b = 0, 1\n"
        "    for _ in range(n):\n"
        "        a, b = b, a + b\n"
        "    return a\n"
        "\n"
        f"print(fib({n}))\n"
    )
    return q, sol


def _word_lengths(rng) -> tuple[str, str]:
    picks = [WORDS[int(i)] for i in rng.choice(len(WORDS), size=4, replace=False)]
    sentence = " ".join(picks)
    q = (f"For the sentence '{sentence}', print the length of each word\n"
         "on its own line, in order.")
    sol = (
        "from collections import deque\n"
        "\n"
        f"words = deque('{sentence}'.split())\n"
        "while words:\n"
        "    print(len(words.popleft()))\n"
    )
    return q, sol


_TEMPLATES = (_sum_of_squares, _tally_class, _reverse_word, _gcd,
              _even_count, _converter, _fibonacci, _word_lengths)


def generate_toy_problems(n: int = 200, seed: int = 0) -> list[RawProblem]:
    """Deterministic template corpus; difficulty labels round-robin."""
    rng = np.random.default_rng(seed)
    problems = []
    for i in range(n):
        template = _TEMPLATES[int(rng.integers(len(_TEMPLATES)))]
        question, solution = template(rng)
        problems.append(RawProblem(
            question=question,
            solutions=(solution,),
            difficulty=DIFFICULTIES[i % 3],
            source_id=f"toy_{i:04d}",
        ))
    return problems


# ---------------------------------------------------------------------------
# toy eval set (20 problems, HumanEval-style)
# ---------------------------------------------------------------------------

def _fn_problem(pid, name, doc, body, cases):
    """cases: list of (args tuple, expected) pairs used for asserts."""
    prompt = f"def {name}(x):\n    \"\"\"{doc}\"\"\"\n"
    checks = "\n".join(
        f"    assert candidate({', '.join(map(repr, args))}) == {expected!r}"
        for args, expected in cases)
    test = f"def check(candidate):\n{checks}\n"
    solution = prompt + body
    return EvalProblem(problem_id=pid, prompt=prompt, test=test,
                       entry_point=name), solution


def toy_eval_problems() -> tuple[list[EvalProblem], dict[str, str]]:
    """Returns (problems, reference solutions keyed by problem id)."""
    specs = []
    for k in (2, 3, 5, 7, 11):
        specs.append((f"add_{k}", f"Return x plus {k}.", f"    return x + {k}\n",
                      [((1,), 1 + k), ((0,), k), ((-4,), -4 + k)]))
    for k in (2, 3, 4):
        specs.append((f"times_{k}", f"Return x times {k}.", f"    return x * {k}\n",
                      [((1,), k), ((5,), 5 * k), ((0,), 0)]))
    for k in (1, 6):
        specs.append((f"minus_{k}", f"Return x minus {k}.", f"    return x - {k}\n",
                      [((10,), 10 - k), ((0,), -k)]))
    specs.extend([
        ("negate", "Return the negation of x.", "    return -x\n",
         [((3,), -3), ((-7,), 7), ((0,), 0)]),
        ("square", "Return x squared.", "    return x * x\n",
         [((3,), 9), ((-2,), 4), ((0,), 0)]),
        ("is_even", "Return True when x is even.", "    return x % 2 == 0\n",
         [((4,), True), ((7,), False), ((0,), True)]),
        ("reverse_text", "Return the string x reversed.", "    return x[::-1]\n",
         [(("abc",), "cba"), (("",), ""), (("ab",), "ba")]),
        ("first_char", "Return the first character of x.", "    return x[0]\n",
         [(("abc",), "a"), (("z",), "z")]),
        ("last_char", "Return the last character of x.", "    return x[-1]\n",
         [(("abc",), "c"), (("z",), "z")]),
        ("repeat_twice", "Return x concatenated with itself.", "    return x + x\n",
         [(("ab",), "abab"), (("",), "")]),
        ("text_length", "Return the length of x.", "    return len(x)\n",
         [(("abc",), 3), (("",), 0), (("hello",), 5)]),
        ("half_floor", "Return x divided by two, rounded down.", "    return x // 2\n",
         [((9,), 4), ((8,), 4), ((-3,), -2)]),
        ("absolute", "Return the absolute value of x.", "    return abs(x)\n",
         [((-5,), 5), ((5,), 5), ((0,), 0)]),
    ])
    assert len(specs) == 20
    problems = []
    solutions = {}
    for i, (name, doc, body, cases) in enumerate(specs):
        problem, solution = _fn_problem(f"Toy/{i}", name, doc, body, cases)
        problems.append(problem)
        solutions[problem.problem_id] = solution
    return problems, solutions
