"""Acceptance criteria 1-9, one verdict line each in the terminal summary."""

import json
import os
import signal
import subprocess
import sys
import time
from itertools import combinations
from pathlib import Path

import pytest

from corpus import queens, random_corpus
from domsplit.coordinator import CoordinatorConfig, _worker_env, dist_solve
from domsplit.dominion import format_constraint, load_model, parse_model, serialize_model
from domsplit.engine import Branching, Budget, BudgetExhausted, Exhausted, Mode, solve
from domsplit.model import Assignment, eval_constraint
from domsplit.nogoods import SplitUnavailable, split_model
from domsplit.oracle import enumerate_all

ROOT = Path(__file__).resolve().parent.parent
MODELS = ROOT / "models"
BUDGETS = (0, 1, 3, 7, 15)
FACTORS = (2, 3, 4)


def split_or_resume(m, stop, n):
    """Parts of a split, or the lone resumed model when nothing is left to partition."""
    try:
        return list(split_model(m, stop, n, Branching.N_WAY).parts)
    except SplitUnavailable as exc:
        return [exc.base]


def check_cover(m, nodes, n, generated):
    """Returns (violations, parts); every part is appended to ``generated``."""
    everything = enumerate_all(m)
    outcome = solve(m, Budget(max_nodes=nodes), Mode.ALL, Branching.N_WAY)
    if not isinstance(outcome, BudgetExhausted):
        return (0 if list(outcome.solutions) == everything else 1), []
    parts = split_or_resume(m, outcome, n)
    generated.extend(parts)
    pieces = [list(outcome.solutions)] + [enumerate_all(p) for p in parts]
    union = [a for piece in pieces for a in piece]
    violations = 0
    if len(union) != len(set(union)):
        violations += 1
    if set(union) != set(everything):
        violations += 1
    for x, y in combinations(pieces, 2):
        if set(x) & set(y):
            violations += 1
    return violations, parts


@pytest.fixture(scope="module")
def corpus():
    return [queens(n) for n in (4, 5, 6)] + random_corpus(50)


@pytest.fixture(scope="module")
def generated():
    """Split models produced by criteria 1-3, consumed by the round-trip check."""
    return []


@pytest.fixture(scope="module")
def first_level(corpus, generated):
    cases = []
    violations = 0
    for m in corpus:
        for nodes in BUDGETS:
            for n in FACTORS:
                v, parts = check_cover(m, nodes, n, generated)
                violations += v
                cases.append((nodes, n, parts))
    return violations, cases


def test_c1_worked_example(record_acceptance, generated):
    m = load_model(MODELS / "queens4.dominion")
    stop = solve(m, Budget(max_nodes=4), Mode.FIRST, Branching.N_WAY)
    assert isinstance(stop, BudgetExhausted)
    s = split_model(m, stop, 2, Branching.N_WAY)
    generated.extend((s.resumed_base,) + s.parts)
    nogoods = [format_constraint(c, m) for c in s.nogood_constraints]
    parts = [format_constraint(c, m) for c in s.partition_constraints]
    # structure without labels
    shapes = [text.split(" ", 1)[1] for text in nogoods + parts]
    expected = ["not(resume_0_i eq(queens[0], 1))", "leq(queens[1], 2)", "leq(3, queens[1])"]
    passed = shapes == expected
    record_acceptance("1 worked example reproduced", passed, "; ".join(nogoods + parts))
    assert passed


def test_c2_disjoint_cover(record_acceptance, corpus, first_level):
    violations, cases = first_level
    splits = sum(1 for _, _, parts in cases if parts)
    record_acceptance(
        "2 disjoint cover",
        violations == 0,
        f"{len(corpus)} models x {len(BUDGETS)} budgets x {len(FACTORS)} factors, {splits} splits, {violations} violations",
    )
    assert violations == 0


def test_c3_nested_splits(record_acceptance, first_level, generated):
    _, cases = first_level
    violations = checked = 0
    for nodes, n, parts in cases:
        for p in parts:
            v, _ = check_cover(p, nodes, n, generated)
            violations += v
            checked += 1
    record_acceptance("3 nested splits", violations == 0, f"{checked} parts re-split, {violations} violations")
    assert violations == 0


def test_c4_engine_matches_oracle(record_acceptance, corpus):
    mismatches = 0
    for m in corpus:
        expected = enumerate_all(m)
        for branching in (Branching.N_WAY, Branching.TWO_WAY):
            outcome = solve(m, mode=Mode.ALL, branching=branching)
            if not isinstance(outcome, Exhausted) or sorted(outcome.solutions, key=lambda a: tuple(a.values())) != expected:
                mismatches += 1
    counts = [len(enumerate_all(queens(n))) for n in (4, 5, 6)]
    passed = mismatches == 0 and counts == [2, 10, 4]
    record_acceptance("4 engine equals oracle", passed, f"{len(corpus)} models, queens counts {counts}, {mismatches} mismatches")
    assert passed


def test_c5_no_duplicates_across_resumes(record_acceptance, corpus, tmp_path):
    problems = []
    runs = 0
    for i, m in enumerate(corpus[:3] + corpus[3:23]):
        for budget in (2, 5):
            isolation = "process" if i == 2 and budget == 2 else "inline"
            cfg = CoordinatorConfig(
                tmp_path / f"s{i}-{budget}", workers=1, initial_budget=Budget(budget),
                mode=Mode.ALL, isolation=isolation,
            )
            result = dist_solve(m, cfg)
            runs += 1
            got = list(result.solutions)
            if len(got) != len(set(got)) or set(got) != set(enumerate_all(m)):
                problems.append((i, budget))
    record_acceptance("5 no duplicate solutions", not problems, f"{runs} all-mode runs, failures {problems}")
    assert not problems


def _journal_events(spool):
    path = spool / "journal.ndjson"
    if not path.exists():
        return []
    events = []
    for line in path.read_text().splitlines():
        try:
            events.append(json.loads(line)["event"])
        except json.JSONDecodeError:
            pass
    return events


def _dist_cmd(*extra):
    return [sys.executable, "-m", "domsplit", "dist-solve", *map(str, extra)]


def test_c6_crash_recovery(record_acceptance, tmp_path):
    model_file = MODELS / "queens6.dominion"
    m = load_model(model_file)
    base = _dist_cmd(model_file, "--workers", "2", "--initial-budget-nodes", "2")
    clean = subprocess.run(base + ["--spool", tmp_path / "clean"], env=_worker_env(), capture_output=True, timeout=120)
    verdict = clean.returncode

    outcomes = []
    for trial in range(10):
        spool = tmp_path / f"trial{trial}"
        proc = subprocess.Popen(
            base + ["--spool", spool, "--worker-delay-ms", "150"],
            env=_worker_env(), stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, start_new_session=True,
        )
        kill_after = 1 + trial % 3
        deadline = time.monotonic() + 60
        while _journal_events(spool).count("split") < kill_after and proc.poll() is None and time.monotonic() < deadline:
            time.sleep(0.01)
        time.sleep(0.02 * (trial % 4))
        interrupted = proc.poll() is None
        os.killpg(proc.pid, signal.SIGKILL)
        proc.wait()
        interrupted = interrupted and not (spool / "result.json").exists()

        resumed = subprocess.run(
            _dist_cmd("--resume", "--spool", spool), env=_worker_env(), capture_output=True, text=True, timeout=120
        )
        result = json.loads((spool / "result.json").read_text())
        solution = result["solution"]
        valid = solution is not None and all(
            eval_constraint(c, Assignment.for_model(m, solution["queens"])) for c in m.constraints
        )
        outcomes.append(interrupted and resumed.returncode == verdict and valid)

    passed = verdict == 0 and sum(outcomes) == 10
    record_acceptance("6 crash recovery", passed, f"{sum(outcomes)}/10 killed-and-resumed runs agree with the clean run")
    assert passed


def test_c7_no_split_fast_path(record_acceptance, corpus, tmp_path):
    checked = 0
    offenders = []
    for i, m in enumerate(corpus):
        for mode in (Mode.FIRST, Mode.ALL):
            root = solve(m, Budget(max_nodes=100), mode)
            if isinstance(root, BudgetExhausted):
                continue
            spool = tmp_path / f"s{i}-{mode.value}"
            dist_solve(m, CoordinatorConfig(spool, initial_budget=Budget(100), mode=mode, isolation="inline"))
            checked += 1
            events = _journal_events(spool)
            if events.count("split") or events.count("claim") != 1:
                offenders.append(i)
    passed = checked > 0 and not offenders
    record_acceptance("7 no-split fast path", passed, f"{checked} runs solved at the root, splits in {offenders or 'none'}")
    assert passed


def test_c8_round_trip(record_acceptance, generated):
    assert generated, "criteria 1-3 must run first"
    broken = 0
    for m in generated:
        text = serialize_model(m)
        again = parse_model(text)
        if again != m or serialize_model(again) != text:
            broken += 1
    record_acceptance("8 round trip", broken == 0, f"{len(generated)} generated models, {broken} mismatches")
    assert broken == 0


def test_c9_overhead_report(record_acceptance, tmp_path):
    m = queens(6)
    lines = []
    for mode in (Mode.FIRST, Mode.ALL):
        single = solve(m, mode=mode).stats.nodes
        for budget in (2, 3, 5):
            cfg = CoordinatorConfig(tmp_path / f"{mode.value}-{budget}", initial_budget=Budget(budget), mode=mode, isolation="inline")
            stats = dist_solve(m, cfg).stats
            lines.append(
                f"{mode.value} budget={budget}: {stats['nodes']} nodes over {stats['items_run']} items "
                f"({stats['splits']} splits) vs {single} single-run"
            )
    report = "; ".join(lines)
    print("\n" + "\n".join(lines))
    record_acceptance("9 overhead report (informational)", True, report)
