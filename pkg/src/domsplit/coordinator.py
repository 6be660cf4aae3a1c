"""Spool-backed distributed solving.

Layout of a spool directory::

    config.json          coordinator settings, reused by --resume
    model.dominion       the original model (final answers are checked against it)
    items/<id>.dominion  one model file per work item
    journal.ndjson       append-only log of item state transitions
    out/<id>-<k>/        outbox of the k-th attempt at an item (report.json + parts)
    result.json          written once the run is decided

The journal alone reconstructs the queue.  A ``split`` event commits a
parent and enqueues all its children in one line, and solutions logged for
an item only count once that item has a ``done`` or ``split`` event, so a
crash at any point neither loses nor duplicates work.  Workers see only
their own model file and outbox.
"""

from __future__ import annotations

import fcntl
import json
import logging
import os
import shutil
import subprocess
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .dominion import format_constraint, load_model, serialize_model
from .engine import Branching, Budget, BudgetExhausted, Exhausted, Mode, SolutionFound, solve
from .model import Assignment, Model, ModelError, eval_constraint
from .nogoods import SplitUnavailable, split_model

__all__ = [
    "CoordinatorConfig",
    "CoordinatorError",
    "DistResult",
    "SpoolState",
    "WorkItem",
    "dist_solve",
    "next_budget",
    "recover",
    "replay",
    "run_worker",
]

log = logging.getLogger(__name__)

ROOT_ID = "r"


class CoordinatorError(RuntimeError):
    """The spool cannot be used or a work item keeps failing."""


@dataclass(frozen=True)
class WorkItem:
    id: str
    model_path: str
    depth: int
    budget: Budget
    parent_id: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "depth": self.depth,
            "budget": self.budget.to_json(),
            "parent": self.parent_id,
            "model": self.model_path,
        }

    @classmethod
    def from_json(cls, item_id: str, data: dict) -> WorkItem:
        return cls(item_id, data["model"], data["depth"], Budget.from_json(data["budget"]), data.get("parent"))


@dataclass
class CoordinatorConfig:
    spool_dir: Path
    split_factor: int = 2
    workers: int = 1
    initial_budget: Budget = Budget(max_nodes=100)
    budget_growth: float = 2.0
    max_budget: Optional[Budget] = None
    mode: Mode = Mode.FIRST
    branching: Branching = Branching.N_WAY
    isolation: str = "process"
    max_attempts: int = 3
    worker_delay_ms: int = 0

    def __post_init__(self):
        self.spool_dir = Path(self.spool_dir)
        self.mode = Mode(self.mode)
        self.branching = Branching(self.branching)
        if self.split_factor < 2:
            raise ValueError("split factor must be at least 2")
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if self.budget_growth < 1:
            raise ValueError("budget growth must be >= 1")
        if self.initial_budget.unbounded:
            raise ValueError("initial budget must bound nodes or time")
        if self.isolation not in ("process", "inline"):
            raise ValueError("isolation is 'process' or 'inline'")

    def to_json(self) -> dict:
        return {
            "split_factor": self.split_factor,
            "workers": self.workers,
            "initial_budget": self.initial_budget.to_json(),
            "budget_growth": self.budget_growth,
            "max_budget": self.max_budget.to_json() if self.max_budget else None,
            "mode": self.mode.value,
            "branching": self.branching.value,
            "isolation": self.isolation,
            "max_attempts": self.max_attempts,
        }

    @classmethod
    def from_json(cls, spool_dir: Path, data: dict, **overrides) -> CoordinatorConfig:
        kwargs = dict(data)
        kwargs["initial_budget"] = Budget.from_json(data["initial_budget"])
        kwargs["max_budget"] = Budget.from_json(data["max_budget"]) if data.get("max_budget") else None
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(spool_dir=spool_dir, **kwargs)


def next_budget(depth: int, cfg: CoordinatorConfig) -> Budget:
    """``initial_budget * growth**depth``, per bound, capped by ``max_budget``."""
    if depth < 0:
        raise ValueError("depth must be non-negative")

    def scale(initial: Optional[int], cap: Optional[int]) -> Optional[int]:
        if initial is None:
            return None
        value = int(round(initial * cfg.budget_growth**depth))
        return min(value, cap) if cap is not None else value

    cap = cfg.max_budget or Budget()
    return Budget(
        scale(cfg.initial_budget.max_nodes, cap.max_nodes),
        scale(cfg.initial_budget.max_millis, cap.max_millis),
    )


@dataclass
class SpoolState:
    items: dict[str, WorkItem] = field(default_factory=dict)
    pending: list[str] = field(default_factory=list)
    running: dict[str, Optional[int]] = field(default_factory=dict)
    done: set[str] = field(default_factory=set)
    found: Optional[dict] = None
    found_by: Optional[str] = None
    solutions: list[dict] = field(default_factory=list)
    uncommitted: dict[str, list[dict]] = field(default_factory=dict)
    attempts: dict[str, int] = field(default_factory=dict)
    splits: int = 0
    nodes: int = 0
    items_run: int = 0
    crashes: int = 0

    def _enqueue(self, item: WorkItem):
        if item.id in self.done:
            return
        self.items.setdefault(item.id, item)
        self.running.pop(item.id, None)
        if item.id not in self.pending:
            self.pending.append(item.id)

    def _commit(self, item_id: str, stats: Optional[dict]):
        self.pending = [i for i in self.pending if i != item_id]
        self.running.pop(item_id, None)
        if item_id in self.done:
            return
        self.done.add(item_id)
        self.solutions.extend(self.uncommitted.pop(item_id, []))
        self.items_run += 1
        if stats:
            self.nodes += stats.get("nodes", 0)

    def apply(self, event: dict):
        kind, item_id, payload = event["event"], event.get("id"), event.get("payload") or {}
        if kind == "enqueue":
            self._enqueue(WorkItem.from_json(item_id, payload))
        elif kind == "claim":
            if item_id in self.pending:
                self.pending.remove(item_id)
                self.running[item_id] = event.get("worker")
                self.attempts[item_id] = self.attempts.get(item_id, 0) + 1
                self.uncommitted.pop(item_id, None)
        elif kind == "crash":
            self.crashes += 1
        elif kind == "solution":
            if item_id not in self.done:
                self.uncommitted.setdefault(item_id, []).append(payload["solution"])
        elif kind == "split":
            if item_id not in self.done:
                self.splits += 1
                self._commit(item_id, payload.get("stats"))
                for child in payload["children"]:
                    self._enqueue(WorkItem.from_json(child["id"], child))
        elif kind == "done":
            self._commit(item_id, payload.get("stats"))
        elif kind == "found":
            if self.found is None:
                self.found = payload["solution"]
                self.found_by = item_id

    def recovered(self) -> SpoolState:
        """Everything that was running goes back to the queue; its partial output is dropped."""
        state = replace(self, pending=list(self.pending), running={}, uncommitted={})
        state.pending.extend(i for i in self.running if i not in state.pending)
        return state


def _read_journal(path: Path) -> list[dict]:
    events = []
    if not path.exists():
        return events
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError:
                log.warning("journal line %d is corrupt, skipped", lineno)
    return events


def replay(spool_dir: Path, upto: Optional[int] = None) -> SpoolState:
    """Rebuild spool state from the journal (optionally only its first ``upto`` events)."""
    state = SpoolState()
    events = _read_journal(Path(spool_dir) / "journal.ndjson")
    for event in events[:upto]:
        state.apply(event)
    return state


@dataclass(frozen=True)
class DistResult:
    status: str
    solution: Optional[Assignment]
    solutions: tuple[Assignment, ...]
    stats: dict

    @property
    def satisfiable(self) -> bool:
        return self.status == "sat"


def _assignment_from_json(model: Model, data: dict) -> Assignment:
    values = []
    for ref in model.variables:
        values.append(data[ref.array][ref.index])
    return Assignment.for_model(model, values)


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def run_worker(
    model_file: Path,
    outbox: Path,
    budget: Budget,
    mode: Mode,
    branching: Branching,
    split_factor: int,
    delay_ms: int = 0,
) -> dict:
    """Solve one work item and write ``report.json`` (last) plus any part files to ``outbox``.

    The report status is ``solved``, ``exhausted``, ``split`` or ``resume``
    (the explored region was cut away but nothing could be partitioned).
    """
    model = load_model(model_file)
    outbox.mkdir(parents=True, exist_ok=True)
    if delay_ms:
        time.sleep(delay_ms / 1000.0)
    outcome = solve(model, budget, mode, branching)
    report: dict = {"stats": outcome.stats.to_json()}
    if isinstance(outcome, SolutionFound):
        report.update(status="solved", solutions=[outcome.assignment.by_array()])
    elif isinstance(outcome, Exhausted):
        report.update(status="exhausted", solutions=[a.by_array() for a in outcome.solutions])
    elif isinstance(outcome, BudgetExhausted):
        report["solutions"] = [a.by_array() for a in outcome.solutions]
        try:
            split = split_model(model, outcome, split_factor, branching)
        except SplitUnavailable as exc:
            (outbox / "part_0.dominion").write_text(serialize_model(exc.base), encoding="utf-8")
            report.update(status="resume", parts=["part_0.dominion"])
        else:
            names = []
            for i, part in enumerate(split.parts):
                names.append(f"part_{i}.dominion")
                (outbox / names[-1]).write_text(serialize_model(part), encoding="utf-8")
            report.update(
                status="split",
                parts=names,
                frontier=str(split.frontier),
                constraints=[format_constraint(c, model) for c in split.nogood_constraints]
                + [format_constraint(c, model) for c in split.partition_constraints if c is not None],
            )
    else:
        raise RuntimeError(f"unexpected outcome {outcome!r}")
    _atomic_write(outbox / "report.json", json.dumps(report))
    return report


class _Spool:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.items = self.root / "items"
        self.out = self.root / "out"
        self.journal_path = self.root / "journal.ndjson"
        self._journal = None
        self._lock = None

    def open(self):
        try:
            self.items.mkdir(parents=True, exist_ok=True)
            self.out.mkdir(exist_ok=True)
            self._lock = open(self.root / "lock", "w")
            try:
                fcntl.flock(self._lock, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError:
                raise CoordinatorError(f"spool {self.root} is in use by another coordinator") from None
            self._journal = self.journal_path.open("a", encoding="utf-8")
        except OSError as exc:
            raise CoordinatorError(f"cannot open spool {self.root}: {exc}") from exc

    def close(self):
        if self._journal:
            self._journal.close()
        if self._lock:
            self._lock.close()

    def append(self, event: str, item_id: Optional[str] = None, worker=None, payload=None) -> dict:
        record = {"event": event, "id": item_id, "worker": worker, "ts": round(time.time(), 6), "payload": payload}
        try:
            self._journal.write(json.dumps(record) + "\n")
            self._journal.flush()
            os.fsync(self._journal.fileno())
        except OSError as exc:
            raise CoordinatorError(f"journal write failed: {exc}") from exc
        return record


class Coordinator:
    def __init__(self, cfg: CoordinatorConfig):
        self.cfg = cfg
        self.spool = _Spool(cfg.spool_dir)
        self.state = SpoolState()
        self.running: dict[str, tuple[object, Path]] = {}

    # -- setup ------------------------------------------------------------------

    def start(self, model: Model) -> DistResult:
        root = self.cfg.spool_dir
        if (root / "journal.ndjson").exists():
            raise CoordinatorError(f"spool {root} already holds a run; use resume")
        self.spool.open()
        try:
            _atomic_write(root / "config.json", json.dumps(self.cfg.to_json(), indent=2))
            _atomic_write(root / "model.dominion", serialize_model(model))
            _atomic_write(self.spool.items / f"{ROOT_ID}.dominion", serialize_model(model))
            item = WorkItem(ROOT_ID, f"items/{ROOT_ID}.dominion", 0, next_budget(0, self.cfg))
            self._record("enqueue", item.id, payload=item.to_json())
            return self._run(model)
        finally:
            self._shutdown()

    def resume(self) -> DistResult:
        root = self.cfg.spool_dir
        try:
            model = load_model(root / "model.dominion")
        except (OSError, ModelError) as exc:
            raise CoordinatorError(f"cannot read the original model from {root}: {exc}") from exc
        self.spool.open()
        try:
            self.state = replay(root).recovered()
            self._reconcile()
            for item_id in self.state.pending:
                self._check_item_file(self.state.items[item_id])
            return self._run(model)
        finally:
            self._shutdown()

    def _check_item_file(self, item: WorkItem):
        try:
            load_model(self.cfg.spool_dir / item.model_path)
        except (OSError, ModelError) as exc:
            raise CoordinatorError(f"work item {item.id} cannot be rebuilt: {exc}") from exc

    def _reconcile(self):
        """Queue item files whose parent finished but whose own enqueue never made it to the journal."""
        for path in sorted(self.spool.items.glob("*.dominion")):
            item_id = path.stem
            if item_id in self.state.items or "." not in item_id:
                continue
            parent = item_id.rsplit(".", 1)[0]
            if parent not in self.state.done:
                continue
            depth = item_id.count(".")
            item = WorkItem(item_id, f"items/{path.name}", depth, next_budget(depth, self.cfg), parent)
            log.warning("rebuilding work item %s from its model file", item_id)
            self._record("enqueue", item_id, payload=item.to_json())

    def _record(self, event: str, item_id: Optional[str] = None, worker=None, payload=None):
        self.state.apply(self.spool.append(event, item_id, worker, payload))

    # -- main loop ----------------------------------------------------------------

    def _run(self, model: Model) -> DistResult:
        st = self.state
        while st.found is None:
            while st.pending and len(self.running) < self.cfg.workers:
                self._launch(st.items[st.pending[0]])
                if self.cfg.isolation == "inline":
                    break
            if not self.running:
                break
            for item_id in self._wait():
                self._finish(item_id)
                if st.found is not None:
                    break
        return self._result(model)

    def _launch(self, item: WorkItem):
        slot = next(i for i in range(self.cfg.workers) if i not in self.state.running.values())
        self._record("claim", item.id, worker=slot)
        attempt = self.state.attempts[item.id]
        outbox = self.spool.out / f"{item.id}-{attempt}"
        if outbox.exists():
            shutil.rmtree(outbox)
        model_file = self.cfg.spool_dir / item.model_path
        if self.cfg.isolation == "inline":
            try:
                run_worker(
                    model_file, outbox, item.budget, self.cfg.mode, self.cfg.branching,
                    self.cfg.split_factor, self.cfg.worker_delay_ms,
                )
            except Exception:
                log.exception("work item %s failed", item.id)
            self.running[item.id] = (None, outbox)
            return
        outbox.mkdir(parents=True)
        cmd = [
            sys.executable, "-m", "domsplit", "worker", str(model_file), str(outbox),
            "--mode", self.cfg.mode.value,
            "--branching", self.cfg.branching.value,
            "--split-factor", str(self.cfg.split_factor),
        ]
        if item.budget.max_nodes is not None:
            cmd += ["--budget-nodes", str(item.budget.max_nodes)]
        if item.budget.max_millis is not None:
            cmd += ["--budget-millis", str(item.budget.max_millis)]
        if self.cfg.worker_delay_ms:
            cmd += ["--delay-ms", str(self.cfg.worker_delay_ms)]
        with (outbox / "stderr.log").open("wb") as err:
            proc = subprocess.Popen(cmd, stdout=subprocess.DEVNULL, stderr=err, env=_worker_env())
        self.running[item.id] = (proc, outbox)

    def _wait(self) -> list[str]:
        while True:
            finished = [
                item_id for item_id, (proc, _) in self.running.items()
                if proc is None or proc.poll() is not None
            ]
            if finished:
                return finished
            time.sleep(0.005)

    def _finish(self, item_id: str):
        proc, outbox = self.running.pop(item_id)
        report = None
        if proc is None or proc.returncode == 0:
            try:
                report = json.loads((outbox / "report.json").read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                report = None
        if report is None:
            self._crashed(item_id, proc)
            return

        item = self.state.items[item_id]
        status = report["status"]
        if status == "solved" and self.cfg.mode is Mode.FIRST:
            self._record("found", item_id, payload={"solution": report["solutions"][0]})
            self._record("done", item_id, payload={"status": status, "stats": report["stats"]})
            return
        for sol in report.get("solutions", []):
            self._record("solution", item_id, payload={"solution": sol})
        if status in ("exhausted", "solved"):
            self._record("done", item_id, payload={"status": status, "stats": report["stats"]})
            return

        children = []
        for i, name in enumerate(report["parts"]):
            child_id = f"{item_id}.{i}"
            target = self.spool.items / f"{child_id}.dominion"
            try:
                shutil.copyfile(outbox / name, target)
            except OSError as exc:
                raise CoordinatorError(f"cannot store split model {target}: {exc}") from exc
            # nothing left to partition: the single resumed model runs to completion
            budget = next_budget(item.depth + 1, self.cfg) if status == "split" else Budget()
            child = WorkItem(child_id, f"items/{child_id}.dominion", item.depth + 1, budget, item_id)
            children.append({"id": child_id, **child.to_json()})
        self._record(
            "split", item_id,
            payload={"children": children, "stats": report["stats"], "constraints": report.get("constraints", [])},
        )
        for child in children:
            self._record("enqueue", child["id"], payload={k: v for k, v in child.items() if k != "id"})

    def _crashed(self, item_id: str, proc):
        code = None if proc is None else proc.returncode
        self._record("crash", item_id, payload={"returncode": code})
        if self.state.attempts.get(item_id, 0) >= self.cfg.max_attempts:
            raise CoordinatorError(f"work item {item_id} failed {self.state.attempts[item_id]} times")
        log.warning("worker for %s exited with %s, requeued", item_id, code)
        self._record("enqueue", item_id, payload=self.state.items[item_id].to_json())

    def _shutdown(self):
        for proc, _ in self.running.values():
            if proc is not None and proc.poll() is None:
                proc.kill()
                proc.wait()
        self.running.clear()
        self.spool.close()

    def _result(self, model: Model) -> DistResult:
        st = self.state
        if st.found is not None:
            solutions = [st.found]
        else:
            solutions = st.solutions
        parsed = [_assignment_from_json(model, s) for s in solutions]
        for a in parsed:
            broken = [c.label for c in model.constraints if not eval_constraint(c, a)]
            if broken:
                raise CoordinatorError(f"reported solution {a.by_array()} violates {broken}")
        stats = {
            "items_run": st.items_run,
            "splits": st.splits,
            "nodes": st.nodes,
            "crashes": st.crashes,
            "solutions": len(parsed),
        }
        status = "sat" if parsed else "unsat"
        result = {"status": status, "solution": solutions[0] if solutions else None, "stats": stats}
        if self.cfg.mode is Mode.ALL:
            result["solutions"] = solutions
        try:
            _atomic_write(self.cfg.spool_dir / "result.json", json.dumps(result, indent=2))
        except OSError as exc:
            raise CoordinatorError(f"cannot write result: {exc}") from exc
        return DistResult(status, parsed[0] if parsed else None, tuple(parsed), stats)


def _worker_env() -> dict:
    env = dict(os.environ)
    src = str(Path(__file__).resolve().parent.parent)
    env["PYTHONPATH"] = src + (os.pathsep + env["PYTHONPATH"] if env.get("PYTHONPATH") else "")
    return env


def dist_solve(m: Model, cfg: CoordinatorConfig) -> DistResult:
    """Solve ``m`` by repeated run/stop/split over a spool of independent work items.

    First mode returns as soon as any item reports a solution; otherwise the
    answer is decided when the spool drains.
    """
    return Coordinator(cfg).start(m)


def recover(spool_dir: Path, **overrides) -> DistResult:
    """Continue a run from its spool, re-queueing every item that was in flight."""
    spool_dir = Path(spool_dir)
    try:
        data = json.loads((spool_dir / "config.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CoordinatorError(f"no usable config in spool {spool_dir}: {exc}") from exc
    cfg = CoordinatorConfig.from_json(spool_dir, data, **overrides)
    return Coordinator(cfg).resume()
