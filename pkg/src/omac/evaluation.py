"""Task ingestion, per-task evaluators, and candidate scoring.

Tasks arrive as UTF-8 JSONL (task_id, query, optional gold and
evaluator_hint). Candidate scoring splices the candidate into the base
config, optionally samples a task subset with a seeded draw shared across
candidates (paired comparisons), runs each task on its own derived seed, and
aggregates the mean. Tasks may run on a bounded worker pool; per-task events
are buffered and flushed in task order, so the ledger and the aggregate are
independent of execution order and worker count.
"""

from __future__ import annotations

import json
import math
import random
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from . import collab, domain
from .backend import Backend
from .domain import Candidate, MasConfig, Task
from .errors import EvalError, OmacError, TaskFileError
from .ledger import NULL_SINK, EventSink, ListSink
from .prompts import Template
from .seeds import derive_seed


@dataclass(frozen=True)
class ChoiceMatch:
    pass


@dataclass(frozen=True)
class ExactMatch:
    pass


@dataclass(frozen=True)
class ExternalCommand:
    """Command template run per task; {answer_file} and {task_id} placeholders
    are substituted and exit status 0 means pass."""

    command: str

    def __post_init__(self):
        if "{answer_file}" not in self.command:
            raise ValueError("ExternalCommand template must contain {answer_file}")


EvaluatorSpec = Union[ChoiceMatch, ExactMatch, ExternalCommand]


@dataclass(frozen=True)
class EvaluationReport:
    candidate_id: str
    per_task: tuple[tuple[str, float], ...]
    aggregate: float
    tasks_evaluated: int
    sample_fraction: float
    partial: bool = False
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "per_task", tuple(tuple(p) for p in self.per_task))
        object.__setattr__(self, "notes", tuple(self.notes))
        if self.tasks_evaluated != len(self.per_task):
            raise ValueError("tasks_evaluated must equal per_task length")
        if self.per_task:
            mean = sum(s for _, s in self.per_task) / len(self.per_task)
            if abs(mean - self.aggregate) > 1e-12:
                raise ValueError("aggregate must be the mean of per-task scores")


def load_tasks(path: str | Path) -> list[Task]:
    """One Task per JSONL line, input order preserved."""
    tasks: list[Task] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                task = Task(task_id=raw["task_id"], query=raw["query"],
                            gold=raw.get("gold"),
                            evaluator_hint=raw.get("evaluator_hint"))
            except (ValueError, KeyError, TypeError) as exc:
                raise TaskFileError(f"malformed line {n}: {exc}") from None
            if task.task_id in seen:
                raise TaskFileError(f"duplicate task_id: {task.task_id}")
            seen.add(task.task_id)
            tasks.append(task)
    return tasks


def _score_answer(final_answer: Optional[str], task: Task,
                  evaluator: EvaluatorSpec) -> tuple[float, Optional[str]]:
    if final_answer is None:
        return 0.0, "no answer"
    if isinstance(evaluator, ChoiceMatch):
        if task.gold is None:
            return 0.0, "no gold"
        return (1.0 if final_answer.strip().upper() == task.gold.strip().upper()
                else 0.0), None
    if isinstance(evaluator, ExactMatch):
        if task.gold is None:
            return 0.0, "no gold"
        return (1.0 if final_answer.strip() == task.gold.strip() else 0.0), None
    assert isinstance(evaluator, ExternalCommand)
    with tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False,
                                     encoding="utf-8") as fh:
        # raw answer text, no trailing newline added
        fh.write(final_answer)
        answer_file = fh.name
    try:
        command = (evaluator.command
                   .replace("{answer_file}", answer_file)
                   .replace("{task_id}", task.task_id))
        result = subprocess.run(shlex.split(command), capture_output=True)
        return (1.0 if result.returncode == 0 else 0.0), None
    finally:
        Path(answer_file).unlink(missing_ok=True)


def evaluate_task(config: MasConfig, task: Task, evaluator: EvaluatorSpec,
                  backend: Backend, seed, *,
                  templates: Optional[dict[str, Template]] = None,
                  sink: EventSink = NULL_SINK) -> float:
    """Run the collaboration and score the final answer against gold."""
    transcript = collab.run_collaboration(config, task, backend, seed,
                                          templates=templates, sink=sink)
    score, note = _score_answer(transcript.final_answer, task, evaluator)
    if note:
        sink.emit("FallbackTriggered", where="evaluate_task",
                  task_id=task.task_id, reason=note)
    return score


def subset_indices(n_tasks: int, sample_fraction: float, seed) -> list[int]:
    """Indices of the evaluated subset, ascending. Fraction 1 keeps all tasks
    in order; otherwise a seeded draw of max(1, floor(fraction*n)) tasks,
    shared across candidates so comparisons stay paired."""
    if not 0 < sample_fraction <= 1:
        raise ValueError("sample_fraction must be in (0, 1]")
    if sample_fraction >= 1.0:
        return list(range(n_tasks))
    k = max(1, math.floor(n_tasks * sample_fraction + 1e-9))
    rng = random.Random(derive_seed(seed, "subset"))
    return sorted(rng.sample(range(n_tasks), k))


def evaluate_candidate(base_config: MasConfig, candidate: Candidate,
                       tasks: Sequence[Task], evaluator: EvaluatorSpec,
                       backend: Backend, seed, *, sample_fraction: float = 1.0,
                       jobs: int = 1,
                       templates: Optional[dict[str, Template]] = None,
                       sink: EventSink = NULL_SINK,
                       transcript_sink=None) -> EvaluationReport:
    """Splice the candidate, evaluate the sampled tasks, set candidate.score.

    Task-level hard errors are collected: the remaining tasks still run, the
    partial report is attached to the raised EvalError.
    """
    if not tasks:
        raise ValueError("tasks must be nonempty")
    spliced = domain.splice(base_config, candidate)
    indices = subset_indices(len(tasks), sample_fraction, seed)

    def one(task: Task) -> tuple[float, ListSink, Optional[domain.Transcript]]:
        buffer = ListSink()
        transcript = collab.run_collaboration(spliced, task, backend,
                                              derive_seed(seed, task.task_id),
                                              templates=templates, sink=buffer)
        score, note = _score_answer(transcript.final_answer, task, evaluator)
        if note:
            buffer.emit("FallbackTriggered", where="evaluate_task",
                        task_id=task.task_id, reason=note)
        return score, buffer, transcript

    picked = [tasks[i] for i in indices]
    results: list[Optional[tuple[float, ListSink, Optional[domain.Transcript]]]] = []
    errors: list[tuple[str, Exception]] = []
    if jobs <= 1:
        for task in picked:
            try:
                results.append(one(task))
            except Exception as exc:  # noqa: BLE001 - task isolation by contract
                errors.append((task.task_id, exc))
                results.append(None)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(one, task) for task in picked]
            for task, future in zip(picked, futures):
                try:
                    results.append(future.result())
                except Exception as exc:  # noqa: BLE001
                    errors.append((task.task_id, exc))
                    results.append(None)

    per_task: list[tuple[str, float]] = []
    for task, result in zip(picked, results):
        if result is None:
            sink.emit("FallbackTriggered", where="evaluate_candidate",
                      task_id=task.task_id, reason="task failed")
            continue
        score, buffer, transcript = result
        for kind, payload in buffer.items:
            sink.emit(kind, **payload)
        if transcript_sink is not None and transcript is not None:
            transcript_sink(transcript)
        per_task.append((task.task_id, score))

    partial = bool(errors)
    aggregate = (sum(s for _, s in per_task) / len(per_task)) if per_task else 0.0
    report = EvaluationReport(candidate_id=candidate.id,
                              per_task=tuple(per_task), aggregate=aggregate,
                              tasks_evaluated=len(per_task),
                              sample_fraction=sample_fraction, partial=partial)
    if errors:
        raise EvalError(
            f"{len(errors)} task(s) failed during evaluation of {candidate.id}: "
            f"{errors[0][1]}", report=report, task_errors=errors)
    candidate.score = aggregate
    sink.emit("CandidateScored", candidate_id=candidate.id, score=aggregate,
              tasks_evaluated=report.tasks_evaluated,
              sample_fraction=sample_fraction)
    return report


def evaluate_config(config: MasConfig, tasks: Sequence[Task],
                    evaluator: EvaluatorSpec, backend: Backend, seed, *,
                    jobs: int = 1, label: str = "inference",
                    templates: Optional[dict[str, Template]] = None,
                    sink: EventSink = NULL_SINK,
                    transcript_sink=None) -> EvaluationReport:
    """Evaluate a frozen config (no splice, no optimization calls)."""
    if not tasks:
        raise ValueError("tasks must be nonempty")
    violations = domain.validate_mas(config)
    if violations:
        raise OmacError("invalid config: " + "; ".join(violations))

    def one(task: Task) -> tuple[float, ListSink, Optional[domain.Transcript]]:
        buffer = ListSink()
        transcript = collab.run_collaboration(config, task, backend,
                                              derive_seed(seed, task.task_id),
                                              templates=templates, sink=buffer)
        score, note = _score_answer(transcript.final_answer, task, evaluator)
        if note:
            buffer.emit("FallbackTriggered", where="evaluate_task",
                        task_id=task.task_id, reason=note)
        return score, buffer, transcript

    if jobs <= 1:
        results = [one(task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = [f.result() for f in [pool.submit(one, t) for t in tasks]]

    per_task = []
    for task, (score, buffer, transcript) in zip(tasks, results):
        for kind, payload in buffer.items:
            sink.emit(kind, **payload)
        if transcript_sink is not None and transcript is not None:
            transcript_sink(transcript)
        per_task.append((task.task_id, score))
    aggregate = sum(s for _, s in per_task) / len(per_task)
    report = EvaluationReport(candidate_id=label, per_task=tuple(per_task),
                              aggregate=aggregate, tasks_evaluated=len(per_task),
                              sample_fraction=1.0)
    sink.emit("CandidateScored", candidate_id=label, score=aggregate,
              tasks_evaluated=len(per_task), sample_fraction=1.0)
    return report
