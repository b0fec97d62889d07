"""Multi-step collaboration engine.

Runs a MasConfig over one task: optional pre-collaboration team selection,
per-step participation (static eligibility or a dynamic controller at its
configured step), input routing (fully connected or per-recipient
controller), seeded message shuffling, early stopping on stable extracted
answers, and final-answer aggregation.

Controllers answer listwise with a 1-based index list; malformed output is
retried once and then falls back (full roster / all eligible / all sources)
so a bad controller can never abort a task.
"""

from __future__ import annotations

import random
import re
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from . import domain
from .backend import Backend, CompletionRequest
from .domain import (AgentSpec, BoxedExtract, MajorityVote, MasConfig, Message,
                     StepRecord, Task, TopKCode, Transcript, TASK_SOURCE)
from .errors import OmacError
from .ledger import NULL_SINK, EventSink
from .prompts import Template, load_templates

Bounds = tuple[int, int]

_INDEX_LIST = re.compile(r"\[([^\[\]]+)\]")
_INT = re.compile(r"[+-]?\d+")
_CHOICE = re.compile(r"\(([ABCD])")
_CODE_BLOCK = re.compile(r"```(?:[\w+-]*)\n(.*?)```", re.DOTALL)


def parse_index_list(text: str, n_candidates: int,
                     bounds: Bounds) -> Optional[list[int]]:
    """Last bracketed comma-separated integer list in text, deduped in order.

    Returns None (a value, not an exception) if no such list exists, any
    index falls outside 1..n_candidates, or the deduped size is outside
    bounds.
    """
    found: Optional[list[int]] = None
    for match in _INDEX_LIST.finditer(text):
        tokens = [t.strip() for t in match.group(1).split(",")]
        if all(_INT.fullmatch(t) for t in tokens):
            found = [int(t) for t in tokens]
    if found is None:
        return None
    deduped: list[int] = []
    for idx in found:
        if idx not in deduped:
            deduped.append(idx)
    if any(not 1 <= idx <= n_candidates for idx in deduped):
        return None
    lo, hi = bounds
    if not lo <= len(deduped) <= hi:
        return None
    return deduped


def extract_choice(text: str) -> Optional[str]:
    """Letter of the final "(X" / "(X)" occurrence, X in A..D."""
    matches = _CHOICE.findall(text)
    return matches[-1] if matches else None


def extract_boxed(text: str) -> Optional[str]:
    r"""Content of the last \boxed{...}, with balanced-brace matching."""
    start = text.rfind("\\boxed{")
    if start < 0:
        return None
    depth = 0
    for i in range(start + len("\\boxed"), len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return text[start + len("\\boxed{"): i]
    return None


def extract_code(text: str) -> Optional[str]:
    """Last fenced code block, or None."""
    matches = _CODE_BLOCK.findall(text)
    return matches[-1] if matches else None


def _extractor_for(aggregation: domain.Aggregation):
    if isinstance(aggregation, MajorityVote):
        return extract_choice
    if isinstance(aggregation, BoxedExtract):
        return extract_boxed
    return extract_code


def majority_vote(answers: Sequence[Optional[str]]) -> str:
    """Most frequent non-none answer; ties break alphabetically."""
    votes = [a for a in answers if a is not None]
    if not votes:
        raise OmacError("no votes")
    counts = Counter(votes)
    return min(counts, key=lambda c: (-counts[c], c))


@dataclass(frozen=True)
class CodeCompletion:
    role: str
    code: str
    pass_count: int


def select_final_code(completions: Sequence[CodeCompletion], k: int,
                      rng: random.Random) -> str:
    """Uniform seeded draw among the top-k completions by pass count
    (ties keep completion order)."""
    if not completions:
        raise OmacError("no completions")
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(range(len(completions)),
                    key=lambda i: (-completions[i].pass_count, i))
    top = [completions[i] for i in ranked[: min(k, len(completions))]]
    return rng.choice(top).code


def shuffle_messages(messages: Sequence[Message],
                     rng: random.Random) -> list[Message]:
    """Permutation of messages drawn from the run's seeded rng stream."""
    out = list(messages)
    rng.shuffle(out)
    return out


def early_stop_check(current: StepRecord, previous: StepRecord,
                     aggregation: domain.Aggregation) -> bool:
    """True iff both steps extract the same answer multiset with no
    extraction failures in the current step."""
    extractor = _extractor_for(aggregation)
    cur = [extractor(r.output) for r in current.agent_records]
    prev = [extractor(r.output) for r in previous.agent_records]
    if any(a is None for a in cur) or any(a is None for a in prev):
        return False
    return Counter(cur) == Counter(prev)


@dataclass(frozen=True)
class RoutingDecision:
    """Per-recipient source roles whose previous-step outputs are delivered."""

    step_index: int
    sources: dict[str, tuple[str, ...]]

    def sources_for(self, recipient: str) -> tuple[str, ...]:
        return self.sources.get(recipient, ())


def _numbered(lines: Sequence[str]) -> str:
    return "\n".join(f"{i}. {line}" for i, line in enumerate(lines, 1))


def _controller_request(content: str, config: MasConfig, tag: str) -> CompletionRequest:
    return CompletionRequest(messages=(("user", content),),
                             temperature=config.temperature,
                             max_tokens=config.max_tokens, tag=tag)


def _ask_indices(backend: Backend, config: MasConfig, content: str, tag: str,
                 n: int, bounds: Bounds, sink: EventSink,
                 where: str) -> Optional[list[int]]:
    """One controller call plus one retry; None means caller falls back."""
    for attempt in range(2):
        completion = backend.complete(_controller_request(content, config, tag))
        sink.emit("BackendCall", tag=tag, backend_id=completion.backend_id,
                  chars=len(completion.text))
        parsed = parse_index_list(completion.text, n, bounds)
        if parsed is not None:
            return parsed
    sink.emit("FallbackTriggered", where=where, tag=tag,
              reason="controller output unparseable after retry")
    return None


def select_team(roster: Sequence[AgentSpec], team_selector: domain.ControllerSpec,
                task: Task, backend: Backend, *, config: MasConfig,
                templates: Optional[dict[str, Template]] = None,
                sink: EventSink = NULL_SINK) -> list[AgentSpec]:
    """Listwise pre-collaboration team selection; falls back to the full
    roster on unparseable controller output."""
    from .prompts import render
    templates = templates or load_templates()
    context = render(templates["controller.str1.context"], {
        "task context": task.query,
        "candidate agent functionalities": "\n" + _numbered(
            [f"{a.role_name}: {a.instruction_prompt}" for a in roster]),
    })
    content = context + "\n\n" + team_selector.instruction_prompt
    tag = f"controller:str1:task{task.task_id}"
    parsed = _ask_indices(backend, config, content, tag, len(roster),
                          team_selector.selection_bounds, sink, "select_team")
    if parsed is None:
        return list(roster)
    return [roster[i - 1] for i in sorted(parsed)]


def select_participants(step: domain.StepSpec, candidates: Sequence[str],
                        dynamic_selector: domain.DynamicSelector,
                        previous: Optional[StepRecord], task: Task,
                        backend: Backend, *, config: MasConfig,
                        templates: Optional[dict[str, Template]] = None,
                        sink: EventSink = NULL_SINK) -> list[str]:
    """Listwise per-step participation selection at the selector's configured
    step; other steps keep eligibility unchanged."""
    from .prompts import render
    if step.step_index != dynamic_selector.step_index:
        return list(candidates)
    templates = templates or load_templates()
    solutions = []
    for role in candidates:
        output = previous.output_of(role) if previous is not None else None
        solutions.append(f"Agent solution ```{output}```" if output is not None
                         else "Agent solution ```(no prior solution)```")
    context = render(templates["controller.str2.context"], {
        "task context": task.query,
        "previous agent solutions": "\n" + _numbered(solutions),
    })
    content = context + "\n\n" + dynamic_selector.controller.instruction_prompt
    tag = f"controller:str2:task{task.task_id}:step{step.step_index}"
    parsed = _ask_indices(backend, config, content, tag, len(candidates),
                          dynamic_selector.controller.selection_bounds, sink,
                          "select_participants")
    if parsed is None:
        return list(candidates)
    return [candidates[i - 1] for i in sorted(parsed)]


def route_inputs(routing: Optional[domain.ControllerSpec],
                 participants: Sequence[str], previous: Optional[StepRecord],
                 task: Task, backend: Backend, *, config: MasConfig,
                 step_index: int,
                 templates: Optional[dict[str, Template]] = None,
                 sink: EventSink = NULL_SINK) -> RoutingDecision:
    """Decide which previous-step outputs each participant receives.

    Step 0 routes only the task query (empty decision). Fully connected
    delivers every previous output to every participant; a routing controller
    is consulted once per recipient, falling back to all sources for that
    recipient.
    """
    from .prompts import render
    if previous is None or step_index == 0:
        return RoutingDecision(step_index=step_index, sources={})
    source_roles = list(previous.participants)
    if routing is None:
        return RoutingDecision(step_index=step_index,
                               sources={p: tuple(source_roles) for p in participants})
    templates = templates or load_templates()
    decision: dict[str, tuple[str, ...]] = {}
    for recipient in participants:
        agent = config.agent(recipient)
        context = render(templates["controller.str3.context"], {
            "current agent functionality": f"{agent.role_name}: {agent.instruction_prompt}",
            "candidate agent functionalities": "\n" + _numbered(
                [f"{r}: {config.agent(r).instruction_prompt}" for r in source_roles]),
        })
        content = context + "\n\n" + routing.instruction_prompt
        tag = f"controller:str3:task{task.task_id}:step{step_index}:{recipient}"
        parsed = _ask_indices(backend, config, content, tag, len(source_roles),
                              routing.selection_bounds, sink, "route_inputs")
        if parsed is None:
            decision[recipient] = tuple(source_roles)
        else:
            decision[recipient] = tuple(source_roles[i - 1] for i in sorted(parsed))
    return RoutingDecision(step_index=step_index, sources=decision)


def _agent_request(agent: AgentSpec, input_messages: Sequence[Message],
                   config: MasConfig, task: Task, step_index: int) -> CompletionRequest:
    solutions = [m for m in input_messages if m.source != TASK_SOURCE]
    content = f"Here is the question:\n{task.query}"
    if solutions:
        content += "\n\nThese are the solutions to the problem from other agents:"
        for i, msg in enumerate(solutions, 1):
            content += f"\n\nAgent solution {i}: ```{msg.text}```"
        content += ("\n\nUsing the solutions from other agents as additional "
                    "information, give your own updated answer.")
    messages: list[tuple[str, str]] = []
    for shot_in, shot_out in agent.few_shot_examples:
        messages.append(("user", shot_in))
        messages.append(("assistant", shot_out))
    messages.append(("user", content))
    tag = f"agent:{agent.role_name}:step{step_index}:task{task.task_id}"
    return CompletionRequest(messages=tuple(messages),
                             temperature=config.temperature,
                             max_tokens=config.max_tokens,
                             system_prompt=agent.instruction_prompt, tag=tag)


def aggregate_final_answer(last: StepRecord, aggregation: domain.Aggregation,
                           rng: random.Random) -> Optional[str]:
    outputs = [r.output for r in last.agent_records]
    if isinstance(aggregation, (MajorityVote, BoxedExtract)):
        extractor = _extractor_for(aggregation)
        answers = [extractor(o) for o in outputs]
        if all(a is None for a in answers):
            return None
        return majority_vote(answers)
    assert isinstance(aggregation, TopKCode)
    completions = [CodeCompletion(role=r.role,
                                  code=extract_code(r.output) or r.output,
                                  pass_count=0)
                   for r in last.agent_records]
    if not completions:
        return None
    # Pass counts are the scoring evaluator's job (external command); inside
    # the engine every completion ranks equal.
    return select_final_code(completions, aggregation.k, rng)


def run_collaboration(config: MasConfig, task: Task, backend: Backend,
                      rng_seed, *, templates: Optional[dict[str, Template]] = None,
                      sink: EventSink = NULL_SINK) -> Transcript:
    """Execute the full multi-step collaboration for one task.

    Deterministic given the config, task, backend behavior and rng_seed:
    shuffles and the final code draw come from one seeded stream.
    """
    violations = domain.validate_mas(config)
    if violations:
        raise OmacError("invalid config: " + "; ".join(violations))
    templates = templates or load_templates()
    rng = random.Random(rng_seed)

    team = list(config.roster)
    if config.team_selector is not None:
        team = select_team(config.roster, config.team_selector, task, backend,
                           config=config, templates=templates, sink=sink)
    team_names = {a.role_name for a in team}

    steps: list[StepRecord] = []
    previous: Optional[StepRecord] = None
    stopped_early = False

    for step in config.schedule:
        eligible_set = set(step.eligible_roles) & team_names
        eligible = [a.role_name for a in config.roster if a.role_name in eligible_set]
        participants = eligible
        sel = config.dynamic_selector
        if sel is not None and step.step_index == sel.step_index and eligible:
            chosen = select_participants(step, eligible, sel, previous, task,
                                         backend, config=config,
                                         templates=templates, sink=sink)
            participants = [r for r in eligible if r in set(chosen)]
        if not participants:
            continue

        decision = route_inputs(config.routing, participants, previous, task,
                                backend, config=config,
                                step_index=step.step_index,
                                templates=templates, sink=sink)
        records = []
        for role in participants:
            routed = [Message(source=src, text=previous.output_of(src) or "")
                      for src in decision.sources_for(role)] if previous else []
            inputs = [Message(TASK_SOURCE, task.query)] + shuffle_messages(routed, rng)
            request = _agent_request(config.agent(role), inputs, config, task,
                                     step.step_index)
            completion = backend.complete(request)
            sink.emit("BackendCall", tag=request.tag,
                      backend_id=completion.backend_id,
                      chars=len(completion.text))
            records.append(domain.AgentRecord(role=role,
                                              input_messages=tuple(inputs),
                                              output=completion.text))
        record = StepRecord(step_index=step.step_index,
                            participants=tuple(participants),
                            agent_records=tuple(records))
        steps.append(record)
        sink.emit("StepExecuted", task_id=task.task_id, step_index=step.step_index,
                  participants=list(participants),
                  routing={r: list(s) for r, s in decision.sources.items()})

        if previous is not None and early_stop_check(record, previous,
                                                     config.aggregation):
            stopped_early = True
            sink.emit("EarlyStopped", task_id=task.task_id,
                      step_index=step.step_index)
            break
        previous = record

    final_answer = None
    if steps:
        try:
            final_answer = aggregate_final_answer(steps[-1], config.aggregation, rng)
        except OmacError:
            final_answer = None
    return Transcript(task_id=task.task_id, steps=tuple(steps),
                      final_answer=final_answer, stopped_early=stopped_early)
