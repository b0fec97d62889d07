"""Optimization loop: semantic initialization, threshold sampling,
contrastive refinement, single- and multi-dimension drivers.

The single-dimension loop generates an initial collection of z candidates
with one LLM actor, scores each by splicing it into the MAS and evaluating
on the training tasks, then repeats w times: sample a positive-negative pair
from the top/bottom score groups, ask a second actor to reason about the gap
and emit a refined child, and score the child into the collection. The
multi-dimension driver round-robins that loop across dimensions, keeping
every other dimension's winner spliced and frozen.

A failed refinement iteration is ledgered and skipped; the loop never
retries the sample, so iteration count bounds the backend-call budget.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from . import evaluation, ledger
from .backend import Backend, CompletionRequest
from .domain import (AgentSpec, Candidate, ComparatorProvenance, ControllerSpec,
                     Dimension, DimensionKind, InitializerProvenance, MasConfig,
                     rank_key, splice)
from .errors import BackendError, EvalError, OmacError, OptimizeError
from .ledger import NULL_SINK, EventSink
from .prompts import Template, load_templates, render
from .seeds import derive_seed


@dataclass(frozen=True)
class OptParams:
    """Optimization hyperparameters; defaults follow the published protocol
    (collection size 3, 3 refinement iterations, thresholds 0.5/0.5)."""

    z: int = 3
    w: int = 3
    l: float = 0.5
    h: float = 0.5
    seed: int | str = 0
    sample_fraction: float = 1.0
    ablation_no_comparator: bool = False

    def __post_init__(self):
        if self.z < 1:
            raise ValueError("z must be >= 1")
        if self.w < 0:
            raise ValueError("w must be >= 0")
        if not 0 < self.l <= 1:
            raise ValueError("l must be in (0, 1]")
        if not 0 < self.h <= 1:
            raise ValueError("h must be in (0, 1]")
        if not 0 < self.sample_fraction <= 1:
            raise ValueError("sample_fraction must be in (0, 1]")


@dataclass(frozen=True)
class PosNegPair:
    positive: Candidate
    negative: Candidate

    def __post_init__(self):
        if self.positive.id == self.negative.id:
            raise ValueError("pair members must be distinct")
        if self.positive.score is None or self.negative.score is None:
            raise ValueError("pair members must be scored")
        if self.positive.score < self.negative.score:
            raise ValueError("positive member must score >= negative member")


def group_size(n: int, threshold: float) -> int:
    """max(1, floor(n * threshold)); the epsilon keeps decimal thresholds
    exact under binary floats (10 * 0.3 must floor to 3, not 2)."""
    return max(1, math.floor(n * threshold + 1e-9))


def threshold_groups(collection: Sequence[Candidate], l: float,
                     h: float) -> tuple[list[Candidate], list[Candidate]]:
    """(positive, negative) groups: top max(1,floor(n*h)) and bottom
    max(1,floor(n*l)) after sorting by score desc, created_seq asc."""
    if any(c.score is None for c in collection):
        raise OptimizeError("collection contains unscored candidates")
    ordered = sorted(collection, key=rank_key)
    n = len(ordered)
    return ordered[: group_size(n, h)], ordered[n - group_size(n, l):]


def sample_pair(collection: Sequence[Candidate], l: float, h: float,
                rng: random.Random) -> PosNegPair:
    """Draw one candidate from each threshold group, uniformly; redraw on an
    invalid draw (same candidate, or inverted scores when groups overlap) up
    to group-size attempts."""
    if len(collection) < 2:
        raise OptimizeError("collection too small")
    positive_group, negative_group = threshold_groups(collection, l, h)
    if (len(positive_group) == 1 and len(negative_group) == 1
            and positive_group[0].id == negative_group[0].id):
        raise OptimizeError("degenerate groups")
    attempts = max(len(positive_group), len(negative_group))
    for _ in range(attempts):
        pos = rng.choice(positive_group)
        neg = rng.choice(negative_group)
        if pos.id != neg.id and pos.score >= neg.score:
            return PosNegPair(positive=pos, negative=neg)
    raise OptimizeError("degenerate groups")


# --- actor protocols ---------------------------------------------------------

def _actor_request(messages: list[tuple[str, str]], config: MasConfig,
                   tag: str) -> CompletionRequest:
    return CompletionRequest(messages=tuple(messages),
                             temperature=config.temperature,
                             max_tokens=config.max_tokens, tag=tag)


def _initializer_vars(dimension: Dimension, config: MasConfig, z: int,
                      templates: dict[str, Template]) -> dict[str, str]:
    kind = dimension.kind
    if kind is DimensionKind.FUN1:
        agent = config.agent(dimension.target_role)
        return {
            "initialization number": str(z),
            "optimized agent role": agent.role_name,
            "basic description of the optimized agent": agent.basic_description(),
            "one-shot example": agent.instruction_prompt,
        }
    if kind is DimensionKind.FUN2:
        return {
            "initialization number": str(z),
            "roles of existing agents": ", ".join(config.role_names()),
            "one-shot example": templates["oneshot.fun2"].body,
        }
    return {
        "initialization number": str(z),
        "one-shot example": templates[f"controller.{kind.value}.default"].body,
    }


def _wrap_payload(dimension: Dimension, config: MasConfig, text: str,
                  role_name: Optional[str] = None):
    kind = dimension.kind
    if kind is DimensionKind.FUN1:
        original = config.agent(dimension.target_role)
        return AgentSpec(role_name=original.role_name, instruction_prompt=text,
                         few_shot_examples=original.few_shot_examples)
    if kind is DimensionKind.FUN2:
        return AgentSpec(role_name=role_name or "New Agent",
                         instruction_prompt=text)
    return ControllerSpec(dimension_kind=kind, instruction_prompt=text)


def _flag_description_mismatch(dimension: Dimension, config: MasConfig,
                               candidate: Candidate, sink: EventSink,
                               where: str) -> None:
    if dimension.kind is not DimensionKind.FUN1:
        return
    basic = config.agent(dimension.target_role).basic_description()
    if not candidate.payload.instruction_prompt.startswith(basic):
        sink.emit("FallbackTriggered", where=where, candidate_id=candidate.id,
                  reason="prompt does not begin with the agent's basic description")


def semantic_initialize(dimension: Dimension, base_config: MasConfig,
                        params: OptParams, backend: Backend, *,
                        templates: Optional[dict[str, Template]] = None,
                        sink: EventSink = NULL_SINK,
                        seq_counter: Optional[Iterator[int]] = None,
                        existing: Sequence[Candidate] = ()) -> list[Candidate]:
    """Generate the initial candidate collection in one conversation.

    The instruction asks the actor for z items up front and retrieves them
    one sequence number per turn (the new-agent dimension retrieves the role
    and the prompt of each item in separate turns). ``existing`` candidates
    from an interrupted run are kept and the conversation continues after
    them.
    """
    templates = templates or load_templates()
    seq_counter = seq_counter if seq_counter is not None else itertools.count()
    token = dimension.token()
    template = templates[f"initializer.{dimension.kind.value}"]
    vars = _initializer_vars(dimension, base_config, params.z, templates)
    messages: list[tuple[str, str]] = [("user", render(template, vars))]

    candidates = list(existing)
    for prior in candidates:
        index = prior.provenance.index
        if dimension.kind is DimensionKind.FUN2:
            messages.append(("user", f"role {index}"))
            messages.append(("assistant", prior.payload.role_name))
            messages.append(("user", f"prompt {index}"))
        else:
            messages.append(("user", str(index)))
        messages.append(("assistant", prior.payload.instruction_prompt))

    def ask(turn_text: str, tag: str) -> str:
        messages.append(("user", turn_text))
        completion = backend.complete(_actor_request(messages, base_config, tag))
        sink.emit("ActorCall", actor="initializer", dimension=token, tag=tag,
                  chars=len(completion.text))
        text = completion.text.strip()
        if not text:
            raise OptimizeError("empty initialization")
        messages.append(("assistant", text))
        return text

    for k in range(len(candidates) + 1, params.z + 1):
        if dimension.kind is DimensionKind.FUN2:
            role_name = ask(f"role {k}", f"initializer:{token}:role{k}")
            prompt = ask(f"prompt {k}", f"initializer:{token}:prompt{k}")
        else:
            role_name = None
            prompt = ask(str(k), f"initializer:{token}:turn{k}")
        seq = next(seq_counter)
        candidate = Candidate(id=f"{token}#{seq}", dimension=dimension,
                              payload=_wrap_payload(dimension, base_config,
                                                    prompt, role_name),
                              provenance=InitializerProvenance(index=k),
                              created_seq=seq)
        sink.emit("CandidateCreated", **ledger.candidate_to_dict(candidate))
        _flag_description_mismatch(dimension, base_config, candidate, sink,
                                   "semantic_initialize")
        candidates.append(candidate)
    return candidates


def _pair_text(pair: PosNegPair, dimension: Dimension) -> str:
    def describe(c: Candidate) -> str:
        if dimension.kind is DimensionKind.FUN2:
            return f"Role: {c.payload.role_name}\nPrompt: {c.payload.instruction_prompt}"
        return c.payload.instruction_prompt
    return (f"\nPositive parent prompt:\n{describe(pair.positive)}\n\n"
            f"Negative parent prompt:\n{describe(pair.negative)}")


def contrastive_refine(dimension: Dimension, pair: PosNegPair,
                       base_config: MasConfig, backend: Backend, *,
                       iteration: int,
                       templates: Optional[dict[str, Template]] = None,
                       sink: EventSink = NULL_SINK,
                       seq_counter: Optional[Iterator[int]] = None) -> Candidate:
    """One contrastive-reasoning call producing a refined child candidate."""
    templates = templates or load_templates()
    seq_counter = seq_counter if seq_counter is not None else itertools.count()
    token = dimension.token()
    template = templates[f"comparator.{dimension.kind.value}"]
    vars = {"positive/negative prompts": _pair_text(pair, dimension)}
    if dimension.kind is DimensionKind.FUN1:
        agent = base_config.agent(dimension.target_role)
        vars["optimized agent role"] = agent.role_name
        vars["basic description of the optimized agent"] = agent.basic_description()
    messages: list[tuple[str, str]] = [("user", render(template, vars))]

    def ask(turn_text: Optional[str], tag: str) -> str:
        if turn_text is not None:
            messages.append(("user", turn_text))
        completion = backend.complete(_actor_request(messages, base_config, tag))
        sink.emit("ActorCall", actor="comparator", dimension=token,
                  iteration=iteration, tag=tag, chars=len(completion.text))
        text = completion.text.strip()
        if not text:
            raise OptimizeError("empty refinement")
        messages.append(("assistant", text))
        return text

    if dimension.kind is DimensionKind.FUN2:
        role_name = ask("role", f"comparator:{token}:iter{iteration}:role")
        prompt = ask("prompt", f"comparator:{token}:iter{iteration}:prompt")
    else:
        role_name = None
        prompt = ask(None, f"comparator:{token}:iter{iteration}")

    seq = next(seq_counter)
    candidate = Candidate(id=f"{token}#{seq}", dimension=dimension,
                          payload=_wrap_payload(dimension, base_config,
                                                prompt, role_name),
                          provenance=ComparatorProvenance(
                              iteration=iteration,
                              positive_parent_id=pair.positive.id,
                              negative_parent_id=pair.negative.id),
                          created_seq=seq)
    sink.emit("CandidateCreated", **ledger.candidate_to_dict(candidate))
    _flag_description_mismatch(dimension, base_config, candidate, sink,
                               "contrastive_refine")
    return candidate


# --- loop drivers ------------------------------------------------------------

@dataclass
class ResumeState:
    """Work already done for one in-progress dimension run, reconstructed
    from the ledger."""

    initializer_candidates: list[Candidate] = field(default_factory=list)
    refined_candidates: list[Candidate] = field(default_factory=list)
    iterations_done: int = 0


@dataclass
class OptimizeOutcome:
    best: Candidate
    collection: list[Candidate]
    trajectory: list[float]


def _best(collection: Sequence[Candidate]) -> Candidate:
    return min(collection, key=rank_key)


def optimize_dimension(dimension: Dimension, base_config: MasConfig,
                       tasks, evaluator, params: OptParams, backend: Backend, *,
                       templates: Optional[dict[str, Template]] = None,
                       sink: EventSink = NULL_SINK,
                       seq_counter: Optional[Iterator[int]] = None,
                       outer_iteration: int = 0, jobs: int = 1,
                       resume_state: Optional[ResumeState] = None,
                       installed: Optional[dict[str, Optional[str]]] = None,
                       transcript_sink=None) -> OptimizeOutcome:
    """Run the full single-dimension loop and return the winning candidate.

    With ablation_no_comparator (or w = 0) the loop stops after scoring the
    initial collection and returns its best.
    """
    if not tasks:
        raise ValueError("tasks must be nonempty")
    templates = templates or load_templates()
    seq_counter = seq_counter if seq_counter is not None else itertools.count()
    token = dimension.token()
    resume_state = resume_state or ResumeState()

    candidates = semantic_initialize(
        dimension, base_config, params, backend, templates=templates,
        sink=sink, seq_counter=seq_counter,
        existing=resume_state.initializer_candidates)
    candidates.extend(resume_state.refined_candidates)

    for candidate in candidates:
        if candidate.score is None:
            evaluation.evaluate_candidate(
                base_config, candidate, tasks, evaluator, backend, params.seed,
                sample_fraction=params.sample_fraction, jobs=jobs,
                templates=templates, sink=sink, transcript_sink=transcript_sink)

    trajectory = [_best(candidates).score]
    iterations_done = resume_state.iterations_done
    rng = random.Random(derive_seed(params.seed, "pairs", token,
                                    outer_iteration, iterations_done))

    if not params.ablation_no_comparator:
        for iteration in range(iterations_done + 1, params.w + 1):
            try:
                pair = sample_pair(candidates, params.l, params.h, rng)
                sink.emit("PairSampled", dimension=token, iteration=iteration,
                          positive_id=pair.positive.id,
                          negative_id=pair.negative.id)
                child = contrastive_refine(dimension, pair, base_config,
                                           backend, iteration=iteration,
                                           templates=templates, sink=sink,
                                           seq_counter=seq_counter)
                evaluation.evaluate_candidate(
                    base_config, child, tasks, evaluator, backend, params.seed,
                    sample_fraction=params.sample_fraction, jobs=jobs,
                    templates=templates, sink=sink,
                    transcript_sink=transcript_sink)
                candidates.append(child)
            except (OptimizeError, BackendError, EvalError) as exc:
                sink.emit("FallbackTriggered", where="optimize_dimension",
                          dimension=token, iteration=iteration,
                          reason=f"refinement iteration failed: {exc}")
            trajectory.append(_best(candidates).score)

    best = _best(candidates)
    sink.emit("DimensionCompleted", dimension=token,
              outer_iteration=outer_iteration, best_id=best.id,
              best_score=best.score, trajectory=trajectory,
              collection_size=len(candidates), installed=installed or {})
    return OptimizeOutcome(best=best, collection=candidates,
                           trajectory=trajectory)


def compose_config(base_config: MasConfig, dimensions: Sequence[Dimension],
                   winners: dict[str, Candidate],
                   current: Optional[Dimension] = None) -> MasConfig:
    """Base config with every dimension's current winner spliced in.

    When the dimension being optimized constructs a new agent, its own
    winner is left out so the trial candidate is the only appended agent.
    """
    config = base_config
    for dim in dimensions:
        winner = winners.get(dim.token())
        if winner is None:
            continue
        if (current is not None and dim.token() == current.token()
                and dim.kind is DimensionKind.FUN2):
            continue
        config = splice(config, winner)
    return config


@dataclass
class MultiOutcome:
    final_config: MasConfig
    winners: dict[str, Candidate]
    final_best_score: float


@dataclass
class MultiResume:
    """Completed inner runs plus the in-progress one, from the ledger."""

    winners: dict[str, Candidate] = field(default_factory=dict)
    completed_inner_runs: int = 0
    current: ResumeState = field(default_factory=ResumeState)
    seq_next: int = 0


def optimize_multi(dimensions: Sequence[Dimension], base_config: MasConfig,
                   tasks, evaluator, params: OptParams, outer_iterations: int,
                   backend: Backend, *,
                   templates: Optional[dict[str, Template]] = None,
                   sink: EventSink = NULL_SINK, jobs: int = 1,
                   resume: Optional[MultiResume] = None,
                   transcript_sink=None) -> MultiOutcome:
    """Iteratively optimize each dimension in order, keeping the others'
    winners fixed, for outer_iterations rounds."""
    if not dimensions:
        raise ValueError("dimensions must be nonempty")
    tokens = [d.token() for d in dimensions]
    if len(set(tokens)) != len(tokens):
        raise ValueError("dimensions must be mutually distinct")
    if outer_iterations < 1:
        raise ValueError("outer_iterations must be >= 1")
    templates = templates or load_templates()
    resume = resume or MultiResume()
    seq_counter = itertools.count(resume.seq_next)
    winners = dict(resume.winners)
    final_best_score = max((c.score for c in winners.values()
                            if c.score is not None), default=0.0)

    total_inner = outer_iterations * len(dimensions)
    for inner in range(resume.completed_inner_runs, total_inner):
        outer = inner // len(dimensions) + 1
        dimension = dimensions[inner % len(dimensions)]
        config = compose_config(base_config, dimensions, winners,
                                current=dimension)
        installed = {t: (winners[t].id if t in winners else None)
                     for t in tokens if t != dimension.token()}
        resume_state = resume.current if inner == resume.completed_inner_runs else None
        outcome = optimize_dimension(
            dimension, config, tasks, evaluator, params, backend,
            templates=templates, sink=sink, seq_counter=seq_counter,
            outer_iteration=outer, jobs=jobs, resume_state=resume_state,
            installed=installed, transcript_sink=transcript_sink)
        winners[dimension.token()] = outcome.best
        final_best_score = outcome.best.score

    final_config = compose_config(base_config, dimensions, winners)
    return MultiOutcome(final_config=final_config, winners=winners,
                        final_best_score=final_best_score)


def select_top_dimensions(individual_results: Sequence[tuple[Dimension, float]],
                          baseline_score: float, k: int) -> list[Dimension]:
    """Top-k dimensions by training-set gain over the baseline; ties keep
    the enumeration order of the input."""
    if k > len(individual_results):
        raise ValueError("k exceeds the number of results")
    indexed = list(enumerate(individual_results))
    indexed.sort(key=lambda item: (-(item[1][1] - baseline_score), item[0]))
    return [dim for _, (dim, _) in indexed[:k]]


def infer(config: MasConfig, test_tasks, evaluator, backend: Backend, seed, *,
          jobs: int = 1, templates: Optional[dict[str, Template]] = None,
          sink: EventSink = NULL_SINK,
          transcript_sink=None) -> evaluation.EvaluationReport:
    """Evaluate a frozen configuration on the test tasks; no optimization
    actors are invoked (the ledger records zero ActorCall events)."""
    return evaluation.evaluate_config(config, test_tasks, evaluator, backend,
                                      seed, jobs=jobs, label="inference",
                                      templates=templates, sink=sink,
                                      transcript_sink=transcript_sink)


# --- ledger reconstruction for --resume ---------------------------------------

def resume_from_events(events: Sequence[ledger.LedgerEvent]) -> MultiResume:
    """Rebuild optimizer state from an Error-terminated ledger: winners of
    completed inner runs, the in-progress run's scored candidates, and how
    many refinement iterations already happened."""
    created: dict[str, dict] = {}
    scores: dict[str, float] = {}
    winners: dict[str, Candidate] = {}
    completed = 0
    last_completed_seq = -1
    for event in events:
        if event.kind == "CandidateCreated":
            created[event.payload["candidate_id"]] = event.payload
        elif event.kind == "CandidateScored":
            scores[event.payload["candidate_id"]] = event.payload["score"]
        elif event.kind == "DimensionCompleted":
            completed += 1
            last_completed_seq = event.seq
            best_id = event.payload["best_id"]
            if best_id in created:
                winners[event.payload["dimension"]] = ledger.candidate_from_dict(
                    created[best_id], score=scores.get(best_id))

    current = ResumeState()
    iterations_done = 0
    for event in events:
        if event.seq <= last_completed_seq:
            continue
        if event.kind == "CandidateCreated":
            payload = event.payload
            candidate = ledger.candidate_from_dict(
                payload, score=scores.get(payload["candidate_id"]))
            if isinstance(candidate.provenance, ComparatorProvenance):
                iterations_done = max(iterations_done,
                                      candidate.provenance.iteration)
                # an unscored child is re-evaluated on resume, not re-generated
                current.refined_candidates.append(candidate)
            else:
                current.initializer_candidates.append(candidate)
        elif (event.kind == "FallbackTriggered"
              and event.payload.get("where") == "optimize_dimension"):
            iterations_done = max(iterations_done,
                                  event.payload.get("iteration", 0))
    current.iterations_done = iterations_done
    seq_next = max((c["created_seq"] for c in created.values()), default=-1) + 1
    return MultiResume(winners=winners, completed_inner_runs=completed,
                       current=current, seq_next=seq_next)
