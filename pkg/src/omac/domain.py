"""Core data model: agents, controllers, candidates, MAS configurations, tasks.

All values are plain frozen dataclasses (immutable after construction, safe to
share across threads) except Candidate, whose ``score`` field is written once
by the evaluator. Cross-object invariants (role references, selector indices)
are checked by validate_mas; per-object invariants raise ValueError at
construction.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .errors import OmacError


class DimensionKind(str, Enum):
    """The five optimizable aspects of a multi-agent system.

    FUN1 refines an existing agent's prompt, FUN2 constructs a new agent,
    STR1 selects the candidate team before collaboration, STR2 selects
    participants per step, STR3 routes inter-agent communication.
    """

    FUN1 = "fun1"
    FUN2 = "fun2"
    STR1 = "str1"
    STR2 = "str2"
    STR3 = "str3"


FUNCTIONAL_KINDS = (DimensionKind.FUN1, DimensionKind.FUN2)
STRUCTURAL_KINDS = (DimensionKind.STR1, DimensionKind.STR2, DimensionKind.STR3)

# Default controller selection bounds per structural kind.
DEFAULT_BOUNDS: dict[DimensionKind, tuple[int, int]] = {
    DimensionKind.STR1: (4, 7),
    DimensionKind.STR2: (2, 7),
    DimensionKind.STR3: (4, 7),
}


@dataclass(frozen=True)
class Dimension:
    """One optimization dimension; FUN1 additionally names its target role."""

    kind: DimensionKind
    target_role: Optional[str] = None

    def __post_init__(self):
        if self.kind is DimensionKind.FUN1:
            if not self.target_role:
                raise ValueError("fun1 dimension requires a target role")
        elif self.target_role is not None:
            raise ValueError(f"{self.kind.value} dimension takes no target role")

    def token(self) -> str:
        if self.kind is DimensionKind.FUN1:
            return f"fun1:{self.target_role}"
        return self.kind.value


def parse_dimension_token(token: str) -> Dimension:
    """Parse a CLI dimension token: fun1:<role> | fun2 | str1 | str2 | str3."""
    if token.startswith("fun1:"):
        role = token[len("fun1:"):]
        if not role:
            raise ValueError("fun1 token requires a role, e.g. fun1:Mathematician")
        return Dimension(DimensionKind.FUN1, role)
    try:
        kind = DimensionKind(token)
    except ValueError:
        raise ValueError(f"unknown dimension token {token!r}") from None
    if kind is DimensionKind.FUN1:
        raise ValueError("fun1 token requires a role, e.g. fun1:Mathematician")
    return Dimension(kind)


@dataclass(frozen=True)
class AgentSpec:
    """One node of the collaboration graph: a role with its instruction prompt."""

    role_name: str
    instruction_prompt: str
    few_shot_examples: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.role_name:
            raise ValueError("role_name must be nonempty")
        if not self.instruction_prompt:
            raise ValueError("instruction_prompt must be nonempty")
        object.__setattr__(self, "few_shot_examples",
                           tuple((str(a), str(b)) for a, b in self.few_shot_examples))

    def basic_description(self) -> str:
        """First sentence of the instruction prompt (used as the anchor every
        refined prompt for this agent must begin with)."""
        text = self.instruction_prompt.strip()
        for i, ch in enumerate(text):
            if ch in ".!?" and (i + 1 == len(text) or text[i + 1].isspace()):
                return text[: i + 1]
        return text


@dataclass(frozen=True)
class ControllerSpec:
    """Instruction prompt governing one structural dimension, with the
    allowed selection-size bounds for its parsed index lists."""

    dimension_kind: DimensionKind
    instruction_prompt: str
    selection_bounds: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if self.dimension_kind not in STRUCTURAL_KINDS:
            raise ValueError("controller dimension must be str1, str2 or str3")
        if not self.instruction_prompt:
            raise ValueError("instruction_prompt must be nonempty")
        bounds = self.selection_bounds
        if bounds is None:
            bounds = DEFAULT_BOUNDS[self.dimension_kind]
            object.__setattr__(self, "selection_bounds", bounds)
        lo, hi = bounds
        if lo < 1 or lo > hi:
            raise ValueError(f"invalid selection bounds {bounds}")


@dataclass(frozen=True)
class InitializerProvenance:
    index: int


@dataclass(frozen=True)
class ComparatorProvenance:
    iteration: int
    positive_parent_id: str
    negative_parent_id: str


Provenance = Union[InitializerProvenance, ComparatorProvenance]
Payload = Union[AgentSpec, ControllerSpec]


@dataclass
class Candidate:
    """An optimizable payload under evaluation.

    ``score`` is None until the evaluator sets it; every other field is
    write-once. Ties in score order by smaller created_seq everywhere.
    """

    id: str
    dimension: Dimension
    payload: Payload
    provenance: Provenance
    created_seq: int
    score: Optional[float] = None

    def __post_init__(self):
        functional = isinstance(self.payload, AgentSpec)
        if functional != (self.dimension.kind in FUNCTIONAL_KINDS):
            raise ValueError(
                f"payload {type(self.payload).__name__} does not match "
                f"dimension {self.dimension.kind.value}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError("score must be in [0, 1]")

    def payload_text(self) -> str:
        return self.payload.instruction_prompt


def rank_key(candidate: Candidate) -> tuple[float, int]:
    """Sort key yielding score-descending, created_seq-ascending order."""
    if candidate.score is None:
        raise ValueError(f"candidate {candidate.id} is unscored")
    return (-candidate.score, candidate.created_seq)


@dataclass(frozen=True)
class StepSpec:
    """One collaboration step and the roles allowed to act in it."""

    step_index: int
    eligible_roles: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "eligible_roles", tuple(self.eligible_roles))
        if not self.eligible_roles:
            raise ValueError("eligible_roles must be nonempty")
        if len(set(self.eligible_roles)) != len(self.eligible_roles):
            raise ValueError("eligible_roles must not contain duplicates")


@dataclass(frozen=True)
class DynamicSelector:
    """A per-step participation controller and the step index it fires at."""

    controller: ControllerSpec
    step_index: int


@dataclass(frozen=True)
class MajorityVote:
    pass


@dataclass(frozen=True)
class BoxedExtract:
    pass


@dataclass(frozen=True)
class TopKCode:
    k: int = 5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


Aggregation = Union[MajorityVote, BoxedExtract, TopKCode]


@dataclass(frozen=True)
class MasConfig:
    """A complete multi-agent system configuration.

    routing None means fully connected (every participant receives every
    previous-step output); a STR3 ControllerSpec routes per recipient.
    """

    roster: tuple[AgentSpec, ...]
    schedule: tuple[StepSpec, ...]
    routing: Optional[ControllerSpec] = None
    team_selector: Optional[ControllerSpec] = None
    dynamic_selector: Optional[DynamicSelector] = None
    aggregation: Aggregation = field(default_factory=MajorityVote)
    max_tokens: int = 2048
    temperature: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "roster", tuple(self.roster))
        object.__setattr__(self, "schedule", tuple(self.schedule))
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def role_names(self) -> tuple[str, ...]:
        return tuple(a.role_name for a in self.roster)

    def agent(self, role_name: str) -> AgentSpec:
        for a in self.roster:
            if a.role_name == role_name:
                return a
        raise OmacError(f"unknown role: {role_name}")


@dataclass(frozen=True)
class Task:
    """One benchmark item: a query with an optional gold answer."""

    task_id: str
    query: str
    gold: Optional[str] = None
    evaluator_hint: Optional[str] = None

    def __post_init__(self):
        if not self.task_id:
            raise ValueError("task_id must be nonempty")
        if not self.query:
            raise ValueError("query must be nonempty")


@dataclass(frozen=True)
class Message:
    """One input message to an agent; source is a role name or "task"."""

    source: str
    text: str


TASK_SOURCE = "task"


@dataclass(frozen=True)
class AgentRecord:
    role: str
    input_messages: tuple[Message, ...]
    output: str


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    participants: tuple[str, ...]
    agent_records: tuple[AgentRecord, ...]

    def output_of(self, role: str) -> Optional[str]:
        for rec in self.agent_records:
            if rec.role == role:
                return rec.output
        return None


@dataclass(frozen=True)
class Transcript:
    """Full record of one collaboration run over one task."""

    task_id: str
    steps: tuple[StepRecord, ...]
    final_answer: Optional[str]
    stopped_early: bool


def validate_mas(config: MasConfig) -> list[str]:
    """Return every cross-object invariant violation; valid iff empty."""
    violations: list[str] = []
    names = config.role_names()
    seen: set[str] = set()
    for name in names:
        if name in seen:
            violations.append(f"duplicate role: {name}")
        seen.add(name)
    if not config.schedule:
        violations.append("schedule is empty")
    for pos, step in enumerate(config.schedule):
        if step.step_index != pos:
            violations.append(
                f"step at position {pos} carries step_index {step.step_index}")
        for role in step.eligible_roles:
            if role not in seen:
                violations.append(f"step {pos} references unknown role: {role}")
    sel = config.dynamic_selector
    if sel is not None:
        if not 0 <= sel.step_index < len(config.schedule):
            violations.append("selector step out of range")
        if sel.controller.dimension_kind is not DimensionKind.STR2:
            violations.append("dynamic selector controller must be str2")
    if config.team_selector is not None:
        if config.team_selector.dimension_kind is not DimensionKind.STR1:
            violations.append("team selector controller must be str1")
    if config.routing is not None:
        if config.routing.dimension_kind is not DimensionKind.STR3:
            violations.append("routing controller must be str3")
    return violations


def default_selector_step(config: MasConfig) -> int:
    """Step index a freshly spliced STR2 selector fires at when the config
    had none installed. Midpoint of the schedule (4 steps -> 2, 6 -> 3)."""
    return len(config.schedule) // 2


def splice(config: MasConfig, candidate: Candidate) -> MasConfig:
    """Return a new config with the candidate installed; input is not mutated.

    FUN1 replaces the target role's prompt and examples, FUN2 appends the new
    agent to the roster and to every step's eligibility, STR1/STR2/STR3
    install the controller in its slot.
    """
    kind = candidate.dimension.kind
    payload = candidate.payload

    if kind is DimensionKind.FUN1:
        target = candidate.dimension.target_role
        if target not in config.role_names():
            raise OmacError(f"unknown role: {target}")
        assert isinstance(payload, AgentSpec)
        roster = tuple(
            dataclasses.replace(a,
                                instruction_prompt=payload.instruction_prompt,
                                few_shot_examples=payload.few_shot_examples)
            if a.role_name == target else a
            for a in config.roster)
        return dataclasses.replace(config, roster=roster)

    if kind is DimensionKind.FUN2:
        assert isinstance(payload, AgentSpec)
        name = payload.role_name
        existing = set(config.role_names())
        if name in existing:
            # LLM-chosen role collided with the roster; rename deterministically.
            suffix = 2
            while f"{name} {suffix}" in existing:
                suffix += 1
            name = f"{name} {suffix}"
            payload = dataclasses.replace(payload, role_name=name)
        roster = config.roster + (payload,)
        schedule = tuple(
            dataclasses.replace(s, eligible_roles=s.eligible_roles + (name,))
            for s in config.schedule)
        return dataclasses.replace(config, roster=roster, schedule=schedule)

    assert isinstance(payload, ControllerSpec)
    if kind is DimensionKind.STR1:
        return dataclasses.replace(config, team_selector=payload)
    if kind is DimensionKind.STR2:
        if config.dynamic_selector is not None:
            step = config.dynamic_selector.step_index
        else:
            step = default_selector_step(config)
        return dataclasses.replace(
            config, dynamic_selector=DynamicSelector(payload, step))
    if kind is DimensionKind.STR3:
        return dataclasses.replace(config, routing=payload)
    raise OmacError(f"cannot splice dimension {kind}")
