"""Built-in MAS configurations.

Three ready-to-run teams: a seven-expert reasoning panel for multiple-choice
questions, a writer/reviewer code-generation workflow, and four identical
math solvers with boxed-answer aggregation.
"""

from __future__ import annotations

from .domain import (AgentSpec, BoxedExtract, ControllerSpec, DimensionKind,
                     DynamicSelector, MajorityVote, MasConfig, StepSpec,
                     TopKCode)
from .errors import OmacError
from .prompts import CONTROLLER_STR2_DEFAULT

_CHOICE_SUFFIX = (" Please think step by step and put your answer in the form "
                  "(X) at the end of your response, where (X) is one of (A), "
                  "(B), (C), or (D).")

_REASONING_ROLES: tuple[tuple[str, str], ...] = (
    ("Economist",
     "You are an economist. You are good at economics, finance, markets, and "
     "business reasoning." + _CHOICE_SUFFIX),
    ("Doctor",
     "You are a doctor. You are good at medicine, biology, anatomy, and "
     "clinical diagnosis." + _CHOICE_SUFFIX),
    ("Lawyer",
     "You are a lawyer. You are good at law, jurisprudence, regulations, and "
     "logical argumentation." + _CHOICE_SUFFIX),
    ("Mathematician",
     "You are a mathematician. You are good at math games, arithmetic "
     "calculation, and long-term planning." + _CHOICE_SUFFIX),
    ("Psychologist",
     "You are a psychologist. You are good at psychology, sociology, human "
     "behavior, and philosophy." + _CHOICE_SUFFIX),
    ("Programmer",
     "You are a programmer. You are good at computer science, engineering, "
     "algorithms, and formal logic." + _CHOICE_SUFFIX),
    ("Historian",
     "You are a historian. You research and analyze cultural, economic, "
     "political, and social events of the past." + _CHOICE_SUFFIX),
)

_MATH_PROMPT = ("You are a mathematician. You are good at math games, "
                "arithmetic calculation, and long-term planning. Please "
                "provide a step-by-step approach to solve some provided "
                "mathematical problems.")

_MATH_FEW_SHOT = (
    ("Problem: What is $1 + 2 \\times 3$?",
     "First evaluate the product: $2 \\times 3 = 6$. Then add: $1 + 6 = 7$. "
     "The answer is $\\boxed{7}$."),
)

_CODE_SUFFIX = (" You will be given a function signature and its docstring. "
                "Write your full implementation following the format "
                "(restate the function signature) inside a python code block.")

_WRITER_ROLES: tuple[tuple[str, str], ...] = (
    ("Python Assistant",
     "You are a Python writing assistant, an AI that only responds with "
     "python code, not English." + _CODE_SUFFIX),
    ("Algorithm Developer",
     "You are an algorithm developer. You are good at developing and "
     "utilizing algorithms to solve problems." + _CODE_SUFFIX),
    ("Computer Scientist",
     "You are a computer scientist. You are good at writing high performance "
     "code and recognizing corner cases while solving real problems."
     + _CODE_SUFFIX),
    ("Programmer",
     "You are an intelligent programmer. You must complete the python "
     "function given to you by the user, responding only with code and "
     "comments." + _CODE_SUFFIX),
)

_REVIEWER_ROLES: tuple[tuple[str, str], ...] = (
    ("Syntax Checker",
     "You are a syntax checker. Review the previous implementations for "
     "syntax errors, typos, and formatting problems, and report each issue "
     "you find with a suggested fix."),
    ("Unit Tester",
     "You are a unit tester. Given previous implementations of the same "
     "function, write unit tests that probe correctness and corner cases, "
     "and state which implementations pass them."),
    ("Reflector",
     "You are a reflector. Write your reflection on the previous "
     "implementations in consideration of correctness, efficiency, and "
     "possible corner cases."),
    # Fixed (non-optimizable) reviewer required by the review workflow.
    ("Ranker",
     "You are a ranker. Take correctness, efficiency, and possible corner "
     "cases into consideration, choose the top 2 implementations that match "
     "the function's docstring best. Put your answer in the form like [1,2] "
     "or [3,4] at the end of your response."),
)


def _default_dynamic_selector(step_index: int) -> DynamicSelector:
    return DynamicSelector(
        controller=ControllerSpec(dimension_kind=DimensionKind.STR2,
                                  instruction_prompt=CONTROLLER_STR2_DEFAULT),
        step_index=step_index)


def reasoning7() -> MasConfig:
    """Seven experts, four fully-connected steps, dynamic selection at the
    third step, majority vote over (X) choices."""
    roster = tuple(AgentSpec(name, prompt) for name, prompt in _REASONING_ROLES)
    names = tuple(a.role_name for a in roster)
    schedule = tuple(StepSpec(i, names) for i in range(4))
    return MasConfig(roster=roster, schedule=schedule,
                     dynamic_selector=_default_dynamic_selector(2),
                     aggregation=MajorityVote(), max_tokens=1024,
                     temperature=0.8)


def codegen() -> MasConfig:
    """Four code writers and four reviewers over a six-step schedule
    (writers at steps 0, 2, 3, 5; reviewers at 1 and 4), dynamic selection at
    the fourth step, final code drawn from the top five completions."""
    writers = tuple(AgentSpec(name, prompt) for name, prompt in _WRITER_ROLES)
    reviewers = tuple(AgentSpec(name, prompt) for name, prompt in _REVIEWER_ROLES)
    writer_names = tuple(a.role_name for a in writers)
    reviewer_names = tuple(a.role_name for a in reviewers)
    layout = (writer_names, reviewer_names, writer_names, writer_names,
              reviewer_names, writer_names)
    schedule = tuple(StepSpec(i, roles) for i, roles in enumerate(layout))
    return MasConfig(roster=writers + reviewers, schedule=schedule,
                     dynamic_selector=_default_dynamic_selector(3),
                     aggregation=TopKCode(k=5), max_tokens=2048,
                     temperature=0.8)


def math4() -> MasConfig:
    """Four solvers sharing one prompt and few-shot examples, four steps,
    dynamic selection at the third step, boxed-answer aggregation."""
    roster = tuple(AgentSpec(f"Mathematician {i}", _MATH_PROMPT,
                             few_shot_examples=_MATH_FEW_SHOT)
                   for i in range(1, 5))
    names = tuple(a.role_name for a in roster)
    schedule = tuple(StepSpec(i, names) for i in range(4))
    return MasConfig(roster=roster, schedule=schedule,
                     dynamic_selector=_default_dynamic_selector(2),
                     aggregation=BoxedExtract(), max_tokens=2048,
                     temperature=0.8)


PRESETS = {
    "reasoning7": reasoning7,
    "codegen": codegen,
    "math4": math4,
}


def get_preset(name: str) -> MasConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise OmacError(f"unknown preset: {name!r} "
                        f"(available: {', '.join(sorted(PRESETS))})") from None
