"""Template registry and renderer.

Placeholders use single braces, {name}, and names may contain spaces
("{initialization number}"). Substitution is literal and single-pass: values
are never re-scanned for placeholders.

Builtin bodies cover the two optimization actors across all five dimensions,
the default structural-controller instructions, the context preambles the
engine prepends to controller instructions, and the one-shot example used
when constructing a new agent. Any template can be overridden by a UTF-8
file named {key}.txt in a directory passed via --templates.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .errors import TemplateError

_PLACEHOLDER = re.compile(r"\{([^{}]+)\}")


@dataclass(frozen=True)
class Template:
    name: str
    body: str
    required_vars: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "required_vars", tuple(self.required_vars))
        present = set(placeholders(self.body))
        for var in self.required_vars:
            if var not in present:
                raise ValueError(
                    f"template {self.name!r}: required var {var!r} not in body")


def placeholders(body: str) -> list[str]:
    """All placeholder names in body, in order of first appearance."""
    seen: list[str] = []
    for match in _PLACEHOLDER.finditer(body):
        name = match.group(1)
        if name not in seen:
            seen.append(name)
    return seen


def render(template: Template, vars: dict[str, str]) -> str:
    """Substitute every placeholder; literal, no recursion."""
    for var in template.required_vars:
        if var not in vars:
            raise TemplateError(f"missing variable {var}")
    for name in placeholders(template.body):
        if name not in vars:
            raise TemplateError(f"unknown placeholder {name}")
    return _PLACEHOLDER.sub(lambda m: str(vars[m.group(1)]), template.body)


def _template(name: str, body: str) -> Template:
    return Template(name=name, body=body, required_vars=tuple(placeholders(body)))


INITIALIZER_FUN1 = """\
Generate {initialization number} distinct prompts to instruct an LLM to resolve some general reasoning problems acting as the given role: {optimized agent role}.
Each prompt should guide the model to accurately and efficiently resolve problems while adhering to the specified role.
Each prompt must begin strictly with the following content: {basic description of the optimized agent}. Then, you should consider adding more detailed, logical, and through instructions, which can help the LLM resolve problems better acting as the given role.
Do not output anything currently. Instead, I will provide a sequence number, and you should return only the corresponding prompt one by one.
Do not create any specific instances of the problems in the prompt, cause they are not provided now.
Ensure that the generated prompts follow the given example format but differ in content and structure from the example itself. The example is as follows:

{one-shot example}."""

INITIALIZER_FUN2 = """\
Generate {initialization number} distinct prompts to instruct an LLM to resolve some general reasoning problems related to math, hard science, humanities, and social sciences.  There are some existing agents in the system to resolve the problems, whose roles are: {roles of existing agents}.
You need to generate some new roles and prompts for the LLM to better resolve the problems.
First, determine the roles of these prompts. Next, create the prompts that instruct the LLM to resolve problems based on the defined roles.
Do not output all the generated roles and prompts at once. Instead, I will request either the k-th role or the k-th prompt individually. When asked, directly output the corresponding content of the role name or prompt one at a time.
Do not create any instances of the problems in the prompt, cause they are not provided now.
You can decide the content and detailed functional instructions of the roles and prompts. You may consider adding more detailed instructions to help the LLM resolve problems.
The following is an example of a role and the corresponding prompt (also ensure your output is different from the example role and prompt):

{one-shot example}."""

INITIALIZER_STR1 = """\
Generate {initialization number} distinct prompts for an LLM to choose some top agents best suited for resolving some general reasoning problems related to math, hard science, humanities, social sciences, etc.
Don't directly output all the generated prompts. I will provide you the sequence number of the prompt. Then you should directly output the content text of the corresponding prompt one by one.
Each prompt should decide and specify the number of the chosen agents. The minimal number is 4 and maximum number is 7.
Each prompt should help to accurately and efficiently identify the top agents best suited for problem-solving.
Note that all information about the task and candidate agents has been previously provided as the context. The prompt generated here will be added to the context to form the final prompt for agent selection.
You may consider adding more detailed and thorough instructions to help the LLM select the top agents better.
The following is an example of a prompt (also ensure your output is different from the example prompt):

{one-shot example}."""

INITIALIZER_STR2 = """\
Generate {initialization number} distinct prompts for an LLM to choose some top solutions for best resolving some general reasoning problems related to math, hard science, humanities, social sciences, etc.
Don't directly output all the generated prompts. I will provide you with the sequence number of the prompt. Then you should directly output the content text of the corresponding prompt one by one.
You can decide the number of the chosen solutions and the content of the prompt. The number of solutions should be between 2 and 7.
The prompt should help to accurately and efficiently select the top solutions that resolve the given problems best.
Note that all the solutions and the problem have been previously provided as the context. The prompt generated here will be added to the context to form the final prompt for solution selection.
You may consider adding more detailed and thorough instructions to help the LLM select the top solutions better.
The generated prompt should specify the output format like the given example (also ensure that it is different from the example prompt):

{one-shot example}."""

INITIALIZER_STR3 = """\
Generate {initialization number} distinct prompts for an LLM to choose some top candidate agents whose generated solutions to some general reasoning problems may be useful as inputs for the current agent to produce improved solutions.
Don't directly output all the generated prompts. I will provide you with the sequence number of the prompt. Then you should directly output the content text of the corresponding prompt one by one.
You should decide the number of chosen agents and the content of the prompt. The number of chosen agents should be between 4 and 7.
Each prompt should help to accurately and efficiently identify the top candidate agents whose generated solutions are helpful to be taken as input for the current agent.
Note that all information about the candidate agents and the current agent has been previously provided as the context. The prompt generated here will be added to the context to form the final prompt for agent selection.
You may consider adding more detailed and thorough instructions to help the LLM select the candidate agents better.
The following is an example of a prompt (also ensure your output is different from the example prompt):

{one-shot example}."""

COMPARATOR_FUN1 = """\
Generate and output a child prompt for an LLM to resolve some general reasoning problems acting like the given role: {optimized agent role}.
At the end, a pair of parent prompts is provided: one positive and one negative. The positive parent prompt has been shown to be more effective and efficient in guiding the LLM to resolve problems following the given role.
Your task is to carefully compare the two parent prompts, identifying the key reasons why the positive parent prompt performs better. Based on these insights, generate and output a child prompt that further improves upon the positive parent prompt to enhance problem-solving.
Do not create any instances of the problem in the prompt, cause they are not provided now.
The child prompt must begin strictly with the following content: {basic description of the optimized agent}. Then, you can consider adding more detailed, logical, and through instructions based on the insights you have gained from the comparison.
Output only the content of the child prompt excluding the reasoning process.
Here is the positive-negative pair of parent prompts: {positive/negative prompts}."""

COMPARATOR_FUN2 = """\
Generate and output a pair consisting of a role name and its corresponding prompt, designed to resolve some general reasoning problems (related to math, hard science, humanities, social sciences, etc.).
First, determine the role of the LLM. Next, create a prompt that effectively instructs the LLM to resolve problems based on this role.
I will provide two parent role-prompt pairs: one positive and one negative. The positive pair has been proven to be more effective in guiding the LLM to generate high-quality solutions for general problems.
Your task is to carefully analyze both parent pairs, identifying the factors that make the positive pair superior. Based on this analysis, generate and output a child role and prompt pair that improves upon the positive parent pair and leads to even better problem resolution.
The child prompt must be distinct from both parent prompts while incorporating the lessons learned from their comparison.
Do not output the role and prompt immediately. I will request them separately, and when asked, provide only the corresponding content, either the role name or the prompt.
Here is the positive-negative pair of parent prompts: {positive/negative prompts}."""

COMPARATOR_STR1 = """\
Create and output a child prompt for an LLM to choose some top agents that best suited for resolving some general reasoning problems related to math, hard science, humanities, social sciences, etc.
I will provide you with a pair of parent prompts. Then you should only output a child prompt according the following instructions:
The positive parent prompt is proven to be more helpful and efficient to instruct the LLM to select more useful and effective agents for problem resolution.
You should carefully compare the two parent prompts, finding the potential reasons why the positive parent prompt is better than the negative parent prompt.
Based on that, you should generate and output a child prompt that can help to choose top agents more effectively and efficiently than the positive prompt.
The child prompt should follow the format of the parent prompts.
The child prompt should be different from the parent prompts. And directly output the content text of the child prompt.
Here is the positive-negative pair of parent prompts: {positive/negative prompts}."""

COMPARATOR_STR2 = """\
Create and output a child prompt for an LLM to choose some top solutions for resolving some general reasoning problems (related to math, hard science, humanities, social sciences, etc.) best.
I will provide you with a pair of parent prompts. Then you should only output a child prompt according the following instructions:
The positive parent prompt is proven to be more helpful and efficient to instruct the LLM to select more useful and effective solutions to resolve the problems.
You should carefully compare the two parent prompts, finding the potential reasons why the positive parent prompt is better than the negative parent prompt.
Based on that, you should generate and output a child prompt that can help to choose top solutions more effectively and efficiently than the positive prompt.
The child prompt should follow the format of the parent prompts.
The child prompt should be different from the parent prompts. And directly output the content text of the child prompt.
Here is the positive-negative pair of parent prompts: {positive/negative prompts}."""

COMPARATOR_STR3 = """\
Create and output a child prompt for an LLM to choose some candidate agents whose generated solutions to some general reasoning problems may be useful as inputs for the current agent to produce improved solutions.
I will provide you a pair of parent prompts. Then you should only output a child prompt according the following instructions:
The positive parent prompt is proven to be more helpful and efficient to instruct the LLM to select more useful and effective agents.
You should carefully compare the two parent prompts, finding the potential reasons why the positive parent prompt is better than the negative parent prompt.
Based on that, you should generate and output a child prompt that can help to choose top agents more effectively and efficiently than the positive prompt.
The child prompt should follow the format of the parent prompts.
The child prompt should be different from the parent prompts. And directly output the content text of the child prompt.
Here is the positive-negative pair of parent prompts: {positive/negative prompts}."""

CONTROLLER_STR1_DEFAULT = """\
Take functionality, efficiency, and necessity into consideration, choose top 5 agents best suited for resolving the given problem. Think it step by step.
Put your answer in the form like [1,3,4,5,6] at the end of your response."""

CONTROLLER_STR2_DEFAULT = """\
Please choose the best 2 solutions and think step by step. Put your answer in the form like [1,2] or [3,4] at the end of your response."""

CONTROLLER_STR3_DEFAULT = """\
Take functionality, efficiency, and necessity into consideration. Select the top 5 candidate agents whose generated solutions to some general reasoning problems can be mostly useful as inputs for the current agent to produce improved solutions. Think it step by step.
Put your answer in the form like [1,2,3,4,5] at the end of your response."""

CONTROLLER_STR1_CONTEXT = """\
Here is the task and question: {task context}.
These are the agents and their functional description: {candidate agent functionalities}."""

CONTROLLER_STR2_CONTEXT = """\
Here is the task and question: {task context}.
These are the solutions to the problem from other agents: {previous agent solutions}."""

CONTROLLER_STR3_CONTEXT = """\
Here is the functional description of the current agent: {current agent functionality}.
These are the candidate agents and their functional description: {candidate agent functionalities}."""

ONESHOT_FUN2 = """\
Role: AI Assistant
Prompt: You are a super-intelligent AI assistant capable of performing tasks more effectively than humans."""

_BUILTIN_BODIES: dict[str, str] = {
    "initializer.fun1": INITIALIZER_FUN1,
    "initializer.fun2": INITIALIZER_FUN2,
    "initializer.str1": INITIALIZER_STR1,
    "initializer.str2": INITIALIZER_STR2,
    "initializer.str3": INITIALIZER_STR3,
    "comparator.fun1": COMPARATOR_FUN1,
    "comparator.fun2": COMPARATOR_FUN2,
    "comparator.str1": COMPARATOR_STR1,
    "comparator.str2": COMPARATOR_STR2,
    "comparator.str3": COMPARATOR_STR3,
    "controller.str1.default": CONTROLLER_STR1_DEFAULT,
    "controller.str2.default": CONTROLLER_STR2_DEFAULT,
    "controller.str3.default": CONTROLLER_STR3_DEFAULT,
    "controller.str1.context": CONTROLLER_STR1_CONTEXT,
    "controller.str2.context": CONTROLLER_STR2_CONTEXT,
    "controller.str3.context": CONTROLLER_STR3_CONTEXT,
    "oneshot.fun2": ONESHOT_FUN2,
}

ACTOR_TEMPLATE_KEYS = tuple(
    k for k in _BUILTIN_BODIES if k.startswith(("initializer.", "comparator.")))


def builtin_templates() -> dict[str, Template]:
    return {name: _template(name, body) for name, body in _BUILTIN_BODIES.items()}


def load_templates(override_dir: str | Path | None = None) -> dict[str, Template]:
    """Builtin registry, with any {key}.txt files in override_dir replacing
    (or adding) template bodies byte-for-byte."""
    registry = builtin_templates()
    if override_dir is None:
        return registry
    root = Path(override_dir)
    if not root.is_dir():
        raise TemplateError(f"template directory not found: {root}")
    for path in sorted(root.glob("*.txt")):
        body = path.read_text(encoding="utf-8")
        registry[path.stem] = _template(path.stem, body)
    return registry


def save_templates(registry: dict[str, Template], out_dir: str | Path) -> None:
    """Write one {key}.txt per template; bodies round-trip byte-exactly."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    for name, template in registry.items():
        (root / f"{name}.txt").write_text(template.body, encoding="utf-8")
