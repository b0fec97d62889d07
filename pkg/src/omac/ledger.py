"""Append-only run ledger, transcript archive, config serialization, reports.

The ledger is JSONL with stable key ordering, one event per line. A file
holds one or more run segments; each segment starts with RunStarted and ends
with RunCompleted or Error, seq stays dense from 0 across the file, and only
an Error-terminated file accepts further segments (resume). The determinism
digest hashes every event with the timestamp dropped, so two replay-equal
runs produce equal digests regardless of wall clock.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import domain
from .errors import LedgerSealedError, OmacError

KINDS = (
    "RunStarted", "ActorCall", "BackendCall", "CandidateCreated",
    "CandidateScored", "PairSampled", "FallbackTriggered", "StepExecuted",
    "EarlyStopped", "DimensionCompleted", "RunCompleted", "Error",
)
_TERMINAL = ("RunCompleted", "Error")


@dataclass(frozen=True)
class LedgerEvent:
    seq: int
    ts: float
    kind: str
    payload: dict

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown event kind: {self.kind}")


class EventSink:
    """Anything accepting emit(kind, **payload); base class drops events."""

    def emit(self, kind: str, **payload) -> None:
        pass


NULL_SINK = EventSink()


class ListSink(EventSink):
    """Buffers (kind, payload) pairs; used per evaluation task so ledger
    order is execution-independent under --jobs parallelism."""

    def __init__(self):
        self.items: list[tuple[str, dict]] = []

    def emit(self, kind: str, **payload) -> None:
        self.items.append((kind, payload))


class RunLedger(EventSink):
    """Single-writer append-only ledger under run_dir."""

    def __init__(self, run_dir: str | Path, *, resume: bool = False):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.path = self.run_dir / "ledger.jsonl"
        self._seq = 0
        self._sealed = False
        if resume and self.path.exists():
            events = load_ledger(self.path)
            if events:
                if events[-1].kind == "RunCompleted":
                    raise LedgerSealedError("ledger sealed")
                if events[-1].kind != "Error":
                    raise OmacError("can only resume an Error-terminated ledger")
                self._seq = events[-1].seq + 1
            self._fh = open(self.path, "a", encoding="utf-8")
        else:
            self._fh = open(self.path, "w", encoding="utf-8")

    def emit(self, kind: str, **payload) -> LedgerEvent:
        if self._sealed:
            raise LedgerSealedError("ledger sealed")
        event = LedgerEvent(seq=self._seq, ts=time.time(), kind=kind, payload=payload)
        self._fh.write(_event_line(event) + "\n")
        self._fh.flush()
        self._seq += 1
        if kind == "RunCompleted":
            self._sealed = True
        return event

    def extend(self, items: list[tuple[str, dict]]) -> None:
        for kind, payload in items:
            self.emit(kind, **payload)

    def save_transcript(self, transcript: domain.Transcript) -> Path:
        tdir = self.run_dir / "transcripts"
        tdir.mkdir(exist_ok=True)
        path = tdir / f"{transcript.task_id}.json"
        path.write_text(json.dumps(transcript_to_dict(transcript), indent=2,
                                   ensure_ascii=False, sort_keys=True),
                        encoding="utf-8")
        return path

    def close(self) -> None:
        self._fh.close()


def _event_line(event: LedgerEvent) -> str:
    return json.dumps(
        {"seq": event.seq, "ts": event.ts, "kind": event.kind, "payload": event.payload},
        sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def load_ledger(path: str | Path) -> list[LedgerEvent]:
    """Load and structurally validate a ledger file."""
    events: list[LedgerEvent] = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                events.append(LedgerEvent(seq=raw["seq"], ts=raw["ts"],
                                          kind=raw["kind"], payload=raw["payload"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise OmacError(f"bad ledger line {n + 1}: {exc}") from None
    for i, event in enumerate(events):
        if event.seq != i:
            raise OmacError(f"ledger seq gap at {i} (saw {event.seq})")
    if events and events[0].kind != "RunStarted":
        raise OmacError("ledger must start with RunStarted")
    return events


def ledger_digest(events: list[LedgerEvent]) -> str:
    """sha256 over all events with timestamps excluded."""
    h = hashlib.sha256()
    for event in events:
        h.update(json.dumps(
            {"seq": event.seq, "kind": event.kind, "payload": event.payload},
            sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def run_segments(events: list[LedgerEvent]) -> list[list[LedgerEvent]]:
    segments: list[list[LedgerEvent]] = []
    for event in events:
        if event.kind == "RunStarted":
            segments.append([])
        if not segments:
            raise OmacError("event before RunStarted")
        segments[-1].append(event)
    return segments


# --- report -----------------------------------------------------------------

def _scored_rows(events: list[LedgerEvent]) -> list[dict]:
    created = {e.payload["candidate_id"]: e.payload
               for e in events if e.kind == "CandidateCreated"}
    rows = []
    for e in events:
        if e.kind != "CandidateScored":
            continue
        cid = e.payload["candidate_id"]
        meta = created.get(cid, {})
        provenance = meta.get("provenance", {})
        iteration = provenance.get("iteration", 0)
        rows.append({
            "dimension": meta.get("dimension", ""),
            "iteration": iteration,
            "candidate_id": cid,
            "score": e.payload["score"],
        })
    return rows


def report(events: list[LedgerEvent]) -> tuple[str, str]:
    """Render (markdown, csv) for a completed ledger; pure function of it."""
    rows = _scored_rows(events)
    created = [e for e in events if e.kind == "CandidateCreated"]
    completed = [e for e in events if e.kind == "DimensionCompleted"]
    fallbacks = sum(1 for e in events if e.kind == "FallbackTriggered")
    errors = sum(1 for e in events if e.kind == "Error")

    md = io.StringIO()
    md.write("# Run report\n\n")
    if completed:
        md.write("## Best per dimension\n\n")
        md.write("| dimension | outer iteration | best candidate | best score |\n")
        md.write("|---|---|---|---|\n")
        for e in completed:
            p = e.payload
            md.write(f"| {p['dimension']} | {p.get('outer_iteration', 0)} "
                     f"| {p['best_id']} | {p['best_score']:.4f} |\n")
        md.write("\n## Score trajectory per iteration\n\n")
        for e in completed:
            p = e.payload
            trajectory = p.get("trajectory", [])
            md.write(f"- {p['dimension']} (outer {p.get('outer_iteration', 0)}): "
                     f"{[round(t, 4) for t in trajectory]}\n")
        md.write("\n")
    if created:
        md.write("## Candidate lineage\n\n")
        for e in created:
            p = e.payload
            prov = p.get("provenance", {})
            if prov.get("type") == "comparator":
                md.write(f"- {p['candidate_id']} <- comparator(iter {prov['iteration']}, "
                         f"+{prov['positive_parent_id']}, -{prov['negative_parent_id']})\n")
            else:
                md.write(f"- {p['candidate_id']} <- initializer(index {prov.get('index', 0)})\n")
        md.write("\n")
    md.write(f"## Health\n\n- fallbacks: {fallbacks}\n- errors: {errors}\n")

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["dimension", "iteration", "candidate_id", "score"])
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return md.getvalue(), buf.getvalue()


def write_report(events: list[LedgerEvent], run_dir: str | Path) -> tuple[Path, Path]:
    md, csv_text = report(events)
    run_dir = Path(run_dir)
    md_path = run_dir / "report.md"
    csv_path = run_dir / "report.csv"
    md_path.write_text(md, encoding="utf-8")
    csv_path.write_text(csv_text, encoding="utf-8")
    return md_path, csv_path


def best_trajectory(events: list[LedgerEvent], dimension: str) -> list[float]:
    """Best-so-far trajectory of a dimension, read from its completion event."""
    for e in reversed(events):
        if e.kind == "DimensionCompleted" and e.payload["dimension"] == dimension:
            return list(e.payload.get("trajectory", []))
    raise OmacError(f"no DimensionCompleted event for {dimension}")


# --- domain value serialization ----------------------------------------------

def agent_to_dict(agent: domain.AgentSpec) -> dict:
    return {
        "role_name": agent.role_name,
        "instruction_prompt": agent.instruction_prompt,
        "few_shot_examples": [list(p) for p in agent.few_shot_examples],
    }


def agent_from_dict(raw: dict) -> domain.AgentSpec:
    return domain.AgentSpec(
        role_name=raw["role_name"],
        instruction_prompt=raw["instruction_prompt"],
        few_shot_examples=tuple(tuple(p) for p in raw.get("few_shot_examples", [])))


def controller_to_dict(ctrl: domain.ControllerSpec) -> dict:
    return {
        "dimension_kind": ctrl.dimension_kind.value,
        "instruction_prompt": ctrl.instruction_prompt,
        "selection_bounds": list(ctrl.selection_bounds),
    }


def controller_from_dict(raw: dict) -> domain.ControllerSpec:
    return domain.ControllerSpec(
        dimension_kind=domain.DimensionKind(raw["dimension_kind"]),
        instruction_prompt=raw["instruction_prompt"],
        selection_bounds=tuple(raw["selection_bounds"]))


def _aggregation_to_dict(agg: domain.Aggregation) -> dict:
    if isinstance(agg, domain.MajorityVote):
        return {"kind": "majority_vote"}
    if isinstance(agg, domain.BoxedExtract):
        return {"kind": "boxed_extract"}
    if isinstance(agg, domain.TopKCode):
        return {"kind": "top_k_code", "k": agg.k}
    raise OmacError(f"unknown aggregation {agg!r}")


def _aggregation_from_dict(raw: dict) -> domain.Aggregation:
    kind = raw["kind"]
    if kind == "majority_vote":
        return domain.MajorityVote()
    if kind == "boxed_extract":
        return domain.BoxedExtract()
    if kind == "top_k_code":
        return domain.TopKCode(k=raw.get("k", 5))
    raise OmacError(f"unknown aggregation kind {kind!r}")


def config_to_dict(config: domain.MasConfig) -> dict:
    return {
        "roster": [agent_to_dict(a) for a in config.roster],
        "schedule": [{"step_index": s.step_index,
                      "eligible_roles": list(s.eligible_roles)}
                     for s in config.schedule],
        "routing": controller_to_dict(config.routing) if config.routing else None,
        "team_selector": (controller_to_dict(config.team_selector)
                          if config.team_selector else None),
        "dynamic_selector": ({
            "controller": controller_to_dict(config.dynamic_selector.controller),
            "step_index": config.dynamic_selector.step_index,
        } if config.dynamic_selector else None),
        "aggregation": _aggregation_to_dict(config.aggregation),
        "max_tokens": config.max_tokens,
        "temperature": config.temperature,
    }


def config_from_dict(raw: dict) -> domain.MasConfig:
    selector = None
    if raw.get("dynamic_selector"):
        selector = domain.DynamicSelector(
            controller=controller_from_dict(raw["dynamic_selector"]["controller"]),
            step_index=raw["dynamic_selector"]["step_index"])
    return domain.MasConfig(
        roster=tuple(agent_from_dict(a) for a in raw["roster"]),
        schedule=tuple(domain.StepSpec(step_index=s["step_index"],
                                       eligible_roles=tuple(s["eligible_roles"]))
                       for s in raw["schedule"]),
        routing=controller_from_dict(raw["routing"]) if raw.get("routing") else None,
        team_selector=(controller_from_dict(raw["team_selector"])
                       if raw.get("team_selector") else None),
        dynamic_selector=selector,
        aggregation=_aggregation_from_dict(raw.get("aggregation", {"kind": "majority_vote"})),
        max_tokens=raw.get("max_tokens", 2048),
        temperature=raw.get("temperature", 0.8))


def payload_to_dict(payload: domain.Payload) -> dict:
    if isinstance(payload, domain.AgentSpec):
        return {"type": "agent", **agent_to_dict(payload)}
    return {"type": "controller", **controller_to_dict(payload)}


def payload_from_dict(raw: dict) -> domain.Payload:
    if raw["type"] == "agent":
        return agent_from_dict(raw)
    return controller_from_dict(raw)


def provenance_to_dict(prov: domain.Provenance) -> dict:
    if isinstance(prov, domain.InitializerProvenance):
        return {"type": "initializer", "index": prov.index}
    return {"type": "comparator", "iteration": prov.iteration,
            "positive_parent_id": prov.positive_parent_id,
            "negative_parent_id": prov.negative_parent_id}


def provenance_from_dict(raw: dict) -> domain.Provenance:
    if raw["type"] == "initializer":
        return domain.InitializerProvenance(index=raw["index"])
    return domain.ComparatorProvenance(
        iteration=raw["iteration"],
        positive_parent_id=raw["positive_parent_id"],
        negative_parent_id=raw["negative_parent_id"])


def candidate_to_dict(candidate: domain.Candidate) -> dict:
    return {
        "candidate_id": candidate.id,
        "dimension": candidate.dimension.token(),
        "payload": payload_to_dict(candidate.payload),
        "provenance": provenance_to_dict(candidate.provenance),
        "created_seq": candidate.created_seq,
    }


def candidate_from_dict(raw: dict, score: Optional[float] = None) -> domain.Candidate:
    return domain.Candidate(
        id=raw["candidate_id"],
        dimension=domain.parse_dimension_token(raw["dimension"]),
        payload=payload_from_dict(raw["payload"]),
        provenance=provenance_from_dict(raw["provenance"]),
        created_seq=raw["created_seq"],
        score=score)


def transcript_to_dict(transcript: domain.Transcript) -> dict:
    return {
        "task_id": transcript.task_id,
        "stopped_early": transcript.stopped_early,
        "final_answer": transcript.final_answer,
        "steps": [{
            "step_index": s.step_index,
            "participants": list(s.participants),
            "agents": [{
                "role": r.role,
                "inputs": [{"source": m.source, "text": m.text}
                           for m in r.input_messages],
                "output": r.output,
            } for r in s.agent_records],
        } for s in transcript.steps],
    }
