"""
Hierarchy-aware preference records from seed cases.

A seed case carries one seed instruction plus aligned and conflicting
variants. Variants are first checked with a conflict detector (aligned ones
must not contradict, conflicting ones must), then placed into the
system / user / tool slots of a conversation and paired with an accepted
and a rejected response.
"""

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import jsonschema

from hier_resolve.conflict_scan import Detector, Relation
from hier_resolve.errors import ConfigError, RecordSchemaError

log = logging.getLogger(__name__)

CONFLICT_TYPES = ("system_over_user", "system_over_tool", "user_over_tool")
SLOTS = ("system", "user", "tool")
# (higher slot, lower slot) per conflict type
_PLACEMENT = {
    "system_over_user": ("system", "user"),
    "system_over_tool": ("system", "tool"),
    "user_over_tool": ("user", "tool"),
}
AUTHORITY_MATRIX = ((0, 1, 1), (0, 0, 1), (0, 0, 0))
CONFLICT_WEIGHT = 2.0
ALIGNED_WEIGHT = 1.0
# used when no instruction lands in the system or user slot
DEFAULT_SYSTEM_LINE = "You are a helpful assistant."
DEFAULT_USER_LINE = "Please help me with this task."

_TOOL_WRAPPER = re.compile(r"^<tool_output>(.*)</tool_output>$", re.DOTALL)

RECORD_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["id", "messages", "training_metadata"],
    "additionalProperties": False,
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "messages": {
            "type": "array",
            "minItems": 3,
            "maxItems": 4,
            "items": {
                "type": "object",
                "required": ["role", "content"],
                "additionalProperties": False,
                "properties": {
                    "role": {"enum": ["system", "user", "tool", "assistant"]},
                    "content": {"type": "string"},
                },
            },
        },
        "training_metadata": {
            "type": "object",
            "required": ["hierarchy_weight", "is_conflict", "has_tool", "conflict_type", "conflict_matrix"],
            "additionalProperties": False,
            "properties": {
                "hierarchy_weight": {"type": "number", "enum": [ALIGNED_WEIGHT, CONFLICT_WEIGHT]},
                "is_conflict": {"type": "boolean"},
                "has_tool": {"type": "boolean"},
                "conflict_type": {"enum": [*CONFLICT_TYPES, None]},
                "conflict_matrix": {
                    "type": "array",
                    "minItems": 3,
                    "maxItems": 3,
                    "items": {
                        "type": "array",
                        "minItems": 3,
                        "maxItems": 3,
                        "items": {"type": "integer", "enum": [0, 1]},
                    },
                },
            },
        },
        "rejected_response": {"type": "string"},
        "rejected_instruction": {"type": "string"},
    },
}

_VALIDATOR = jsonschema.Draft7Validator(RECORD_SCHEMA)


@dataclass(frozen=True)
class SeedCase:
    case_id: str
    seed_instruction: str
    aligned_variants: tuple[str, ...] = ()
    conflict_variants: tuple[tuple[str, str], ...] = ()
    accepted_response: str = ""
    rejected_response: str = ""
    tool_content: Optional[str] = None

    def __post_init__(self):
        if not self.seed_instruction.strip():
            raise ConfigError(f"Seed case {self.case_id}: empty seed instruction")
        if not self.aligned_variants and not self.conflict_variants:
            raise ConfigError(f"Seed case {self.case_id}: needs aligned or conflict variants")
        if not self.accepted_response or not self.rejected_response:
            raise ConfigError(f"Seed case {self.case_id}: accepted and rejected responses must be non-empty")
        for _, conflict_type in self.conflict_variants:
            if conflict_type not in CONFLICT_TYPES:
                raise ConfigError(f"Seed case {self.case_id}: unknown conflict type {conflict_type!r}")

    @classmethod
    def from_dict(cls, payload: dict) -> "SeedCase":
        try:
            return cls(
                case_id=str(payload["case_id"]),
                seed_instruction=payload["seed_instruction"],
                aligned_variants=tuple(payload.get("aligned_variants", [])),
                conflict_variants=tuple(
                    (item["text"], item["conflict_type"]) for item in payload.get("conflict_variants", [])
                ),
                accepted_response=payload["accepted_response"],
                rejected_response=payload["rejected_response"],
                tool_content=payload.get("tool_content"),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"Invalid seed case {payload.get('case_id', '?')!r}: {e}")


@dataclass(frozen=True)
class ValidationResult:
    aligned_ok: tuple[str, ...]
    conflict_ok: tuple[tuple[str, str], ...]
    dropped: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class TrainingMetadata:
    hierarchy_weight: float
    is_conflict: bool
    has_tool: bool
    conflict_type: Optional[str]
    conflict_matrix: tuple[tuple[int, ...], ...] = AUTHORITY_MATRIX

    def to_dict(self) -> dict:
        return {
            "hierarchy_weight": self.hierarchy_weight,
            "is_conflict": self.is_conflict,
            "has_tool": self.has_tool,
            "conflict_type": self.conflict_type,
            "conflict_matrix": [list(row) for row in self.conflict_matrix],
        }


@dataclass(frozen=True)
class TrainingRecord:
    id: str
    messages: tuple[tuple[str, str], ...]
    training_metadata: TrainingMetadata
    rejected_response: Optional[str] = None
    rejected_instruction: Optional[str] = None

    def to_dict(self) -> dict:
        record = {
            "id": self.id,
            "messages": [{"role": role, "content": content} for role, content in self.messages],
            "training_metadata": self.training_metadata.to_dict(),
        }
        if self.rejected_response is not None:
            record["rejected_response"] = self.rejected_response
        if self.rejected_instruction is not None:
            record["rejected_instruction"] = self.rejected_instruction
        return record

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainingRecord":
        validate_record(payload)
        metadata = payload["training_metadata"]
        return cls(
            id=payload["id"],
            messages=tuple((m["role"], m["content"]) for m in payload["messages"]),
            training_metadata=TrainingMetadata(
                hierarchy_weight=float(metadata["hierarchy_weight"]),
                is_conflict=metadata["is_conflict"],
                has_tool=metadata["has_tool"],
                conflict_type=metadata["conflict_type"],
                conflict_matrix=tuple(tuple(row) for row in metadata["conflict_matrix"]),
            ),
            rejected_response=payload.get("rejected_response"),
            rejected_instruction=payload.get("rejected_instruction"),
        )


def validate_record(record: dict) -> None:
    """
    Schema check plus the metadata invariants. Raises RecordSchemaError
    listing every problem found.
    """
    problems = [
        f"{'/'.join(str(p) for p in error.absolute_path) or '<root>'}: {error.message}"
        for error in sorted(_VALIDATOR.iter_errors(record), key=lambda e: list(e.absolute_path))
    ]
    if problems:
        raise RecordSchemaError("; ".join(problems))

    metadata = record["training_metadata"]
    roles = [message["role"] for message in record["messages"]]
    if roles not in (["system", "user", "assistant"], ["system", "user", "tool", "assistant"]):
        problems.append(f"messages must be system, user, optional tool, assistant; got {roles}")
    expected_weight = CONFLICT_WEIGHT if metadata["is_conflict"] else ALIGNED_WEIGHT
    if metadata["hierarchy_weight"] != expected_weight:
        problems.append(f"hierarchy_weight {metadata['hierarchy_weight']} does not match is_conflict")
    if metadata["has_tool"] != ("tool" in roles):
        problems.append("has_tool must be true exactly when a tool message is present")
    if (metadata["conflict_type"] is None) == metadata["is_conflict"]:
        problems.append("conflict_type must be set exactly for conflict records")
    matrix = metadata["conflict_matrix"]
    if any(matrix[a][b] for a in range(3) for b in range(3) if a >= b):
        problems.append("conflict_matrix must be strictly upper-triangular")
    elif tuple(tuple(row) for row in matrix) != AUTHORITY_MATRIX:
        problems.append("conflict_matrix must encode the fixed system > user > tool ordering")
    if problems:
        raise RecordSchemaError("; ".join(problems))


def _contradicts(detector: Detector, a: str, b: str) -> bool:
    return Relation.CONTRADICTION in (detector.detect(a, b), detector.detect(b, a))


def validate_case(case: SeedCase, detector: Detector) -> ValidationResult:
    """
    Keep conflict variants that contradict the seed and aligned variants that
    contradict neither the seed nor any aligned variant already kept.
    """
    dropped = []
    conflict_ok = []
    for text, conflict_type in case.conflict_variants:
        if _contradicts(detector, case.seed_instruction, text):
            conflict_ok.append((text, conflict_type))
        else:
            dropped.append((text, "no contradiction with the seed"))

    aligned_ok: list[str] = []
    for text in case.aligned_variants:
        clash = next((other for other in [case.seed_instruction, *aligned_ok] if _contradicts(detector, other, text)), None)
        if clash is None:
            aligned_ok.append(text)
        else:
            dropped.append((text, f"contradicts {clash!r}"))

    for text, reason in dropped:
        log.warning(f"Case {case.case_id}: dropped variant {text!r} ({reason})")
    return ValidationResult(tuple(aligned_ok), tuple(conflict_ok), tuple(dropped))


def wrap_tool_content(text: str) -> str:
    return f"<tool_output>{text}</tool_output>"


def unwrap_tool_content(text: str) -> str:
    match = _TOOL_WRAPPER.match(text)
    return match.group(1) if match else text


def _messages(slots: dict[str, list[str]], accepted: str) -> tuple[tuple[str, str], ...]:
    messages = [
        ("system", " ".join(slots["system"]) or DEFAULT_SYSTEM_LINE),
        ("user", " ".join(slots["user"]) or DEFAULT_USER_LINE),
    ]
    tool = " ".join(slots["tool"])
    if tool:
        messages.append(("tool", wrap_tool_content(tool)))
    messages.append(("assistant", accepted))
    return tuple(messages)


def assemble_record(case: SeedCase, assignment_seed: int, held_out_pool: Iterable[str] = ()) -> TrainingRecord:
    """
    Place a validated case into a conversation.

    Conflict cases (any conflict variant left) put the seed in the higher
    slot of the chosen variant's conflict type and the variant in the lower
    slot. Aligned cases put the seed in the user slot and spread the
    aligned variants over the slots, the first always landing in system.
    The random choices are drawn from a generator seeded with
    assignment_seed and the case id, so records are reproducible.

    Arguments:
        case: seed case, normally the output of validate_case applied to it.
        assignment_seed: corpus-level seed.
        held_out_pool: artificial conflicting instructions for aligned cases.
    Returns:
        TrainingRecord
    """
    rng = random.Random(f"{assignment_seed}:{case.case_id}")
    slots: dict[str, list[str]] = {slot: [] for slot in SLOTS}
    pool = list(held_out_pool)

    if case.conflict_variants:
        text, conflict_type = rng.choice(case.conflict_variants)
        high, low = _PLACEMENT[conflict_type]
        slots[high].append(case.seed_instruction)
        slots[low].append(text)
        (free,) = set(SLOTS) - {high, low}
        if free != "tool" and case.aligned_variants:
            slots[free].append(rng.choice(case.aligned_variants))
        is_conflict, rejected_instruction = True, None
    else:
        conflict_type = None
        slots["user"].append(case.seed_instruction)
        variants = list(case.aligned_variants)
        rng.shuffle(variants)
        slots["system"].append(variants[0])
        for text in variants[1:]:
            slots[rng.choice(SLOTS)].append(text)
        is_conflict = False
        rejected_instruction = rng.choice(pool) if pool else None

    if case.tool_content:
        slots["tool"].append(case.tool_content)

    messages = _messages(slots, case.accepted_response)
    prefix = "conflict_sample" if is_conflict else "aligned_sample"
    return TrainingRecord(
        id=f"{prefix}_{case.case_id}",
        messages=messages,
        training_metadata=TrainingMetadata(
            hierarchy_weight=CONFLICT_WEIGHT if is_conflict else ALIGNED_WEIGHT,
            is_conflict=is_conflict,
            has_tool=any(role == "tool" for role, _ in messages),
            conflict_type=conflict_type,
        ),
        rejected_response=case.rejected_response,
        rejected_instruction=rejected_instruction,
    )


@dataclass
class CorpusSummary:
    n_conflict: int = 0
    n_aligned: int = 0
    n_skipped: int = 0
    processed: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"n_conflict": self.n_conflict, "n_aligned": self.n_aligned, "n_skipped": self.n_skipped}


def _validated(cases: list[SeedCase], detector: Detector, parallelism: int) -> Iterator[ValidationResult]:
    if parallelism <= 1:
        return (validate_case(case, detector) for case in cases)
    pool = ThreadPoolExecutor(max_workers=parallelism)

    def ordered():
        try:
            # map keeps input order whatever the completion order
            yield from pool.map(lambda case: validate_case(case, detector), cases)
        finally:
            pool.shutdown(wait=True, cancel_futures=True)

    return ordered()


def build_corpus(
    cases: Iterable[SeedCase],
    detector: Detector,
    seed: int,
    held_out_pool: Iterable[str] = (),
    parallelism: int = 1,
) -> tuple[Iterator[TrainingRecord], CorpusSummary]:
    """
    Validate and assemble every case.

    Returns a lazy record stream in input order and a summary that is
    complete once the stream is exhausted. Cases left with no variant after
    validation are skipped and counted in n_skipped.
    """
    cases = list(cases)
    pool = list(held_out_pool)
    summary = CorpusSummary()

    def records():
        for case, result in zip(cases, _validated(cases, detector, parallelism)):
            if not result.aligned_ok and not result.conflict_ok:
                summary.n_skipped += 1
                summary.processed.append(case.case_id)
                log.warning(f"Case {case.case_id}: no variant survived validation, skipped")
                continue
            validated = replace(case, aligned_variants=result.aligned_ok, conflict_variants=result.conflict_ok)
            record = assemble_record(validated, seed, pool)
            if record.training_metadata.is_conflict:
                summary.n_conflict += 1
            else:
                summary.n_aligned += 1
            yield record
            summary.processed.append(case.case_id)
        log.info(f"Corpus built: {summary.n_conflict} conflict, {summary.n_aligned} aligned, {summary.n_skipped} skipped")

    return records(), summary


def load_seed_cases(path: Union[str, Path]) -> list[SeedCase]:
    cases = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}:{number}: {e}")
            cases.append(SeedCase.from_dict(payload))
    log.info(f"Loaded {len(cases)} seed cases from {path}")
    return cases


def load_held_out_pool(path: Union[str, Path]) -> list[str]:
    """One artificial conflicting instruction per line; blank lines and # comments are skipped."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    pool = [line.strip() for line in lines if line.strip() and not line.lstrip().startswith("#")]
    if not pool:
        raise ConfigError(f"Held-out pool {path} is empty")
    return pool


def manifest_path_for(out_path: Union[str, Path]) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.name + ".manifest.json")


def read_manifest(path: Union[str, Path]) -> set[str]:
    path = Path(path)
    if not path.exists():
        return set()
    try:
        return set(json.loads(path.read_text(encoding="utf-8")).get("processed", []))
    except (json.JSONDecodeError, AttributeError) as e:
        raise ConfigError(f"Unreadable manifest {path}: {e}")


def write_corpus(
    cases: list[SeedCase],
    detector: Detector,
    seed: int,
    out_path: Union[str, Path],
    held_out_pool: Iterable[str] = (),
    parallelism: int = 1,
    resume: bool = False,
) -> CorpusSummary:
    """
    Stream records to a JSONL file, flushing after each line, and keep a
    manifest of processed case ids next to it. With resume, cases already in
    the manifest are skipped and new records are appended.
    """
    manifest_path = manifest_path_for(out_path)
    done = read_manifest(manifest_path) if resume else set()
    pending = [case for case in cases if case.case_id not in done]
    if done:
        log.info(f"Resuming: {len(cases) - len(pending)} cases already processed")

    records, summary = build_corpus(pending, detector, seed, held_out_pool, parallelism)
    try:
        with open(out_path, "a" if resume else "w", encoding="utf-8") as f:
            for record in records:
                f.write(record.to_json_line() + "\n")
                f.flush()
    finally:
        manifest = {"seed": seed, "processed": sorted(done | set(summary.processed)), "summary": summary.to_dict()}
        manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return summary


def validate_dataset(path: Union[str, Path]) -> list[tuple[int, str]]:
    """(line number, problem) for every invalid line of a record JSONL file."""
    errors = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                validate_record(json.loads(line))
            except json.JSONDecodeError as e:
                errors.append((number, f"JSON error: {e}"))
            except RecordSchemaError as e:
                errors.append((number, str(e)))
    return errors
