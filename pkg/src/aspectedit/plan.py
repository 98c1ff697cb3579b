"""Prompt-pair edit planning: tokenization, LCS diffing, and annotations.

The diff aligns source and target token lists with a longest-common-
subsequence walk.  Aligned-equal runs become no-change actions, aligned
gaps on both sides become swaps, target-only gaps become adds, and
source-only gaps become deletes.  Adjacent changed tokens merge into one
multi-token aspect.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, replace

from .errors import (
    CompositionError,
    InvalidArgumentError,
    SchemaError,
    ValidationError,
)

SWAP = "swap"
ADD = "add"
DELETE = "delete"
NONE = "none"

CATEGORIES = (
    "change-object",
    "change-content",
    "change-pose",
    "change-color",
    "change-material",
    "change-background",
    "change-style",
    "add-object",
    "delete-object",
)

PLACEHOLDER_CATEGORY = "change-object"


def tokenize(prompt: str) -> list[str]:
    """Whitespace split with trailing punctuation stripped; casing preserved."""
    out = []
    for raw in prompt.split():
        tok = raw.rstrip(string.punctuation)
        if tok:
            out.append(tok)
    return out


@dataclass(frozen=True)
class Aspect:
    """A half-open token span [start, stop) in one prompt."""

    start: int
    stop: int
    text: str

    def __post_init__(self):
        if self.stop <= self.start or self.start < 0:
            raise ValidationError(f"empty or negative aspect span [{self.start}, {self.stop})")

    @property
    def span(self):
        return (self.start, self.stop)


@dataclass(frozen=True)
class EditAction:
    action: str
    source_aspect: Aspect | None = None
    target_aspect: Aspect | None = None
    category: str = PLACEHOLDER_CATEGORY
    category_authoritative: bool = False
    # for adds: the insertion point in the source token list
    insert_at: int | None = None

    def __post_init__(self):
        if self.action not in (SWAP, ADD, DELETE, NONE):
            raise ValidationError(f"unknown action {self.action!r}")
        if self.category not in CATEGORIES:
            raise ValidationError(f"unknown category {self.category!r}")
        if self.action == SWAP and (self.source_aspect is None or self.target_aspect is None):
            raise ValidationError("swap requires both source and target aspects")
        if self.action == ADD and (self.target_aspect is None or self.source_aspect is not None):
            raise ValidationError("add requires a target aspect only")
        if self.action == DELETE and (self.source_aspect is None or self.target_aspect is not None):
            raise ValidationError("delete requires a source aspect only")
        if self.action == NONE:
            if self.source_aspect is None or self.target_aspect is None:
                raise ValidationError("no-change requires both aspects")
            if self.source_aspect.text.lower() != self.target_aspect.text.lower():
                raise ValidationError("no-change aspects must have equal text")


@dataclass(frozen=True)
class EditPlan:
    source_prompt: str
    target_prompt: str
    actions: tuple
    aspect_mapping: tuple = ()

    @property
    def source_tokens(self):
        return tokenize(self.source_prompt)

    @property
    def target_tokens(self):
        return tokenize(self.target_prompt)

    def edited_actions(self):
        return [a for a in self.actions if a.action != NONE]


def _lcs_pairs(a: list[str], b: list[str]) -> list[tuple[int, int]]:
    """Index pairs of a longest common subsequence (dynamic programming)."""
    m, n = len(a), len(b)
    c = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            if a[i - 1] == b[j - 1]:
                c[i][j] = c[i - 1][j - 1] + 1
            else:
                c[i][j] = max(c[i][j - 1], c[i - 1][j])
    pairs = []
    i, j = m, n
    while i > 0 and j > 0:
        if a[i - 1] == b[j - 1]:
            pairs.append((i - 1, j - 1))
            i -= 1
            j -= 1
        elif c[i][j - 1] >= c[i - 1][j]:
            j -= 1
        else:
            i -= 1
    pairs.reverse()
    return pairs


def _aspect(tokens: list[str], start: int, stop: int) -> Aspect:
    return Aspect(start=start, stop=stop, text=" ".join(tokens[start:stop]))


def infer_actions(source_prompt: str, target_prompt: str) -> list[EditAction]:
    """Diff two prompts into a covering list of edit actions.

    Every token of both prompts is covered by exactly one action.  Inferred
    actions carry the placeholder category (annotations are the only
    authoritative category source).
    """
    if not source_prompt.strip() or not target_prompt.strip():
        raise InvalidArgumentError("prompts must be non-empty")
    src = tokenize(source_prompt)
    tgt = tokenize(target_prompt)
    src_low = [t.lower() for t in src]
    tgt_low = [t.lower() for t in tgt]
    pairs = _lcs_pairs(src_low, tgt_low)

    actions: list[EditAction] = []

    def close_gap(si, sj, ti, tj):
        """Emit the action for the unmatched region src[si:sj) x tgt[ti:tj)."""
        if sj > si and tj > ti:
            actions.append(
                EditAction(
                    action=SWAP,
                    source_aspect=_aspect(src, si, sj),
                    target_aspect=_aspect(tgt, ti, tj),
                )
            )
        elif tj > ti:
            actions.append(
                EditAction(action=ADD, target_aspect=_aspect(tgt, ti, tj), insert_at=si)
            )
        elif sj > si:
            actions.append(EditAction(action=DELETE, source_aspect=_aspect(src, si, sj)))

    si = ti = 0
    k = 0
    while k < len(pairs):
        ps, pt = pairs[k]
        close_gap(si, ps, ti, pt)
        # merge the maximal run of consecutive matches into one no-change span
        run = k
        while (
            run + 1 < len(pairs)
            and pairs[run + 1][0] == pairs[run][0] + 1
            and pairs[run + 1][1] == pairs[run][1] + 1
        ):
            run += 1
        qs, qt = pairs[run]
        actions.append(
            EditAction(
                action=NONE,
                source_aspect=_aspect(src, ps, qs + 1),
                target_aspect=_aspect(tgt, pt, qt + 1),
            )
        )
        si, ti = qs + 1, qt + 1
        k = run + 1
    close_gap(si, len(src), ti, len(tgt))
    return actions


def infer_plan(source_prompt: str, target_prompt: str) -> EditPlan:
    return EditPlan(
        source_prompt=source_prompt,
        target_prompt=target_prompt,
        actions=tuple(infer_actions(source_prompt, target_prompt)),
    )


def apply_actions(source_tokens: list[str], actions) -> list[str]:
    """Apply a covering action list to the source token list.

    Returns the reconstructed target token list.  Actions are applied in
    source order; swaps substitute, adds insert, deletes remove.
    """
    keyed = []
    for a in actions:
        if a.action == ADD:
            if a.insert_at is None:
                raise CompositionError("add action has no insertion point")
            keyed.append((a.insert_at, 0, a))
        else:
            keyed.append((a.source_aspect.start, 1, a))
    keyed.sort(key=lambda kv: (kv[0], kv[1]))

    out: list[str] = []
    cursor = 0
    for pos, _, a in keyed:
        if pos < cursor or pos > len(source_tokens):
            raise CompositionError(f"action position {pos} drifted outside the prompt")
        out.extend(source_tokens[cursor:pos])
        cursor = pos
        if a.action == ADD:
            out.extend(tokenize(a.target_aspect.text))
        elif a.action == DELETE:
            cursor = a.source_aspect.stop
        elif a.action == SWAP:
            out.extend(tokenize(a.target_aspect.text))
            cursor = a.source_aspect.stop
        else:  # no-change
            out.extend(source_tokens[pos:a.source_aspect.stop])
            cursor = a.source_aspect.stop
    out.extend(source_tokens[cursor:])
    return out


def apply_plan(plan: EditPlan, skip=()) -> list[str]:
    """Reconstruct the target tokens, optionally skipping some actions.

    Skipped non-trivial actions leave their source region untouched, which
    is how per-aspect reverted prompts are built for the accuracy metric.
    """
    actions = []
    for a in plan.actions:
        if a in skip:
            if a.action == SWAP:
                a = replace(a, action=NONE, target_aspect=a.source_aspect)
            elif a.action in (ADD, DELETE):
                continue  # skipping re-inserts/removes nothing
        actions.append(a)
    return apply_actions(plan.source_tokens, actions)


def validate_plan(actions, source_prompt: str, target_prompt: str) -> list[str]:
    """Report invariant violations; an empty report means a consistent plan."""
    report: list[str] = []
    n_src = len(tokenize(source_prompt))
    n_tgt = len(tokenize(target_prompt))
    src_cover = [0] * n_src
    tgt_cover = [0] * n_tgt
    spans = []
    for idx, a in enumerate(actions):
        name = f"action[{idx}]({a.action})"
        if a.action == SWAP and (a.source_aspect is None or a.target_aspect is None):
            report.append(f"{name}: swap missing an aspect")
            continue
        if a.source_aspect is not None:
            s = a.source_aspect
            if s.stop > n_src:
                report.append(f"{name}: source span {s.span} outside prompt")
            else:
                for i in range(s.start, s.stop):
                    src_cover[i] += 1
                spans.append((name, s.span))
        if a.target_aspect is not None and a.action != NONE:
            t = a.target_aspect
            if t.stop > n_tgt:
                report.append(f"{name}: target span {t.span} outside prompt")
            else:
                for i in range(t.start, t.stop):
                    tgt_cover[i] += 1
        elif a.action == NONE and a.target_aspect is not None:
            t = a.target_aspect
            if t.stop > n_tgt:
                report.append(f"{name}: target span {t.span} outside prompt")
            else:
                for i in range(t.start, t.stop):
                    tgt_cover[i] += 1
    for i, c in enumerate(src_cover):
        if c == 0:
            report.append(f"source token {i} not covered by any action")
    for (na, sa) in [(n, s) for n, s in spans]:
        for (nb, sb) in spans:
            if na < nb and sa[0] < sb[1] and sb[0] < sa[1]:
                report.append(f"overlapping source spans: {na}{sa} and {nb}{sb}")
    for i, c in enumerate(tgt_cover):
        if c == 0:
            report.append(f"target token {i} not covered by any action")
    return report


# ---------------------------------------------------------------------------
# Annotation documents
# ---------------------------------------------------------------------------

ANNOTATION_ACTIONS = {"swap": SWAP, "add": ADD, "delete": DELETE}


@dataclass(frozen=True)
class AnnotationAction:
    position: tuple
    type: str
    action: str


@dataclass(frozen=True)
class AnnotationRecord:
    image_path: str
    source_prompt: str
    target_prompt: str
    edit_actions: tuple
    aspect_mapping: tuple


def parse_annotation(document: str) -> AnnotationRecord:
    """Parse and validate one annotation document (JSON text)."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"annotation is not valid JSON: {exc}") from exc
    for key in ("image_path", "source_prompt", "target_prompt", "edit_actions", "aspect_mapping"):
        if key not in doc:
            raise SchemaError(f"annotation missing field {key!r}")
    actions = []
    for i, item in enumerate(doc["edit_actions"]):
        for key in ("position", "type", "action"):
            if key not in item:
                raise SchemaError(f"edit_actions[{i}] missing field {key!r}")
        if item["type"] not in CATEGORIES:
            raise SchemaError(f"edit_actions[{i}] has unknown type {item['type']!r}")
        if item["action"] not in ANNOTATION_ACTIONS:
            raise SchemaError(f"edit_actions[{i}] has unknown action {item['action']!r}")
        actions.append(
            AnnotationAction(
                position=tuple(int(p) for p in item["position"]),
                type=item["type"],
                action=item["action"],
            )
        )
    record = AnnotationRecord(
        image_path=str(doc["image_path"]),
        source_prompt=str(doc["source_prompt"]),
        target_prompt=str(doc["target_prompt"]),
        edit_actions=tuple(actions),
        aspect_mapping=tuple(tuple(int(x) for x in pair) for pair in doc["aspect_mapping"]),
    )
    n_src = len(tokenize(record.source_prompt))
    n_actions = len(record.edit_actions)
    for i, a in enumerate(record.edit_actions):
        for p in a.position:
            # adds index the insertion point, which may equal the prompt length
            limit = n_src if a.action == "add" else n_src - 1
            if not 0 <= p <= limit:
                raise ValidationError(f"edit_actions[{i}] position {p} outside source prompt")
    for pair in record.aspect_mapping:
        if len(pair) != 2:
            raise ValidationError(f"aspect_mapping entry {pair} is not a 2-element pair")
        for idx in pair:
            if not 0 <= idx < n_actions:
                raise ValidationError(f"aspect_mapping index {idx} references no declared aspect")
    return record


def serialize_annotation(record: AnnotationRecord) -> str:
    doc = {
        "image_path": record.image_path,
        "source_prompt": record.source_prompt,
        "target_prompt": record.target_prompt,
        "edit_actions": [
            {"position": list(a.position), "type": a.type, "action": a.action}
            for a in record.edit_actions
        ],
        "aspect_mapping": [list(p) for p in record.aspect_mapping],
    }
    return json.dumps(doc, sort_keys=True)


def plan_from_annotation(record: AnnotationRecord) -> EditPlan:
    """Build an edit plan whose categories come from the annotation.

    Spans are aligned by the prompt diff; each annotated action stamps its
    category onto the inferred action covering its first position.
    """
    inferred = infer_actions(record.source_prompt, record.target_prompt)
    stamped = list(inferred)
    for ann in record.edit_actions:
        pos = ann.position[0] if ann.position else None
        for i, act in enumerate(stamped):
            if act.action == NONE:
                continue
            anchor = act.source_aspect.start if act.source_aspect else act.insert_at
            covers = (
                act.source_aspect is not None
                and act.source_aspect.start <= pos < act.source_aspect.stop
            ) or (act.source_aspect is None and anchor == pos)
            if pos is not None and covers:
                stamped[i] = replace(act, category=ann.type, category_authoritative=True)
                break
    return EditPlan(
        source_prompt=record.source_prompt,
        target_prompt=record.target_prompt,
        actions=tuple(stamped),
        aspect_mapping=record.aspect_mapping,
    )
