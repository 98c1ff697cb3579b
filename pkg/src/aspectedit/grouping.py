"""Edit typing, greedy aspect grouping, and branch allocation.

Each edit action is typed as global, rigid-local, or non-rigid-local from
its attention masks; actions of one type are merged greedily by mask
overlap into groups; groups become ordered branches (non-rigid first,
then rigid, then global) whose conditioning accumulates the edits of all
earlier branches.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .attention import (
    BinaryMask,
    alpha_matte,
    binarize,
    mask_union,
    miou,
)
from .errors import EmptyPlanError, MissingMaskError
from .plan import ADD, DELETE, NONE, EditPlan, apply_plan
from .predictors import Conditioning

GLOBAL = "global"
RIGID = "rigid-local"
NON_RIGID = "non-rigid-local"

DEFAULT_LAMBDA = 0.9
DEFAULT_BETA = 0.8


@dataclass(frozen=True)
class ClassifiedAction:
    action: object            # EditAction
    edit_type: str
    source_mask: BinaryMask | None
    target_mask: BinaryMask | None

    @property
    def group_mask(self) -> BinaryMask:
        """The mask grouping reasons about (target side, source for deletes)."""
        return self.target_mask if self.target_mask is not None else self.source_mask


@dataclass(frozen=True)
class Group:
    edit_type: str
    members: tuple            # of ClassifiedAction
    union_mask: BinaryMask


@dataclass(frozen=True)
class GroupAssignment:
    groups: tuple

    @property
    def N(self) -> int:
        return len(self.groups)


@dataclass(frozen=True)
class BranchSpec:
    index: int
    group: Group
    auxiliary: bool
    conditioning: Conditioning | None = None


def classify_edit(
    action,
    source_mask: BinaryMask | None,
    target_mask: BinaryMask | None,
    all_target_masks,
    lam: float = DEFAULT_LAMBDA,
    beta: float = DEFAULT_BETA,
) -> str:
    """Type one edit action from its masks.

    Global when the target mask covers at least ``beta`` of the union of
    all target masks; otherwise rigid when source and target masks overlap
    at least ``lam``, else non-rigid.  Deletes (no target mask) and adds
    (no source mask) change layout and are non-rigid by definition.
    """
    if action.action == DELETE:
        if source_mask is None:
            raise MissingMaskError(f"delete action {action.source_aspect.text!r} has no source mask")
        return NON_RIGID
    if target_mask is None:
        raise MissingMaskError(f"action {action.action!r} has no target mask")
    union = mask_union(*all_target_masks)
    if alpha_matte(target_mask) >= beta * alpha_matte(union):
        return GLOBAL
    if action.action == ADD:
        return NON_RIGID
    if source_mask is None:
        raise MissingMaskError(f"swap of {action.source_aspect.text!r} has no source mask")
    return NON_RIGID if miou(source_mask, target_mask) < lam else RIGID


def classify_plan(plan: EditPlan, masks, lam=DEFAULT_LAMBDA, beta=DEFAULT_BETA):
    """Classify every edited action of a plan.

    ``masks`` maps each edited action's index in ``plan.actions`` to a
    (source_mask, target_mask) pair (either side may be None).
    """
    edited = [(i, a) for i, a in enumerate(plan.actions) if a.action != NONE]
    all_targets = [
        masks[i][1] for i, _ in edited if masks.get(i, (None, None))[1] is not None
    ]
    out = []
    for i, a in edited:
        src_m, tgt_m = masks.get(i, (None, None))
        out.append(
            ClassifiedAction(
                action=a,
                edit_type=classify_edit(a, src_m, tgt_m, all_targets, lam, beta),
                source_mask=src_m,
                target_mask=tgt_m,
            )
        )
    return out


def group_edits(classified, lam: float = DEFAULT_LAMBDA) -> GroupAssignment:
    """Greedy sequential grouping within each edit type.

    An action joins the first existing group of its type whose union mask
    overlaps its own mask with mIoU >= lam, else it founds a new group.
    No transitive closure: order matters and is the plan's action order.
    """
    groups: list[Group] = []
    for ca in classified:
        placed = False
        for gi, g in enumerate(groups):
            if g.edit_type != ca.edit_type:
                continue
            if miou(g.union_mask, ca.group_mask) >= lam:
                groups[gi] = Group(
                    edit_type=g.edit_type,
                    members=g.members + (ca,),
                    union_mask=mask_union(g.union_mask, ca.group_mask),
                )
                placed = True
                break
        if not placed:
            groups.append(
                Group(edit_type=ca.edit_type, members=(ca,), union_mask=ca.group_mask)
            )
    return GroupAssignment(groups=tuple(groups))


def allocate_branches(assignment: GroupAssignment, plan: EditPlan) -> list[BranchSpec]:
    """Order groups into branches: non-rigid, then rigid, then global.

    The first group of each local type gets the dedicated branch; further
    groups of that type are auxiliary branches.
    """
    if assignment.N == 0:
        raise EmptyPlanError("no edit groups to allocate")
    ordered = (
        [g for g in assignment.groups if g.edit_type == NON_RIGID]
        + [g for g in assignment.groups if g.edit_type == RIGID]
        + [g for g in assignment.groups if g.edit_type == GLOBAL]
    )
    branches = []
    seen_local = set()
    for n, g in enumerate(ordered, start=1):
        aux = g.edit_type in (NON_RIGID, RIGID) and g.edit_type in seen_local
        if g.edit_type in (NON_RIGID, RIGID):
            seen_local.add(g.edit_type)
        branches.append(BranchSpec(index=n, group=g, auxiliary=aux))
    return branches


def compose_conditioning(
    plan: EditPlan, branches, label_bindings: dict | None = None
) -> list[BranchSpec]:
    """Fill each branch's conditioning with the edits of branches <= n applied.

    The last branch's conditioning equals the full target prompt; the
    source branch (index 0, not in the list) keeps the source prompt.
    """
    edited = plan.edited_actions()
    out = []
    applied: list = []
    for spec in branches:
        applied.extend(ca.action for ca in spec.group.members)
        skip = [a for a in edited if a not in applied]
        prompt = " ".join(apply_plan(plan, skip=skip))
        out.append(
            replace(spec, conditioning=Conditioning.from_prompt(prompt, label_bindings))
        )
    return out


def plan_branches(
    plan: EditPlan,
    masks,
    lam: float = DEFAULT_LAMBDA,
    beta: float = DEFAULT_BETA,
    label_bindings: dict | None = None,
    grid_shape=(1, 1),
) -> list[BranchSpec]:
    """Classify, group, allocate, and condition in one call.

    A plan with no edited actions gets a single pass-through branch (global
    type, empty mask) conditioned on the target prompt, so a no-edit run
    is still well-formed.
    """
    classified = classify_plan(plan, masks, lam, beta)
    if not classified:
        noop = Group(
            edit_type=GLOBAL,
            members=(),
            union_mask=binarize(np.zeros(grid_shape)),
        )
        branch = BranchSpec(
            index=1,
            group=noop,
            auxiliary=False,
            conditioning=Conditioning.from_prompt(plan.target_prompt, label_bindings),
        )
        return [branch]
    branches = allocate_branches(group_edits(classified, lam), plan)
    return compose_conditioning(plan, branches, label_bindings)


def group_report(assignment: GroupAssignment) -> str:
    """Human/machine-readable summary: type, member texts, matte, mIoUs."""
    lines = []
    for gi, g in enumerate(assignment.groups):
        texts = []
        for ca in g.members:
            a = ca.action
            aspect = a.target_aspect if a.target_aspect is not None else a.source_aspect
            texts.append(aspect.text)
        lines.append(f"group {gi}: type={g.edit_type} members={texts!r}")
        lines.append(f"group {gi}: matte={alpha_matte(g.union_mask):.6f}")
        for i in range(len(g.members)):
            for j in range(i + 1, len(g.members)):
                v = miou(g.members[i].group_mask, g.members[j].group_mask)
                lines.append(f"group {gi}: miou[{i},{j}]={v:.6f}")
    return "\n".join(lines) + "\n"
