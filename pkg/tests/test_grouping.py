import numpy as np
import pytest

from aspectedit.attention import BinaryMask, miou
from aspectedit.errors import EmptyPlanError, MissingMaskError
from aspectedit.grouping import (
    GLOBAL,
    NON_RIGID,
    RIGID,
    ClassifiedAction,
    allocate_branches,
    classify_edit,
    classify_plan,
    compose_conditioning,
    group_edits,
    group_report,
    plan_branches,
)
from aspectedit.plan import NONE, SWAP, infer_plan

GRID = (8, 8)


def block_mask(rows, cols):
    grid = np.zeros(GRID)
    grid[rows[0]:rows[1], cols[0]:cols[1]] = 1.0
    return BinaryMask(grid=grid)


def cells_mask(cells):
    grid = np.zeros(GRID)
    for r, c in cells:
        grid[r, c] = 1.0
    return BinaryMask(grid=grid)


def swap_action(plan=None):
    plan = plan or infer_plan("a cat", "a dog")
    return next(a for a in plan.actions if a.action == SWAP)


def add_action():
    plan = infer_plan("a cat", "a small cat")
    return next(a for a in plan.actions if a.action == "add")


def delete_action():
    plan = infer_plan("a small cat", "a cat")
    return next(a for a in plan.actions if a.action == "delete")


class TestClassifyEdit:
    def test_global_at_coverage_boundary(self):
        # target matte 8, union matte 10: 8 >= 0.8 * 10 holds with equality
        target = cells_mask([(0, c) for c in range(8)])
        other = cells_mask([(0, c) for c in range(8)] + [(1, 0), (1, 1)])
        out = classify_edit(
            swap_action(), target, target, [target, other], lam=0.9, beta=0.8
        )
        assert out == GLOBAL

    def test_local_just_below_coverage_boundary(self):
        # target matte 7 < 0.8 * union matte 10
        target = cells_mask([(0, c) for c in range(7)])
        other = cells_mask([(0, c) for c in range(8)] + [(1, 0), (1, 1)])
        out = classify_edit(
            swap_action(), target, target, [target, other], lam=0.9, beta=0.8
        )
        assert out == RIGID  # identical src/tgt masks: miou 1.0 >= lam

    def test_rigid_at_overlap_boundary(self):
        # src 10 cells, tgt the first 9: miou = 9/10 = lam exactly
        src = cells_mask([(2, c) for c in range(8)] + [(3, 0), (3, 1)])
        tgt = cells_mask([(2, c) for c in range(8)] + [(3, 0)])
        big = block_mask((4, 8), (0, 8))  # keeps the union large, blocks GLOBAL
        assert miou(src, tgt) == pytest.approx(0.9)
        assert classify_edit(swap_action(), src, tgt, [tgt, big]) == RIGID

    def test_non_rigid_below_overlap_boundary(self):
        # miou = 8/10 < 0.9
        src = cells_mask([(2, c) for c in range(8)] + [(3, 0), (3, 1)])
        tgt = cells_mask([(2, c) for c in range(8)])
        big = block_mask((4, 8), (0, 8))
        assert classify_edit(swap_action(), src, tgt, [tgt, big]) == NON_RIGID

    def test_add_is_non_rigid_unless_global(self):
        tgt = cells_mask([(0, 0), (0, 1)])
        big = block_mask((4, 8), (0, 8))
        assert classify_edit(add_action(), None, tgt, [tgt, big]) == NON_RIGID

    def test_add_covering_everything_is_global(self):
        tgt = block_mask((0, 8), (0, 8))
        assert classify_edit(add_action(), None, tgt, [tgt]) == GLOBAL

    def test_delete_is_non_rigid(self):
        src = block_mask((0, 8), (0, 8))  # size is irrelevant for deletes
        assert classify_edit(delete_action(), src, None, [block_mask((0, 2), (0, 2))]) == NON_RIGID

    def test_delete_without_source_mask_raises(self):
        with pytest.raises(MissingMaskError):
            classify_edit(delete_action(), None, None, [block_mask((0, 2), (0, 2))])

    def test_swap_without_target_mask_raises(self):
        with pytest.raises(MissingMaskError):
            classify_edit(swap_action(), block_mask((0, 2), (0, 2)), None, [])


class TestClassifyPlan:
    def test_only_edited_actions_classified(self):
        plan = infer_plan("a red cat", "a blue cat")
        swap_idx = next(
            i for i, a in enumerate(plan.actions) if a.action == SWAP
        )
        mask = block_mask((0, 2), (0, 2))
        out = classify_plan(plan, {swap_idx: (mask, mask)})
        assert len(out) == 1
        assert out[0].edit_type == GLOBAL  # single mask covers its whole union
        assert all(a.action != NONE for a in (ca.action for ca in out))

    def test_group_mask_prefers_target_side(self):
        src, tgt = block_mask((0, 2), (0, 2)), block_mask((0, 2), (1, 3))
        ca = ClassifiedAction(
            action=swap_action(), edit_type=RIGID, source_mask=src, target_mask=tgt
        )
        assert ca.group_mask is tgt
        ca_del = ClassifiedAction(
            action=delete_action(), edit_type=NON_RIGID, source_mask=src, target_mask=None
        )
        assert ca_del.group_mask is src


def classified(edit_type, mask, action=None):
    return ClassifiedAction(
        action=action or swap_action(),
        edit_type=edit_type,
        source_mask=mask,
        target_mask=mask,
    )


class TestGroupEdits:
    def test_identical_masks_merge(self):
        m = block_mask((0, 2), (0, 2))
        out = group_edits([classified(RIGID, m), classified(RIGID, m)])
        assert out.N == 1
        assert len(out.groups[0].members) == 2

    def test_disjoint_masks_split(self):
        out = group_edits(
            [
                classified(RIGID, block_mask((0, 2), (0, 2))),
                classified(RIGID, block_mask((4, 6), (4, 6))),
            ]
        )
        assert out.N == 2

    def test_same_mask_different_type_never_merges(self):
        m = block_mask((0, 2), (0, 2))
        out = group_edits([classified(RIGID, m), classified(NON_RIGID, m)])
        assert out.N == 2

    def test_greedy_joins_first_matching_group(self):
        m = block_mask((0, 2), (0, 2))
        other = block_mask((4, 6), (4, 6))
        out = group_edits(
            [classified(RIGID, m), classified(RIGID, other), classified(RIGID, m)]
        )
        assert out.N == 2
        assert len(out.groups[0].members) == 2

    def test_union_mask_grows_with_members(self):
        # second mask adds one cell to a 10-cell union: miou 10/11 >= 0.9
        a = cells_mask([(0, c) for c in range(8)] + [(1, 0), (1, 1)])
        b = cells_mask([(0, c) for c in range(8)] + [(1, 0), (1, 1), (1, 2)])
        out = group_edits([classified(RIGID, a), classified(RIGID, b)])
        assert out.N == 1
        assert out.groups[0].union_mask.count() == 11


class TestAllocateBranches:
    def test_type_order_and_auxiliary_flags(self):
        specs = allocate_branches(
            group_edits(
                [
                    classified(GLOBAL, block_mask((0, 8), (0, 8))),
                    classified(RIGID, block_mask((0, 2), (0, 2))),
                    classified(NON_RIGID, block_mask((4, 6), (4, 6))),
                    classified(RIGID, block_mask((6, 8), (6, 8))),
                ]
            ),
            infer_plan("a cat", "a dog"),
        )
        assert [b.group.edit_type for b in specs] == [NON_RIGID, RIGID, RIGID, GLOBAL]
        assert [b.index for b in specs] == [1, 2, 3, 4]
        assert [b.auxiliary for b in specs] == [False, False, True, False]

    def test_empty_assignment_rejected(self):
        from aspectedit.grouping import GroupAssignment

        with pytest.raises(EmptyPlanError):
            allocate_branches(GroupAssignment(groups=()), infer_plan("a cat", "a dog"))


class TestComposeConditioning:
    def test_prompts_accumulate_edits(self):
        plan = infer_plan("the alpha and beta", "the gamma and delta")
        swaps = [
            (i, a) for i, a in enumerate(plan.actions) if a.action == SWAP
        ]
        masks = {
            swaps[0][0]: (block_mask((0, 2), (0, 2)), block_mask((0, 2), (0, 2))),
            swaps[1][0]: (block_mask((4, 6), (4, 6)), block_mask((4, 6), (4, 6))),
        }
        branches = plan_branches(plan, masks, beta=2.0)  # beta > 1 forces local typing
        assert len(branches) == 2
        assert branches[0].conditioning.prompt == "the gamma and beta"
        assert branches[1].conditioning.prompt == "the gamma and delta"

    def test_last_branch_matches_target_prompt(self):
        plan = infer_plan("a red house near trees", "a blue cottage near flowers")
        edited = plan.edited_actions()
        masks = {}
        blocks = [((0, 2), (0, 2)), ((3, 5), (3, 5)), ((6, 8), (6, 8))]
        for (i, a), blk in zip(
            ((i, a) for i, a in enumerate(plan.actions) if a.action != NONE), blocks
        ):
            masks[i] = (block_mask(*blk), block_mask(*blk))
        branches = plan_branches(plan, masks, beta=2.0)
        assert branches[-1].conditioning.prompt == plan.target_prompt
        assert len(edited) >= 2

    def test_label_bindings_propagate(self):
        plan = infer_plan("the alpha", "the gamma")
        i = next(i for i, a in enumerate(plan.actions) if a.action == SWAP)
        m = block_mask((0, 2), (0, 2))
        branches = plan_branches(plan, {i: (m, m)}, label_bindings={"gamma": "mode-g"})
        assert branches[0].conditioning.label_bindings == {"gamma": "mode-g"}


class TestNoOpPlan:
    def test_identical_prompts_yield_pass_through_branch(self):
        plan = infer_plan("a cat on a wall", "a cat on a wall")
        branches = plan_branches(plan, {}, grid_shape=GRID)
        assert len(branches) == 1
        b = branches[0]
        assert b.group.edit_type == GLOBAL
        assert b.group.union_mask.count() == 0
        assert b.conditioning.prompt == "a cat on a wall"
        assert not b.auxiliary


class TestGroupReport:
    def test_report_lists_types_and_overlaps(self):
        m = block_mask((0, 2), (0, 2))
        report = group_report(group_edits([classified(RIGID, m), classified(RIGID, m)]))
        assert "type=rigid-local" in report
        assert "miou[0,1]=1.000000" in report
        assert "matte=" in report
