import numpy as np
import pytest

from creflow.errors import (
    MissingAttribute,
    SpecValidationError,
    UnknownEvaluator,
)
from creflow.ltlf import Atom
from creflow.trace import (
    ClauseDecl,
    EntityDecl,
    EntityState,
    TaskSpec,
    Trace,
    build_atlas,
    eval_predicate,
    make_condition,
    make_predicate_decl,
)
from creflow.ltlf import parse_formula


def state(x, y, radius=0.5, closed=None, flags=None):
    return EntityState(
        position=np.array([x, y], dtype=float),
        radius=radius,
        gripper_closed=closed,
        attribute_flags=flags or {},
    )


def two_entity_trace(arm_xy, cup_xy, closed, horizon=8, grid=(16, 16)):
    frames = []
    for t in range(horizon):
        frames.append(
            {
                "arm": state(*arm_xy[t], closed=closed[t]),
                "cup": state(*cup_xy[t]),
            }
        )
    return Trace(horizon=horizon, frames=frames, grid=grid)


ENTITIES = {
    "arm": EntityDecl("arm", "arm"),
    "cup": EntityDecl("cup", "object"),
    "box": EntityDecl("box", "container", half_extents=(1.5, 1.0)),
}


class TestPredicates:
    def test_near_coincident(self):
        xy = [(3.0, 3.0)] * 8
        trace = two_entity_trace(xy, xy, [False] * 8)
        decl = make_predicate_decl("near", 2, "near", {"distance": 1.0})
        stream = eval_predicate(decl, trace, Atom("near", ("arm", "cup")))
        assert stream.all()

    def test_near_symmetric(self):
        rng = np.random.default_rng(0)
        arm = rng.uniform(0, 10, (8, 2))
        cup = rng.uniform(0, 10, (8, 2))
        trace = two_entity_trace(arm, cup, [False] * 8)
        decl = make_predicate_decl("near", 2, "near", {"distance": 4.0})
        ab = eval_predicate(decl, trace, Atom("near", ("arm", "cup")))
        ba = eval_predicate(decl, trace, Atom("near", ("cup", "arm")))
        assert np.array_equal(ab, ba)

    def test_grasp_conjunction(self):
        xy = [(2.0, 2.0)] * 8
        closed = [False, False, True, True, True, True, False, False]
        trace = two_entity_trace(xy, xy, closed)
        decl = make_predicate_decl("grasp", 2, "grasp", {"distance": 1.0})
        stream = eval_predicate(decl, trace, Atom("grasp", ("arm", "cup")))
        assert stream.astype(int).tolist() == [0, 0, 1, 1, 1, 1, 0, 0]

    def test_grasp_implies_near(self):
        rng = np.random.default_rng(1)
        arm = rng.uniform(0, 6, (10, 2))
        cup = rng.uniform(0, 6, (10, 2))
        closed = rng.integers(0, 2, 10).astype(bool).tolist()
        trace = two_entity_trace(arm, cup, closed, horizon=10)
        near = make_predicate_decl("near", 2, "near", {"distance": 2.5})
        grasp = make_predicate_decl("grasp", 2, "grasp", {"distance": 2.5})
        n = eval_predicate(near, trace, Atom("near", ("arm", "cup")))
        g = eval_predicate(grasp, trace, Atom("grasp", ("arm", "cup")))
        assert not np.any(g & ~n)

    def test_grasp_needs_gripper_state(self):
        xy = [(2.0, 2.0)] * 4
        trace = Trace(4, [{"a": state(1, 1), "b": state(1, 1)} for _ in range(4)], (8, 8))
        decl = make_predicate_decl("grasp", 2, "grasp", {"distance": 1.0})
        with pytest.raises(MissingAttribute):
            eval_predicate(decl, trace, Atom("grasp", ("a", "b")))

    def test_inside_box(self):
        frames = []
        for t in range(4):
            frames.append(
                {
                    "cup": state(5.0 + t, 5.0),
                    "box": state(6.0, 5.0),
                }
            )
        trace = Trace(4, frames, (16, 16))
        decl = make_predicate_decl("inside", 2, "inside", {})
        stream = eval_predicate(decl, trace, Atom("inside", ("cup", "box")), ENTITIES)
        # |dx| <= 1.5 at t=0,1,2 (dx = -1, 0, 1); t=3 gives dx=2
        assert stream.astype(int).tolist() == [1, 1, 1, 0]

    def test_inside_all_false_when_far(self):
        frames = [{"cup": state(0, 0), "box": state(10, 10)} for _ in range(4)]
        trace = Trace(4, frames, (16, 16))
        decl = make_predicate_decl("inside", 2, "inside", {})
        stream = eval_predicate(decl, trace, Atom("inside", ("cup", "box")), ENTITIES)
        assert not stream.any()

    def test_flag_and_missing_flag(self):
        frames = [{"cup": state(0, 0, flags={"full": t >= 2})} for t in range(4)]
        trace = Trace(4, frames, (8, 8))
        decl = make_predicate_decl("is_full", 1, "flag", {"flag": "full"})
        stream = eval_predicate(decl, trace, Atom("is_full", ("cup",)))
        assert stream.astype(int).tolist() == [0, 0, 1, 1]
        bad = make_predicate_decl("is_open", 1, "flag", {"flag": "open"})
        with pytest.raises(MissingAttribute):
            eval_predicate(bad, trace, Atom("is_open", ("cup",)))

    def test_moving_first_frame_copies_second(self):
        xs = [0.0, 2.0, 2.0, 2.0, 5.0]
        frames = [{"cup": state(x, 0)} for x in xs]
        trace = Trace(5, frames, (8, 8))
        decl = make_predicate_decl("moving", 1, "moving", {"speed": 0.5})
        stream = eval_predicate(decl, trace, Atom("moving", ("cup",)))
        assert stream.astype(int).tolist() == [1, 1, 0, 0, 1]

    def test_unknown_evaluator(self):
        frames = [{"cup": state(0, 0)}]
        trace = Trace(1, frames, (8, 8))
        decl = make_predicate_decl("weird", 1, "telepathy", {})
        with pytest.raises(UnknownEvaluator):
            eval_predicate(decl, trace, Atom("weird", ("cup",)))


class TestAtlas:
    def test_radius_zero_exact_cell(self):
        # position exactly at the center of cell (2, 3)
        frames = [{"cup": state(3.5, 2.5, radius=0.0)} for _ in range(3)]
        trace = Trace(3, frames, (8, 8))
        atlas = build_atlas(trace, ["cup"])
        assert atlas.masks["cup"].sum() == 1
        assert atlas.masks["cup"][2, 3]

    def test_moving_entity_union_monotone(self):
        def prefix_trace(k):
            frames = [{"cup": state(1.5 + t, 4.5, radius=0.6)} for t in range(k)]
            return Trace(k, frames, (10, 10))

        previous = np.zeros((10, 10), bool)
        for k in range(1, 8):
            mask = build_atlas(prefix_trace(k), ["cup"]).masks["cup"]
            assert np.all(previous <= mask)
            previous = mask

    def test_determinism(self):
        rng = np.random.default_rng(5)
        frames = [{"cup": state(*rng.uniform(0, 10, 2), radius=1.0)} for _ in range(6)]
        trace = Trace(6, frames, (12, 12))
        a = build_atlas(trace, ["cup"]).masks["cup"]
        b = build_atlas(trace, ["cup"]).masks["cup"]
        assert np.array_equal(a, b)


class TestTaskSpec:
    def _spec(self, clauses):
        return TaskSpec(
            task_id="toy",
            entities=list(ENTITIES.values()),
            predicates=[make_predicate_decl("near", 2, "near", {"distance": 1.0})],
            clauses=clauses,
            condition=make_condition("toy", {"cup": (1.0, 1.0)}),
        )

    def test_requires_clauses(self):
        with pytest.raises(SpecValidationError):
            self._spec([])

    def test_rejects_unknown_predicate(self):
        clause = ClauseDecl("c", "G far(arm, cup)", parse_formula("G far(arm, cup)"))
        with pytest.raises(Exception):
            self._spec([clause])

    def test_rejects_arity_mismatch(self):
        clause = ClauseDecl("c", "G near(arm)", parse_formula("G near(arm)"))
        with pytest.raises(SpecValidationError):
            self._spec([clause])

    def test_clause_entities(self):
        clause = ClauseDecl("c", "G near(arm, cup)", parse_formula("G near(arm, cup)"))
        spec = self._spec([clause])
        assert spec.clause_entities() == {"arm", "cup"}
