"""Task specifications, per-entity state traces, predicate streams, atlases.

Predicates are evaluated on ground-truth geometric state. The built-in
evaluators are ``near`` (distance threshold), ``inside`` (axis-aligned box
attached to a container entity), ``grasp`` (near + closed gripper),
``flag`` (boolean attribute) and ``moving`` (frame-to-frame displacement).
Each entity also has a swept-disc raster on the trace grid; the union over
frames forms its atlas mask.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backend, ltlf
from .errors import (
    HorizonMismatch,
    MissingAttribute,
    SpecValidationError,
    UnknownEntity,
    UnknownEvaluator,
    UnknownPredicate,
)

ENTITY_KINDS = ("arm", "object", "container", "region")


@dataclass(frozen=True)
class EntityDecl:
    id: str
    kind: str
    half_extents: tuple = None  # containers/regions: box = position +- this


@dataclass(frozen=True)
class PredicateDecl:
    name: str
    arity: int
    evaluator: str
    params: tuple = ()  # sorted (key, value) pairs

    def param(self, key, default=None):
        for k, v in self.params:
            if k == key:
                return v
        if default is None:
            raise MissingAttribute(f"predicate {self.name} missing param {key!r}")
        return default


def make_predicate_decl(name, arity, evaluator, params=None):
    items = tuple(sorted((params or {}).items()))
    return PredicateDecl(name, arity, evaluator, items)


@dataclass(frozen=True)
class ClauseDecl:
    id: str
    source: str
    formula: ltlf.Formula


@dataclass(frozen=True)
class ConditionDecl:
    instruction: str
    layout: tuple  # sorted (entity id, (x, y)) pairs

    def position(self, entity_id):
        for eid, pos in self.layout:
            if eid == entity_id:
                return np.asarray(pos, dtype=float)
        raise UnknownEntity(f"no layout position for {entity_id}")


def make_condition(instruction, layout):
    items = tuple(sorted((k, (float(v[0]), float(v[1]))) for k, v in layout.items()))
    return ConditionDecl(instruction, items)


@dataclass
class TaskSpec:
    task_id: str
    entities: list
    predicates: list
    clauses: list
    condition: ConditionDecl

    def __post_init__(self):
        self._entity_map = {e.id: e for e in self.entities}
        self._pred_map = {p.name: p for p in self.predicates}
        self.validate()

    def entity(self, entity_id) -> EntityDecl:
        if entity_id not in self._entity_map:
            raise UnknownEntity(f"entity {entity_id!r} not declared")
        return self._entity_map[entity_id]

    def predicate(self, name) -> PredicateDecl:
        if name not in self._pred_map:
            raise UnknownPredicate(f"predicate {name!r} not declared")
        return self._pred_map[name]

    def entity_ids(self):
        return [e.id for e in self.entities]

    def clause_atoms(self):
        atoms = []
        seen = set()
        for clause in self.clauses:
            for atom in clause.formula.atoms():
                if atom not in seen:
                    seen.add(atom)
                    atoms.append(atom)
        return atoms

    def clause_entities(self):
        """Entity ids appearing in any clause's atoms."""
        out = set()
        for atom in self.clause_atoms():
            out.update(atom.args)
        return out

    def validate(self):
        if len(self.clauses) < 1:
            raise SpecValidationError("task spec needs at least one clause")
        if len(self._entity_map) != len(self.entities):
            raise SpecValidationError("duplicate entity ids")
        for e in self.entities:
            if e.kind not in ENTITY_KINDS:
                raise SpecValidationError(f"unknown entity kind {e.kind!r}")
        for atom in self.clause_atoms():
            decl = self.predicate(atom.name)
            if len(atom.args) != decl.arity:
                raise SpecValidationError(
                    f"atom {atom} has arity {len(atom.args)}, declared {decl.arity}"
                )
            for arg in atom.args:
                self.entity(arg)


@dataclass
class EntityState:
    position: np.ndarray  # world units, shape (2,)
    radius: float
    gripper_closed: bool = None  # arms only
    attribute_flags: dict = field(default_factory=dict)


@dataclass
class Trace:
    horizon: int
    frames: list  # per frame: entity id -> EntityState
    grid: tuple  # (H, W)

    def __post_init__(self):
        if self.horizon < 1 or len(self.frames) != self.horizon:
            raise HorizonMismatch(
                f"trace has {len(self.frames)} frames, horizon {self.horizon}"
            )
        h, w = self.grid
        if h < 4 or w < 4:
            raise SpecValidationError(f"grid must be at least 4x4, got {self.grid}")

    def positions(self, entity_id) -> np.ndarray:
        return np.array([self._state(t, entity_id).position for t in range(self.horizon)])

    def radii(self, entity_id) -> np.ndarray:
        return np.array([self._state(t, entity_id).radius for t in range(self.horizon)])

    def _state(self, t, entity_id) -> EntityState:
        frame = self.frames[t]
        if entity_id not in frame:
            raise UnknownEntity(f"entity {entity_id!r} absent from frame {t + 1}")
        return frame[entity_id]


@dataclass
class Atlas:
    masks: dict  # entity id -> (H, W) bool raster


# --------------------------------------------------------------------------
# Predicate evaluation
# --------------------------------------------------------------------------

def eval_predicate(decl: PredicateDecl, trace: Trace, atom: ltlf.Atom, entities=None):
    """Evaluate one entity-grounded predicate into a length-T Boolean stream.

    ``entities`` maps entity id to EntityDecl and is required by evaluators
    that read declaration-level geometry (``inside``).
    """
    if len(atom.args) != decl.arity:
        raise SpecValidationError(f"atom {atom} does not match arity {decl.arity}")
    t_count = trace.horizon
    if decl.evaluator == "near":
        d = float(decl.param("distance"))
        p1 = trace.positions(atom.args[0])
        p2 = trace.positions(atom.args[1])
        return np.linalg.norm(p1 - p2, axis=1) <= d
    if decl.evaluator == "inside":
        inner, outer = atom.args
        if entities is None:
            raise UnknownEvaluator("'inside' needs entity declarations")
        outer_decl = entities[outer] if not isinstance(entities, TaskSpec) else entities.entity(outer)
        if outer_decl.half_extents is None:
            raise MissingAttribute(f"entity {outer!r} has no half_extents box")
        hx, hy = outer_decl.half_extents
        delta = np.abs(trace.positions(inner) - trace.positions(outer))
        return (delta[:, 0] <= hx) & (delta[:, 1] <= hy)
    if decl.evaluator == "grasp":
        d = float(decl.param("distance"))
        arm, obj = atom.args
        near = np.linalg.norm(trace.positions(arm) - trace.positions(obj), axis=1) <= d
        closed = np.empty(t_count, dtype=bool)
        for t in range(t_count):
            state = trace._state(t, arm)
            if state.gripper_closed is None:
                raise MissingAttribute(f"entity {arm!r} has no gripper state at frame {t + 1}")
            closed[t] = state.gripper_closed
        return near & closed
    if decl.evaluator == "flag":
        flag = str(decl.param("flag"))
        (eid,) = atom.args
        out = np.empty(t_count, dtype=bool)
        for t in range(t_count):
            flags = trace._state(t, eid).attribute_flags
            if flag not in flags:
                raise MissingAttribute(f"flag {flag!r} absent on {eid!r} at frame {t + 1}")
            out[t] = flags[flag]
        return out
    if decl.evaluator == "moving":
        v = float(decl.param("speed"))
        (eid,) = atom.args
        pos = trace.positions(eid)
        if t_count == 1:
            return np.zeros(1, dtype=bool)
        step = np.linalg.norm(np.diff(pos, axis=0), axis=1) > v
        return np.concatenate([[step[0]], step])
    raise UnknownEvaluator(f"unknown evaluator {decl.evaluator!r}")


def build_atlas(trace: Trace, entity_ids) -> Atlas:
    """Swept-disc rasters: cell set iff its center is within radius at some frame."""
    h, w = trace.grid
    masks = {}
    for eid in entity_ids:
        masks[eid] = backend.sweep_disc_mask(trace.positions(eid), trace.radii(eid), h, w)
    return Atlas(masks)
