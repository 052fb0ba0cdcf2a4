"""Compositional constraint monitor: trace in, (reward, violations, atlas) out."""

from dataclasses import dataclass

from . import ltlf
from .errors import CreflowError
from .trace import Atlas, TaskSpec, Trace, build_atlas, eval_predicate


@dataclass
class Verdict:
    reward: int  # 1 iff every clause is satisfied
    violations: list  # one (clause id, Witness) entry per clause, in spec order
    atlas: Atlas
    horizon: int

    def witness(self, clause_id) -> ltlf.Witness:
        for cid, w in self.violations:
            if cid == clause_id:
                return w
        raise KeyError(clause_id)


def run_monitor(
    spec: TaskSpec, trace: Trace, stability_window=ltlf.DEFAULT_STABILITY_WINDOW
) -> Verdict:
    """Evaluate every clause of the spec against the trace.

    Predicate streams are computed once per distinct atom and shared across
    clauses. The reward is the conjunction of the per-clause truths; the
    violation list carries one witness per clause (empty when satisfied).
    Errors from predicate or clause evaluation are annotated with the id of
    the clause being processed.
    """
    for t in range(trace.horizon):
        for eid in spec.entity_ids():
            trace._state(t, eid)

    streams = {}
    for clause in spec.clauses:
        for atom in clause.formula.atoms():
            if atom in streams:
                continue
            decl = spec.predicate(atom.name)
            try:
                streams[atom] = eval_predicate(decl, trace, atom, spec)
            except CreflowError as err:
                raise type(err)(f"clause {clause.id!r}: {err}") from err

    reward = 1
    violations = []
    for clause in spec.clauses:
        try:
            truth, witness = ltlf.eval_clause(
                clause.formula, streams, trace.horizon, stability_window
            )
        except CreflowError as err:
            raise type(err)(f"clause {clause.id!r}: {err}") from err
        if not truth:
            reward = 0
        violations.append((clause.id, witness))

    atlas = build_atlas(trace, spec.entity_ids())
    return Verdict(reward, violations, atlas, trace.horizon)
