"""Synthetic bimanual manipulation world and the online RL loop.

Rollout latents are (T, sites, 2) tensors: one site per task entity plus a
reserved row whose two channels carry the arms' gripper scalars (>0 means
closed). Decoding reads arm positions directly; objects follow the nearest
grasping arm while the grasp condition holds and stay put otherwise, and the
container is static at its layout position. World coordinates are an affine
rescale of latent units so that latents live at unit scale.

The reference policy is pretrained by plain flow matching on scripted
demonstrations (a mix of successful and perturbed-failing trajectories), so
the initial monitor success fraction sits mid-range and groups are mixed.
The online loop then alternates rollout sampling, monitoring, group-mask
construction and one gradient step on the combined objective.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLoss, SpecValidationError
from .flow import LinearVelocity, MLPVelocity, ModelBundle, sample_rollout_group
from .ltlf import parse_formula
from .mask import LatentLayout, build_group_mask
from .monitor import run_monitor
from .objectives import (
    LossConfig,
    RolloutGroup,
    draw_sample_batch,
    loss_total,
)
from .trace import (
    ClauseDecl,
    EntityDecl,
    EntityState,
    TaskSpec,
    Trace,
    make_condition,
    make_predicate_decl,
)

TEMPLATES = ("pick_place", "ordered_stack", "persist_hold")
AUX_SITE = "grip_aux"
LATENT_SCALE = 6.0

METRIC_COLUMNS = [
    "iteration",
    "success_fraction",
    "loss_total",
    "loss_nft",
    "loss_cr",
    "loss_kl",
    "mask_density",
    "offmask_drift",
]
METRICS_VERSION = 1


@dataclass
class WorldConfig:
    template: str = "pick_place"
    horizon: int = 12
    grid: tuple = (24, 24)
    n_objects: int = 1
    arm_radius: float = 0.9
    object_radius: float = 0.7
    container_radius: float = 1.2
    container_half_extents: tuple = (3.0, 3.0)
    grasp_distance: float = 1.8
    move_speed: float = 0.3
    group_size: int = 8
    iterations: int = 300
    seed: int = 0
    rollout_steps: int = 16
    model_kind: str = "linear"
    hidden: tuple = (64,)
    learning_rate: float = 3e-4
    ema_rate: float = 1.0
    demo_count: int = 384
    demo_noise: float = 0.06
    fail_fraction: float = 0.5
    pretrain_steps: int = 1500
    pretrain_lr: float = 0.02
    pretrain_batch: int = 32
    probe_count: int = 16

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise SpecValidationError(f"unknown template {self.template!r}")
        if not 8 <= self.horizon <= 32:
            raise SpecValidationError("horizon must be in [8, 32]")
        if self.group_size < 2:
            raise SpecValidationError("group size must be >= 2")
        if not 1 <= self.n_objects <= 3:
            raise SpecValidationError("n_objects must be in [1, 3]")
        if self.template == "ordered_stack" and self.n_objects < 2:
            self.n_objects = 2


def object_ids(config):
    if config.template == "pick_place":
        base = ["cube", "cube_b", "cube_c"]
    elif config.template == "ordered_stack":
        base = ["cube_a", "cube_b", "cube_c"]
    else:
        base = ["orb", "orb_b", "orb_c"]
    return base[: config.n_objects]


def container_id(config):
    return {"pick_place": "bin", "ordered_stack": "pad", "persist_hold": "bin"}[config.template]


def world_entities(config):
    ents = [EntityDecl("arm_left", "arm"), EntityDecl("arm_right", "arm")]
    ents += [EntityDecl(oid, "object") for oid in object_ids(config)]
    ents.append(
        EntityDecl(container_id(config), "container", tuple(config.container_half_extents))
    )
    return ents


def site_ids(config):
    return tuple(e.id for e in world_entities(config)) + (AUX_SITE,)


def world_layout(config) -> LatentLayout:
    return LatentLayout.entity(config.horizon, site_ids(config), channels=2)


def _center(config):
    h, w = config.grid
    return np.array([w / 2.0, h / 2.0])


def latent_to_world(z, config):
    return _center(config) + LATENT_SCALE * np.asarray(z, dtype=np.float64)


def world_to_latent(p, config):
    return (np.asarray(p, dtype=np.float64) - _center(config)) / LATENT_SCALE


def condition_embedding(config, condition):
    one_hot = np.zeros(len(TEMPLATES))
    one_hot[TEMPLATES.index(config.template)] = 1.0
    coords = []
    for eid in object_ids(config) + [container_id(config)]:
        coords.append(world_to_latent(condition.position(eid), config))
    return np.concatenate([one_hot, *coords])


def condition_dim(config):
    return len(TEMPLATES) + 2 * (config.n_objects + 1)


# --------------------------------------------------------------------------
# Task specs
# --------------------------------------------------------------------------

def _grasp_any(obj):
    return f"(grasp(arm_left, {obj}) | grasp(arm_right, {obj}))"


def build_task_spec(config, condition=None) -> TaskSpec:
    """Instantiate the template's entities, predicates and clauses."""
    cont = container_id(config)
    objs = object_ids(config)
    predicates = [
        make_predicate_decl("grasp", 2, "grasp", {"distance": config.grasp_distance}),
        make_predicate_decl("inside", 2, "inside", {}),
        make_predicate_decl("moving", 1, "moving", {"speed": config.move_speed}),
    ]
    clauses = []

    def clause(cid, src):
        clauses.append(ClauseDecl(cid, src, parse_formula(src)))

    if config.template == "pick_place":
        for obj in objs:
            clause(f"terminal_{obj}", f"F G inside({obj}, {cont})")
            clause(f"causal_{obj}", f"G (moving({obj}) -> {_grasp_any(obj)})")
            clause(f"order_{obj}", f"!inside({obj}, {cont}) U {_grasp_any(obj)}")
        instruction = f"put the {objs[0]} into the {cont}"
    elif config.template == "ordered_stack":
        first, second = objs[0], objs[1]
        clause("order_pair", f"!inside({second}, {cont}) U inside({first}, {cont})")
        for obj in objs[:2]:
            clause(f"terminal_{obj}", f"F G inside({obj}, {cont})")
            clause(f"causal_{obj}", f"G (moving({obj}) -> {_grasp_any(obj)})")
        instruction = f"stack {first} then {second} on the {cont}"
    else:
        obj = objs[0]
        clause("hold_to_end", f"F G {_grasp_any(obj)}")
        clause("no_unaided_motion", f"G (!moving({obj}) | {_grasp_any(obj)})")
        clause("avoid_zone", f"G !inside({obj}, {cont})")
        instruction = f"hold the {obj} and keep it out of the {cont}"

    if condition is None:
        condition = sample_condition(config, np.random.default_rng(config.seed))
    return TaskSpec(
        task_id=config.template,
        entities=world_entities(config),
        predicates=predicates,
        clauses=clauses,
        condition=make_condition(instruction, dict(condition.layout)),
    )


def sample_condition(config, rng):
    """Random initial layout: objects on the left band, container on the right."""
    h, w = config.grid
    layout = {}
    placed = []
    for oid in object_ids(config):
        for _ in range(64):
            pos = np.array(
                [rng.uniform(0.18 * w, 0.42 * w), rng.uniform(0.28 * h, 0.72 * h)]
            )
            if all(np.linalg.norm(pos - q) >= 2.5 for q in placed):
                break
        placed.append(pos)
        layout[oid] = pos
    layout[container_id(config)] = np.array(
        [rng.uniform(0.60 * w, 0.80 * w), rng.uniform(0.30 * h, 0.70 * h)]
    )
    instruction = f"{config.template} episode"
    return make_condition(instruction, layout)


# --------------------------------------------------------------------------
# Decoding
# --------------------------------------------------------------------------

@dataclass
class RolloutLatent:
    values: np.ndarray  # (T, sites, 2)
    layout: LatentLayout


def latent_from_flat(flat, config) -> RolloutLatent:
    layout = world_layout(config)
    return RolloutLatent(np.asarray(flat, dtype=np.float64).reshape(layout.tensor_shape()), layout)


def decode_trace(latent: RolloutLatent, config: WorldConfig, condition) -> Trace:
    """Deterministically lift a latent to a per-entity state trace."""
    sites = site_ids(config)
    z = latent.values
    t_count = config.horizon
    cont = container_id(config)
    aux = z[:, sites.index(AUX_SITE), :]
    arm_pos = {
        arm: latent_to_world(z[:, sites.index(arm), :], config)
        for arm in ("arm_left", "arm_right")
    }
    closed = {"arm_left": aux[:, 0] > 0.0, "arm_right": aux[:, 1] > 0.0}
    cont_pos = np.repeat(condition.position(cont)[None, :], t_count, axis=0)

    obj_pos = {}
    for oid in object_ids(config):
        path = np.empty((t_count, 2))
        path[0] = condition.position(oid)
        for t in range(1, t_count):
            # carried iff the grasp condition (near + closed) held at the
            # previous frame and the gripper stays closed; distances are
            # measured before the arm moves, so carrying does not depend on
            # the carry speed
            carrier, best = None, config.grasp_distance
            for arm in ("arm_left", "arm_right"):
                if not (closed[arm][t] and closed[arm][t - 1]):
                    continue
                d = float(np.linalg.norm(arm_pos[arm][t - 1] - path[t - 1]))
                if d <= best:
                    carrier, best = arm, d
            path[t] = arm_pos[carrier][t] if carrier else path[t - 1]
        obj_pos[oid] = path

    hx, hy = config.container_half_extents
    frames = []
    for t in range(t_count):
        frame = {}
        for arm in ("arm_left", "arm_right"):
            frame[arm] = EntityState(
                position=arm_pos[arm][t],
                radius=config.arm_radius,
                gripper_closed=bool(closed[arm][t]),
            )
        for oid in object_ids(config):
            delta = np.abs(obj_pos[oid][t] - cont_pos[t])
            frame[oid] = EntityState(
                position=obj_pos[oid][t],
                radius=config.object_radius,
                attribute_flags={"in_container": bool(delta[0] <= hx and delta[1] <= hy)},
            )
        frame[cont] = EntityState(position=cont_pos[t], radius=config.container_radius)
        frames.append(frame)
    return Trace(horizon=t_count, frames=frames, grid=tuple(config.grid))


# --------------------------------------------------------------------------
# Scripted demonstrations and pretraining
# --------------------------------------------------------------------------

def _homes(config):
    h, w = config.grid
    return {
        "arm_left": np.array([0.12 * w, 0.12 * h]),
        "arm_right": np.array([0.88 * w, 0.12 * h]),
    }


def _segment(path, start, end, t0, t1):
    """Linear waypoints filled into path rows t0..t1 inclusive (0-indexed)."""
    steps = t1 - t0
    for k in range(steps + 1):
        path[t0 + k] = start + (end - start) * (k / max(steps, 1))


def _outside_box_offset(half_extents, rng, margin_lo=1.0, margin_hi=3.0):
    """Random offset guaranteed to land outside the +-half_extents box."""
    hx, hy = half_extents
    angle = rng.uniform(0, 2 * math.pi)
    u = np.array([math.cos(angle), math.sin(angle)])
    margin = rng.uniform(margin_lo, margin_hi)
    scale = math.inf
    for component, extent in ((u[0], hx), (u[1], hy)):
        if abs(component) > 1e-9:
            scale = min(scale, (extent + margin) / abs(component))
    return scale * u


def _script_arm(config, pickup, target, t_grab, t_place):
    """Home -> pickup (grab) -> target (release) -> drift home."""
    t_count = config.horizon
    home = _homes(config)["arm_left"]
    path = np.empty((t_count, 2))
    _segment(path, home, pickup, 0, t_grab - 1)
    _segment(path, pickup, target, t_grab - 1, t_place - 1)
    hold_until = min(t_place + 1, t_count - 1)
    for t in range(t_place - 1, hold_until + 1):
        path[t] = target
    if hold_until + 1 < t_count:
        _segment(path, target, (target + home) / 2.0, hold_until, t_count - 1)
    return path


def scripted_demo(config, condition, rng):
    """One demonstration latent; perturbed variants fail the task on purpose."""
    t_count = config.horizon
    sites = site_ids(config)
    z = np.zeros((t_count, len(sites), 2))
    homes = _homes(config)
    cont = container_id(config)
    cont_pos = condition.position(cont)
    failing = rng.uniform() < config.fail_fraction
    mode = rng.choice(["miss", "no_grasp"]) if failing else "clean"

    closed_left = np.zeros(t_count, dtype=bool)
    if config.template == "persist_hold":
        obj = object_ids(config)[0]
        pickup = condition.position(obj)
        t_grab = 4
        if mode == "miss":
            # carry into the forbidden zone
            path = _script_arm(config, pickup, cont_pos, t_grab, 9)
            closed_left[t_grab - 1 :] = True
        elif mode == "no_grasp":
            # let go midway: open gripper and drift home
            path = _script_arm(config, pickup, pickup, t_grab, 8)
            closed_left[t_grab - 1 : 8] = True
            _segment(path, pickup, homes["arm_left"], 8, t_count - 1)
        else:
            path = np.empty((t_count, 2))
            _segment(path, homes["arm_left"], pickup, 0, t_grab - 1)
            path[t_grab - 1 :] = pickup
            closed_left[t_grab - 1 :] = True
        arm_left = path
        arm_right = np.repeat(homes["arm_right"][None, :], t_count, axis=0)
    else:
        objs = object_ids(config)
        arm_left = None
        arm_right = np.repeat(homes["arm_right"][None, :], t_count, axis=0)
        order = objs[:2] if config.template == "ordered_stack" else objs[:1]
        if config.template == "ordered_stack" and mode == "no_grasp":
            order = order[::-1]  # wrong order: second object placed first
        t_grab, span = 4, 5
        for k, obj in enumerate(order):
            pickup = condition.position(obj)
            target = cont_pos.copy()
            if mode == "miss" and k == len(order) - 1:
                target = cont_pos + _outside_box_offset(
                    config.container_half_extents, rng
                )
            if mode == "no_grasp" and config.template == "pick_place":
                # shift the grab point sideways so the approach and the carry
                # both stay clear of the object, with margin for demo jitter
                heading = cont_pos - pickup
                heading /= max(np.linalg.norm(heading), 1e-9)
                normal = np.array([-heading[1], heading[0]])
                gap = config.grasp_distance + rng.uniform(1.8, 3.2)
                pickup = pickup + gap * normal * rng.choice([-1.0, 1.0])
            grab = t_grab + k * span
            place = grab + 3
            if k == 0:
                arm_left = _script_arm(config, pickup, target, grab, place)
                closed_left[grab - 1 : place + 1] = True
            else:
                seg = _script_arm(config, pickup, target, grab, place)
                arm_left[grab - 2 :] = seg[grab - 2 :]
                closed_left[grab - 1 : min(place + 1, t_count)] = True

    for arm, path in (("arm_left", arm_left), ("arm_right", arm_right)):
        z[:, sites.index(arm), :] = world_to_latent(path, config)
    z[:, sites.index(AUX_SITE), 0] = np.where(closed_left, 0.8, -0.8)
    z[:, sites.index(AUX_SITE), 1] = -0.8

    # objects: encode the decoded trajectory so latent rows are self-consistent
    partial = RolloutLatent(z, world_layout(config))
    trace = decode_trace(partial, config, condition)
    for oid in object_ids(config):
        z[:, sites.index(oid), :] = world_to_latent(trace.positions(oid), config)
    z[:, sites.index(cont), :] = world_to_latent(
        np.repeat(cont_pos[None, :], t_count, axis=0), config
    )

    z += config.demo_noise * rng.standard_normal(z.shape)
    return z.ravel()


class Adam:
    """Minimal Adam updater over a flat parameter vector."""

    def __init__(self, n_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.step_count = 0

    def step(self, params, grad):
        self.step_count += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.step_count)
        vhat = self.v / (1 - self.b2**self.step_count)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_model(config, rng):
    layout = world_layout(config)
    if config.model_kind == "linear":
        return LinearVelocity(layout.dim, condition_dim(config), rng=rng, scale=0.01)
    return MLPVelocity(layout.dim, condition_dim(config), config.hidden, rng=rng)


def pretrain_reference(config, rng=None) -> ModelBundle:
    """Flow-match a fresh model on scripted demos; bundle clones it three ways."""
    from .flow import T_MIN

    if rng is None:
        rng = np.random.default_rng((config.seed, 101))
    demos, conds = [], []
    for _ in range(config.demo_count):
        condition = sample_condition(config, rng)
        demos.append(scripted_demo(config, condition, rng))
        conds.append(condition_embedding(config, condition))
    demos = np.array(demos)
    conds = np.array(conds)

    model = make_model(config, rng)
    opt = Adam(model.n_params, config.pretrain_lr)
    n = demos.shape[0]
    for _ in range(config.pretrain_steps):
        idx = rng.integers(0, n, size=config.pretrain_batch)
        x0 = demos[idx]
        cond = conds[idx]
        t = rng.uniform(T_MIN, 1.0, size=config.pretrain_batch)
        eps = rng.standard_normal(x0.shape)
        xt = (1.0 - t)[:, None] * x0 + t[:, None] * eps
        v_target = eps - x0
        v = model.velocity_batch(xt, t, cond)
        adj = 2.0 * (v - v_target) / config.pretrain_batch
        grad = model.vjp_batch(xt, t, cond, adj)
        model.set_params(opt.step(model.get_params(), grad))
    return ModelBundle.from_model(model, ema_rate=config.ema_rate)


# --------------------------------------------------------------------------
# Online loop
# --------------------------------------------------------------------------

@dataclass
class MetricsSeries:
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)


def _success_window(rows, tail):
    vals = [r["success_fraction"] for r in rows]
    k = max(1, min(tail, len(vals) // 2))
    return float(np.mean(vals[:k])), float(np.mean(vals[-k:]))


def run_online_loop(config: WorldConfig, spec: TaskSpec, bundle: ModelBundle,
                    loss_config: LossConfig) -> MetricsSeries:
    """Rollout, monitor, mask, and update for config.iterations steps."""
    layout = world_layout(config)
    if set(spec.entity_ids()) != {e.id for e in world_entities(config)}:
        raise SpecValidationError("task spec entities do not match the world config")
    clause_entities = spec.clause_entities()
    n = config.group_size
    dim = layout.dim

    # fixed probe points for the off-mask drift metric
    probe_rng = np.random.default_rng((config.seed, 202))
    probe_conditions = [sample_condition(config, probe_rng) for _ in range(config.probe_count)]
    probe_embeds = np.array([condition_embedding(config, c) for c in probe_conditions])
    probe_eps = probe_rng.standard_normal((config.probe_count, dim))
    probe_x0 = np.array(
        [scripted_demo(config, c, probe_rng) for c in probe_conditions]
    )
    probe_t = probe_rng.uniform(0.05, 0.95, size=config.probe_count)
    probe_xt = (1.0 - probe_t)[:, None] * probe_x0 + probe_t[:, None] * probe_eps

    rows = []
    for iteration in range(config.iterations):
        cond_rng = np.random.default_rng((config.seed, 1, iteration))
        condition = sample_condition(config, cond_rng)
        embed = condition_embedding(config, condition)

        eps = np.stack(
            [
                np.random.default_rng((config.seed, 2, iteration, i)).standard_normal(dim)
                for i in range(n)
            ]
        )
        with np.errstate(over="ignore", invalid="ignore"):
            x0s = sample_rollout_group(bundle, embed, config.rollout_steps, eps)
        if not np.all(np.isfinite(x0s)):
            raise NonFiniteLoss(
                f"behavior policy produced non-finite rollouts at iteration {iteration}"
            )

        verdicts = []
        for i in range(n):
            trace = decode_trace(latent_from_flat(x0s[i], config), config, condition)
            verdicts.append(run_monitor(spec, trace))
        rewards = np.array([v.reward for v in verdicts])

        group_mask = build_group_mask(verdicts, layout, clause_entities)
        group = RolloutGroup(embed, x0s, rewards, layout, group_mask)
        batch = draw_sample_batch(group, np.random.default_rng((config.seed, 3, iteration)))

        with np.errstate(over="ignore", invalid="ignore"):
            total, grad, parts = loss_total(group, bundle, batch, loss_config)
        if not (np.isfinite(total) and np.all(np.isfinite(grad))):
            raise NonFiniteLoss(
                f"non-finite loss at iteration {iteration}: total={total}"
            )
        bundle.current.set_params(bundle.current.get_params() - config.learning_rate * grad)
        bundle.ema_sync()

        inv_mask = 1.0 - group_mask.flat(layout)
        v_cur = bundle.current.velocity_batch(probe_xt, probe_t, probe_embeds)
        v_ref = bundle.reference.velocity_batch(probe_xt, probe_t, probe_embeds)
        drift = float(np.mean(np.linalg.norm((v_cur - v_ref) * inv_mask, axis=1)))

        rows.append(
            {
                "iteration": iteration,
                "success_fraction": float(rewards.mean()),
                "loss_total": float(total),
                "loss_nft": parts["nft"],
                "loss_cr": parts["cr"],
                "loss_kl": parts["kl"],
                "mask_density": group_mask.density(),
                "offmask_drift": drift,
            }
        )

    first, last = _success_window(rows, 50)
    drift_vals = [r["offmask_drift"] for r in rows]
    summary = {
        "iterations": config.iterations,
        "first_window_success": first,
        "last_window_success": last,
        "mean_offmask_drift": float(np.mean(drift_vals)),
        "final_offmask_drift": float(np.mean(drift_vals[-min(50, len(drift_vals)):])),
        "metrics_version": METRICS_VERSION,
    }
    return MetricsSeries(list(METRIC_COLUMNS), rows, summary)


def run_experiment(config: WorldConfig, loss_config: LossConfig, spec=None):
    """Pretrain the reference policy and run the online loop once."""
    if spec is None:
        spec = build_task_spec(config)
    bundle = pretrain_reference(config)
    return run_online_loop(config, spec, bundle, loss_config)


def sample_decoded_rollouts(config: WorldConfig, bundle: ModelBundle, count, spec=None):
    """Fresh rollouts from the behavior policy, decoded and scored."""
    if spec is None:
        spec = build_task_spec(config)
    rng = np.random.default_rng((config.seed, 404))
    out = []
    for _ in range(count):
        condition = sample_condition(config, rng)
        embed = condition_embedding(config, condition)
        eps = rng.standard_normal((1, world_layout(config).dim))
        with np.errstate(over="ignore", invalid="ignore"):
            x0 = sample_rollout_group(bundle, embed, config.rollout_steps, eps)[0]
        trace = decode_trace(latent_from_flat(x0, config), config, condition)
        out.append((trace, run_monitor(spec, trace).reward))
    return out
