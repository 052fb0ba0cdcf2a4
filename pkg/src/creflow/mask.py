"""Group-shared spatio-temporal credit masks over latent layouts.

A frame-site layout factors a latent of dimension D into frames x sites x
channels. The group mask is the outer product of a temporal mask (union of
witness frames from failed clauses across the group) and a spatial mask
(union of entity atlases for pixel sites, or the clause-implicated entity
ids for entity sites). An all-success group yields the all-zero mask.
"""

from dataclasses import dataclass

import numpy as np

from .errors import LayoutMismatch, ShapeMismatch

VECTOR = "vector"
FRAME_SITE = "frame_site"
PIXEL_SITES = "pixel"
ENTITY_SITES = "entity"


@dataclass(frozen=True)
class LatentLayout:
    kind: str
    dim: int
    horizon: int = 1
    site_kind: str = None
    grid: tuple = None  # pixel sites: (H, W)
    entity_ids: tuple = None  # entity sites, in site order
    channels: int = 1

    @classmethod
    def vector(cls, dim):
        return cls(kind=VECTOR, dim=int(dim))

    @classmethod
    def pixel(cls, horizon, grid, channels=1):
        h, w = grid
        return cls(
            kind=FRAME_SITE,
            dim=horizon * h * w * channels,
            horizon=horizon,
            site_kind=PIXEL_SITES,
            grid=(int(h), int(w)),
            channels=int(channels),
        )

    @classmethod
    def entity(cls, horizon, entity_ids, channels=2):
        ids = tuple(entity_ids)
        return cls(
            kind=FRAME_SITE,
            dim=horizon * len(ids) * channels,
            horizon=horizon,
            site_kind=ENTITY_SITES,
            entity_ids=ids,
            channels=int(channels),
        )

    @property
    def sites(self):
        if self.kind == VECTOR:
            return self.dim
        if self.site_kind == PIXEL_SITES:
            return self.grid[0] * self.grid[1]
        return len(self.entity_ids)

    def tensor_shape(self):
        if self.kind == VECTOR:
            return (self.dim,)
        return (self.horizon, self.sites, self.channels)

    def describe(self):
        if self.kind == VECTOR:
            return {"kind": VECTOR, "dim": self.dim}
        out = {
            "kind": FRAME_SITE,
            "horizon": self.horizon,
            "site_kind": self.site_kind,
            "channels": self.channels,
        }
        if self.site_kind == PIXEL_SITES:
            out["grid"] = list(self.grid)
        else:
            out["entity_ids"] = list(self.entity_ids)
        return out


@dataclass(frozen=True)
class CreditMask:
    temporal: np.ndarray  # (T,) bool
    spatial: np.ndarray  # (S,) bool
    full: np.ndarray  # (T, S) bool, outer product of the two

    @classmethod
    def from_axes(cls, temporal, spatial):
        temporal = np.asarray(temporal, dtype=bool)
        spatial = np.asarray(spatial, dtype=bool)
        return cls(temporal, spatial, np.outer(temporal, spatial))

    @classmethod
    def ones(cls, layout: LatentLayout):
        if layout.kind == VECTOR:
            return cls.from_axes(np.ones(1, bool), np.ones(layout.dim, bool))
        return cls.from_axes(np.ones(layout.horizon, bool), np.ones(layout.sites, bool))

    @classmethod
    def from_dense(cls, bits):
        """Vector-layout mask: one bit per latent coordinate."""
        bits = np.asarray(bits, dtype=bool)
        return cls.from_axes(np.ones(1, bool), bits)

    def density(self):
        return float(np.mean(self.full))

    def flat(self, layout: LatentLayout) -> np.ndarray:
        """Per-coordinate 0/1 vector of length layout.dim (channel broadcast)."""
        if layout.kind == VECTOR:
            if self.full.shape != (1, layout.dim):
                raise LayoutMismatch(
                    f"vector layout of dim {layout.dim} needs a precomputed "
                    f"{layout.dim}-bit mask, got {self.full.shape}"
                )
            return self.full.ravel().astype(np.float64)
        if self.full.shape != (layout.horizon, layout.sites):
            raise LayoutMismatch(
                f"mask shape {self.full.shape} does not match layout "
                f"({layout.horizon}, {layout.sites})"
            )
        tiled = np.repeat(self.full[:, :, None], layout.channels, axis=2)
        return tiled.ravel().astype(np.float64)


def build_group_mask(verdicts, layout: LatentLayout, clause_entities=None) -> CreditMask:
    """Aggregate a rollout group's verdicts into the shared credit mask.

    The temporal axis unions witness frames over all rollouts (satisfied
    clauses contribute nothing). For pixel sites the spatial axis unions the
    entity atlases of all rollouts regardless of reward; for entity sites it
    selects the ids in ``clause_entities``.
    """
    if layout.kind != FRAME_SITE:
        raise LayoutMismatch("group masks require a frame-site layout")
    if not verdicts:
        raise LayoutMismatch("need at least one verdict")
    t_count = layout.horizon
    for v in verdicts:
        if v.horizon != t_count:
            raise LayoutMismatch(
                f"verdict horizon {v.horizon} does not match layout horizon {t_count}"
            )

    temporal = np.zeros(t_count, dtype=bool)
    for v in verdicts:
        for _, witness in v.violations:
            for _, frame in witness.pairs:
                temporal[frame - 1] = True

    if layout.site_kind == PIXEL_SITES:
        spatial = np.zeros(layout.sites, dtype=bool)
        for v in verdicts:
            for m in v.atlas.masks.values():
                if m.shape != layout.grid:
                    raise LayoutMismatch(
                        f"atlas raster {m.shape} does not match layout grid {layout.grid}"
                    )
                spatial |= m.ravel()
    else:
        if clause_entities is None:
            raise LayoutMismatch("entity-site masks need the clause-implicated entity ids")
        implicated = set(clause_entities)
        spatial = np.array([eid in implicated for eid in layout.entity_ids])

    return CreditMask.from_axes(temporal, spatial)


def apply_mask(mask: CreditMask, residual, layout: LatentLayout):
    """Elementwise mask product, broadcast across channels.

    Accepts the residual either flat (dim,) or shaped (T, S, C); the result
    has the same shape as the input.
    """
    residual = np.asarray(residual, dtype=np.float64)
    flat_mask = mask.flat(layout)
    if residual.shape == (layout.dim,):
        return residual * flat_mask
    if residual.shape == layout.tensor_shape():
        return (residual.ravel() * flat_mask).reshape(residual.shape)
    raise ShapeMismatch(
        f"residual shape {residual.shape} matches neither ({layout.dim},) "
        f"nor {layout.tensor_shape()}"
    )
