"""L2 normalization and feature fusion by concatenation.

Each source block is normalized independently (per row), then blocks are
concatenated in spec order.  Normalizing the final concatenation is
available behind ``FusionSpec.renormalize`` and is off by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import FeatureMatrix, reindex
from .errors import IdMismatch, NonFiniteValue, UnknownSource, ValidationError


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit Euclidean norm; the zero vector is returned
    unchanged (empty presence bins are legitimate)."""
    v = np.asarray(v, dtype=np.float64)
    if not np.isfinite(v).all():
        idx = int(np.argwhere(~np.isfinite(v.ravel()))[0][0])
        raise NonFiniteValue(f"non-finite entry at index {idx}", col=idx)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return v.copy()
    return v / norm


def l2_normalize_rows(values: np.ndarray) -> np.ndarray:
    """Row-wise l2_normalize; zero rows pass through unchanged."""
    values = np.asarray(values, dtype=np.float64)
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return values / safe


@dataclass(frozen=True)
class FusionSpec:
    """Ordered fusion recipe: which sources, and whether to normalize each.

    ``normalize`` defaults every source to on; list a source in
    ``skip_normalize`` to pass its block through raw.
    """

    sources: tuple[str, ...]
    skip_normalize: frozenset[str] = field(default_factory=frozenset)
    renormalize: bool = False

    def __post_init__(self):
        if not self.sources:
            raise ValidationError("fusion spec needs at least one source")
        if len(set(self.sources)) != len(self.sources):
            raise ValidationError("fusion spec sources must be unique")
        unknown = self.skip_normalize - set(self.sources)
        if unknown:
            raise UnknownSource(f"skip_normalize names unknown sources {sorted(unknown)}")

    def normalizes(self, name: str) -> bool:
        return name not in self.skip_normalize


def fuse(spec: FusionSpec, sources: Mapping[str, FeatureMatrix]) -> FeatureMatrix:
    """Concatenate per-source rows (optionally L2-normalized) in spec order.

    All sources must share one sample id set.  Rows follow the first
    source's order, so fusing a single source with normalization off is
    the identity.  The output carries no labels; attach them by id.
    """
    missing = [n for n in spec.sources if n not in sources]
    if missing:
        raise UnknownSource(f"sources not provided: {missing}")
    first = sources[spec.sources[0]]
    order = first.sample_ids
    blocks = []
    for name in spec.sources:
        m = sources[name]
        if set(m.sample_ids) != set(order):
            diff = set(m.sample_ids) ^ set(order)
            raise IdMismatch(
                f"source {name!r} disagrees on {len(diff)} sample id(s)", missing=diff
            )
        if m.sample_ids != order:
            m = reindex(m, order)
        blocks.append(l2_normalize_rows(m.values) if spec.normalizes(name) else m.values)
    fused = blocks[0] if len(blocks) == 1 else np.hstack(blocks)
    if spec.renormalize:
        fused = l2_normalize_rows(fused)
    return FeatureMatrix(fused, order)
