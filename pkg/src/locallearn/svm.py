"""Soft-margin linear SVM (L1 hinge) and one-versus-all multiclass wrapper.

The binary solver is dual coordinate ascent over the box-constrained dual
with a random permutation per pass and a shrinking heuristic.  The bias is
handled by augmenting every sample with a constant feature of value 1, so
the bias is regularized and a generic QP solver on the augmented dual
reproduces the same optimum.

Models serialize to a text format: header line ``#locallearn-ova v1``,
then one ``class_id b w1 ... wD`` line per trained class.  Comment lines
starting with ``#`` after the header are ignored on read; the writer uses
them to embed class names and the degenerate constant-class marker.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FeatureMatrix
from .errors import (
    DimMismatch,
    MalformedFile,
    NoTrainedClasses,
    SingleClass,
    ValidationError,
)

# Low-dim problems run the inner loop on plain Python floats (cheaper than
# numpy scalar ops); mid-size problems precompute the signed Gram matrix so
# each coordinate update is one axpy; anything else recomputes gradients
# from features.  The choice is a pure function of the problem shape, so
# identical data always takes the identical path.
_LOWDIM_LIMIT = 8  # augmented dim (d + 1)
_GRAM_LIMIT = 2048  # samples


@dataclass(frozen=True)
class SvmConfig:
    """Binary solver settings.

    C defaults to 1 (individual-feature models); combined/fused models use
    C=100.  ``tolerance`` bounds the worst projected-gradient (KKT)
    violation at convergence.
    """

    C: float = 1.0
    tolerance: float = 1e-4
    max_passes: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.C <= 0:
            raise ValidationError(f"C must be positive, got {self.C}")
        if self.tolerance <= 0:
            raise ValidationError(f"tolerance must be positive, got {self.tolerance}")


@dataclass
class SvmModel:
    """Weights and bias of one binary hyperplane."""

    w: np.ndarray
    b: float

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if not (np.isfinite(self.w).all() and np.isfinite(self.b)):
            raise ValidationError("model parameters must be finite")

    @property
    def dim(self) -> int:
        return self.w.shape[0]


def decision(model: SvmModel, x: np.ndarray) -> float:
    """Signed distance surrogate w.x + b."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.w.shape:
        raise DimMismatch(f"x has dim {x.shape}, model expects {model.w.shape}")
    return float(model.w @ x + model.b)


def _as_values(X) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        return X.values
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("X must be 2-D")
    return X


def train_binary(X, y, cfg: SvmConfig) -> SvmModel:
    """Train one binary L1-hinge SVM; deterministic given (data, cfg, seed)."""
    model, _, _ = train_binary_full(X, y, cfg)
    return model


def train_binary_full(X, y, cfg: SvmConfig) -> tuple[SvmModel, np.ndarray, dict]:
    """Like train_binary but also returns the dual variables and solver info."""
    Xv = _as_values(X)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (Xv.shape[0],):
        raise ValidationError("y length does not match X")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValidationError("y entries must be -1 or +1")
    if np.unique(y).size < 2:
        raise SingleClass("training data contains a single class")
    Xa = np.hstack([Xv, np.ones((Xv.shape[0], 1))])
    alpha, w_aug, info = _solve_dual(Xa, y, cfg)
    return SvmModel(w_aug[:-1], float(w_aug[-1])), alpha, info


class _GramState:
    """Pass loop over a precomputed signed Gram matrix; the gradient vector
    is maintained incrementally, one axpy per moved coordinate."""

    def __init__(self, Xa, y):
        Z = Xa * y[:, None]
        self.qrows = list(Z @ Z.T)
        self.grad = -np.ones(Xa.shape[0])
        self.alpha = np.zeros(Xa.shape[0])
        self.qdiag = np.einsum("ij,ij->i", Xa, Xa)

    def run_pass(self, order, C, hi_bound, lo_bound):
        alpha, grad, qrows, qdiag = self.alpha, self.grad, self.qrows, self.qdiag
        survivors = []
        pg_max, pg_min = -np.inf, np.inf
        for i in order:
            a_i = alpha[i]
            g = grad[i]
            if a_i == 0.0:
                if g > hi_bound:
                    continue  # shrink
                pg = g if g < 0.0 else 0.0
            elif a_i == C:
                if g < lo_bound:
                    continue  # shrink
                pg = g if g > 0.0 else 0.0
            else:
                pg = g
            survivors.append(i)
            if pg > pg_max:
                pg_max = pg
            if pg < pg_min:
                pg_min = pg
            if pg > 1e-12 or pg < -1e-12:
                a_new = min(max(a_i - g / qdiag[i], 0.0), C)
                delta = a_new - a_i
                if delta != 0.0:
                    alpha[i] = a_new
                    grad += delta * qrows[i]
        return survivors, pg_max, pg_min

    def full_gradient(self):
        return self.grad

    def alphas(self):
        return self.alpha


class _LowDimState:
    """Pass loop on plain Python floats; fastest when the augmented dim is
    tiny, since per-coordinate numpy scalar overhead dominates there."""

    def __init__(self, Xa, y):
        self.Xa = Xa
        self.y = y
        self.rows = Xa.tolist()
        self.ys = y.tolist()
        self.qdiag = np.einsum("ij,ij->i", Xa, Xa).tolist()
        self.alpha = [0.0] * Xa.shape[0]
        self.w = [0.0] * Xa.shape[1]

    def run_pass(self, order, C, hi_bound, lo_bound):
        alpha, w, rows, ys, qdiag = self.alpha, self.w, self.rows, self.ys, self.qdiag
        dims = range(len(w))
        survivors = []
        pg_max, pg_min = -np.inf, np.inf
        for i in order:
            a_i = alpha[i]
            xi = rows[i]
            s = 0.0
            for t in dims:
                s += w[t] * xi[t]
            g = ys[i] * s - 1.0
            if a_i == 0.0:
                if g > hi_bound:
                    continue  # shrink
                pg = g if g < 0.0 else 0.0
            elif a_i == C:
                if g < lo_bound:
                    continue  # shrink
                pg = g if g > 0.0 else 0.0
            else:
                pg = g
            survivors.append(i)
            if pg > pg_max:
                pg_max = pg
            if pg < pg_min:
                pg_min = pg
            if pg > 1e-12 or pg < -1e-12:
                a_new = min(max(a_i - g / qdiag[i], 0.0), C)
                delta = a_new - a_i
                if delta != 0.0:
                    alpha[i] = a_new
                    dy = delta * ys[i]
                    for t in dims:
                        w[t] += dy * xi[t]
        return survivors, pg_max, pg_min

    def full_gradient(self):
        return self.y * (self.Xa @ np.asarray(self.w)) - 1.0

    def alphas(self):
        return np.asarray(self.alpha)


class _FeatureState:
    """Pass loop maintaining the primal weights with numpy ops; used for
    problems too large for a Gram matrix and too wide for the float loop."""

    def __init__(self, Xa, y):
        self.Xa = Xa
        self.y = y
        self.qdiag = np.einsum("ij,ij->i", Xa, Xa)
        self.alpha = np.zeros(Xa.shape[0])
        self.w = np.zeros(Xa.shape[1])

    def run_pass(self, order, C, hi_bound, lo_bound):
        alpha, w, Xa, y, qdiag = self.alpha, self.w, self.Xa, self.y, self.qdiag
        survivors = []
        pg_max, pg_min = -np.inf, np.inf
        for i in order:
            a_i = alpha[i]
            g = y[i] * float(w @ Xa[i]) - 1.0
            if a_i == 0.0:
                if g > hi_bound:
                    continue  # shrink
                pg = g if g < 0.0 else 0.0
            elif a_i == C:
                if g < lo_bound:
                    continue  # shrink
                pg = g if g > 0.0 else 0.0
            else:
                pg = g
            survivors.append(i)
            if pg > pg_max:
                pg_max = pg
            if pg < pg_min:
                pg_min = pg
            if pg > 1e-12 or pg < -1e-12:
                a_new = min(max(a_i - g / qdiag[i], 0.0), C)
                delta = a_new - a_i
                if delta != 0.0:
                    alpha[i] = a_new
                    w += (delta * y[i]) * Xa[i]
        return survivors, pg_max, pg_min

    def full_gradient(self):
        return self.y * (self.Xa @ self.w) - 1.0

    def alphas(self):
        return self.alpha


def _solve_dual(Xa: np.ndarray, y: np.ndarray, cfg: SvmConfig):
    """Dual coordinate ascent with shrinking (per-pass random permutation).

    Convergence is certified against the true projected gradient of the
    full variable set, never against the pass-sampled extremes alone
    (those mix gradients taken at different alpha states).
    """
    n = Xa.shape[0]
    C = float(cfg.C)
    tol = float(cfg.tolerance)
    rng = np.random.default_rng(cfg.seed)
    if Xa.shape[1] <= _LOWDIM_LIMIT:
        state = _LowDimState(Xa, y)
    elif n <= _GRAM_LIMIT:
        state = _GramState(Xa, y)
    else:
        state = _FeatureState(Xa, y)
    active = list(range(n))
    hi_bound, lo_bound = np.inf, -np.inf
    converged = False
    passes = 0
    final_gap = np.inf
    while passes < cfg.max_passes:
        passes += 1
        perm = rng.permutation(len(active))
        order = [active[j] for j in perm]
        survivors, pg_max, pg_min = state.run_pass(order, C, hi_bound, lo_bound)
        if pg_max == -np.inf:  # everything shrunk this pass
            pg_max, pg_min = 0.0, 0.0
        gap = pg_max - pg_min
        if gap <= tol:
            if len(active) < n:
                # Unshrink and keep iterating over the full variable set.
                active = list(range(n))
                hi_bound, lo_bound = np.inf, -np.inf
                continue
            g_all = state.full_gradient()
            alpha = state.alphas()
            pg_all = np.where(
                alpha == 0.0,
                np.minimum(g_all, 0.0),
                np.where(alpha == C, np.maximum(g_all, 0.0), g_all),
            )
            final_gap = float(np.max(np.abs(pg_all)))
            if final_gap <= tol:
                converged = True
                break
            continue
        active = survivors if survivors else list(range(n))
        hi_bound = pg_max if pg_max > 0.0 else np.inf
        lo_bound = pg_min if pg_min < 0.0 else -np.inf
        final_gap = gap
    alpha = state.alphas()
    w_aug = (alpha * y) @ Xa
    info = {"passes": passes, "converged": converged, "kkt_gap": float(final_gap)}
    return alpha, w_aug, info


def dual_objective(X, y, alpha: np.ndarray) -> float:
    """Dual objective sum(a) - 0.5 ||sum a_i y_i x~_i||^2 (bias-augmented)."""
    Xv = _as_values(X)
    Xa = np.hstack([Xv, np.ones((Xv.shape[0], 1))])
    v = (np.asarray(alpha) * np.asarray(y, dtype=np.float64)) @ Xa
    return float(np.sum(alpha) - 0.5 * (v @ v))


@dataclass
class OvaModel:
    """One binary model per trained class, keyed by class id.

    A training set with a single distinct class produces the degenerate
    constant model: no hyperplanes, every prediction is that class with a
    +inf decision sentinel.
    """

    models: dict[int, SvmModel] = field(default_factory=dict)
    n_classes: int = 0
    class_names: tuple[str, ...] | None = None
    constant_class: int | None = None

    @property
    def trained_classes(self) -> tuple[int, ...]:
        if self.constant_class is not None:
            return (self.constant_class,)
        return tuple(sorted(self.models))

    @property
    def dim(self) -> int | None:
        for m in self.models.values():
            return m.dim
        return None


def train_ova(
    X,
    labels,
    cfg: SvmConfig,
    n_classes: int | None = None,
    class_names: Sequence[str] | None = None,
) -> OvaModel:
    """Train one binary model per class present in ``labels``.

    Classes absent from the data stay untrained (decision -inf at predict
    time).  A single-class training set short-circuits to the constant
    model rather than invoking the solver.
    """
    Xv = _as_values(X)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (Xv.shape[0],):
        raise ValidationError("labels length does not match X")
    if labels.size == 0:
        raise ValidationError("cannot train on an empty dataset")
    present = np.unique(labels)
    if n_classes is None:
        n_classes = int(present.max()) + 1
    names = tuple(class_names) if class_names is not None else None
    if present.size == 1:
        return OvaModel(
            models={},
            n_classes=n_classes,
            class_names=names,
            constant_class=int(present[0]),
        )
    models: dict[int, SvmModel] = {}
    for cls in present:
        y = np.where(labels == cls, 1.0, -1.0)
        models[int(cls)] = train_binary(Xv, y, cfg)
    return OvaModel(models=models, n_classes=n_classes, class_names=names)


def decisions_ova(model: OvaModel, x: np.ndarray) -> dict[int, float]:
    """Per-trained-class decision values for one sample."""
    if model.constant_class is not None:
        return {model.constant_class: np.inf}
    if not model.models:
        raise NoTrainedClasses("OvA model has no trained classes")
    return {cls: decision(model.models[cls], x) for cls in sorted(model.models)}


def predict_ova(model: OvaModel, x: np.ndarray) -> int:
    """Argmax of decision values over trained classes; ties break to the
    lowest class id; untrained classes behave as decision -inf."""
    decs = decisions_ova(model, x)
    best_cls = None
    best_val = -np.inf
    for cls in sorted(decs):
        if decs[cls] > best_val:
            best_cls, best_val = cls, decs[cls]
    return int(best_cls)


def predict_ova_batch(model: OvaModel, X) -> np.ndarray:
    """Row-wise predict_ova.  Implemented as a plain map over rows so batch
    and single-sample paths produce bit-identical decision values."""
    Xv = _as_values(X)
    return np.array([predict_ova(model, row) for row in Xv], dtype=np.int64)


def save_ova(model: OvaModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#locallearn-ova v1\n")
        fh.write(f"#n_classes {model.n_classes}\n")
        if model.class_names is not None:
            fh.write("#classes " + ",".join(model.class_names) + "\n")
        if model.constant_class is not None:
            fh.write(f"#constant {model.constant_class}\n")
        for cls in sorted(model.models):
            m = model.models[cls]
            parts = [str(cls), repr(float(m.b))] + [repr(v) for v in m.w.tolist()]
            fh.write(" ".join(parts) + "\n")


def load_ova(path) -> OvaModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "#locallearn-ova v1":
        raise MalformedFile(f"{path}: bad model header")
    n_classes = 0
    class_names: tuple[str, ...] | None = None
    constant: int | None = None
    models: dict[int, SvmModel] = {}
    dim: int | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            if line.startswith("#n_classes "):
                n_classes = int(line.split(None, 1)[1])
            elif line.startswith("#classes "):
                class_names = tuple(line.split(None, 1)[1].split(","))
            elif line.startswith("#constant "):
                constant = int(line.split(None, 1)[1])
            continue
        parts = line.split()
        if len(parts) < 3:
            raise MalformedFile(f"{path}:{lineno}: expected 'class_id b w1 ... wD'")
        try:
            cls = int(parts[0])
            b = float(parts[1])
            w = np.array([float(p) for p in parts[2:]])
        except ValueError as exc:
            raise MalformedFile(f"{path}:{lineno}: {exc}")
        if dim is None:
            dim = w.shape[0]
        elif w.shape[0] != dim:
            raise MalformedFile(f"{path}:{lineno}: inconsistent weight dim")
        models[cls] = SvmModel(w, b)
    if not n_classes:
        ids = list(models) + ([constant] if constant is not None else [])
        n_classes = max(ids) + 1 if ids else 0
    return OvaModel(
        models=models,
        n_classes=n_classes,
        class_names=class_names,
        constant_class=constant,
    )
