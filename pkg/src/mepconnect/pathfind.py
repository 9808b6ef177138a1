"""Paths between two points, linear connectability, and NEB relaxation.

A path is a ``(N + 2, d)`` array of pivots whose first and last rows are
fixed endpoints. Paths are checked by densifying each segment and
classifying every sample; a path that fails the check is relaxed with the
nudged elastic band method on an :class:`EnergyField`.
"""
import enum
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .classifier import MlpModel, latent, predict
from .diffcore import as_tensor, loss_and_input_grads, loss_and_probs
from .errors import (
    CapabilityError,
    ContractError,
    DegeneratePathError,
    DimensionError,
    NumericError,
    RejectedPairError,
)

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# energy fields
# --------------------------------------------------------------------------


class EnergyField:
    """Scalar field with a gradient.

    Subclasses implement :meth:`energy` and :meth:`gradient`; the batch
    methods fall back to row loops. Fields that can also classify points
    define ``classify_batch(Z) -> (classes, probs)``.
    """

    def energy(self, z) -> float:
        raise NotImplementedError

    def gradient(self, z) -> np.ndarray:
        raise NotImplementedError

    def energies(self, Z) -> np.ndarray:
        return np.array([self.energy(z) for z in Z])

    def energies_and_gradients(self, Z):
        return self.energies(Z), np.array([self.gradient(z) for z in Z])


class ConstantField(EnergyField):
    def __init__(self, value=0.0):
        self.value = float(value)

    def energy(self, z):
        return self.value

    def gradient(self, z):
        return np.zeros_like(as_tensor(z))


class RadialValley(EnergyField):
    """``E(z) = (|z| - radius)^2``; the minimum energy path is an arc."""

    def __init__(self, radius=1.5):
        self.radius = float(radius)

    def energy(self, z):
        return float((np.linalg.norm(z) - self.radius) ** 2)

    def gradient(self, z):
        z = as_tensor(z)
        r = np.linalg.norm(z)
        if r == 0.0:
            return np.zeros_like(z)
        return 2.0 * (r - self.radius) * z / r

    def energies_and_gradients(self, Z):
        Z = as_tensor(Z)
        r = np.linalg.norm(Z, axis=1)
        safe = np.where(r > 0.0, r, 1.0)
        G = (2.0 * (r - self.radius) / safe)[:, None] * Z
        G[r == 0.0] = 0.0
        return (r - self.radius) ** 2, G


class QuadraticField(EnergyField):
    """``E(z) = 0.5 (z - c)^T A (z - c)`` for symmetric ``A``."""

    def __init__(self, A, center):
        self.A = as_tensor(A)
        self.center = as_tensor(center)

    def energy(self, z):
        d = as_tensor(z) - self.center
        return float(0.5 * d @ self.A @ d)

    def gradient(self, z):
        return self.A @ (as_tensor(z) - self.center)


class ClassifierEnergy(EnergyField):
    """Cross-entropy of the partial network ``f_{l:L}`` against a target class."""

    def __init__(self, model: MlpModel, layer_index: int, target: int):
        model._check_index(layer_index)
        if not 0 <= target < model.class_count:
            raise ContractError(f"target {target} outside [0, {model.class_count})")
        self.model = model
        self.layer_index = layer_index
        self.target = int(target)
        self.dim = model.latent_dim(layer_index)
        self._layers = model.layers[layer_index:]

    def _rows(self, Z):
        Z = as_tensor(Z)
        if Z.ndim == 1:
            Z = Z[None, :]
        if Z.shape[1] != self.dim:
            raise DimensionError(f"expected points of dim {self.dim}, got {list(Z.shape)}")
        return Z

    def energies_and_gradients(self, Z):
        return loss_and_input_grads(self._layers, self._rows(Z), self.target)

    def energies_and_probs(self, Z):
        return loss_and_probs(self._layers, self._rows(Z), self.target)

    def energies(self, Z):
        return self.energies_and_probs(Z)[0]

    def energy(self, z):
        return float(self.energies(z)[0])

    def gradient(self, z):
        return self.energies_and_gradients(z)[1][0]

    def classify_batch(self, Z):
        probs = self.energies_and_probs(Z)[1]
        return np.argmax(probs, axis=1), probs

    def classify(self, z):
        classes, probs = self.classify_batch(z)
        return int(classes[0]), probs[0]


# --------------------------------------------------------------------------
# paths
# --------------------------------------------------------------------------


@dataclass(eq=False)
class PathState:
    points: np.ndarray
    layer_index: int = 0

    def __post_init__(self):
        self.points = as_tensor(self.points)
        if self.points.ndim != 2 or self.points.shape[0] < 2:
            raise DimensionError(f"path needs shape (N + 2, d), got {list(self.points.shape)}")

    @property
    def N(self) -> int:
        return self.points.shape[0] - 2

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def copy(self) -> "PathState":
        return PathState(self.points.copy(), self.layer_index)


@dataclass(frozen=True)
class NebConfig:
    N: int = 20
    spring_k: float = 1.0
    step_size: float = 0.05
    max_iters: int = 2000
    force_tol: float = 1e-3
    verify_samples_per_segment: int = 10
    improved_tangent: bool = False

    def __post_init__(self):
        if self.N < 1 or self.verify_samples_per_segment < 1 or self.max_iters < 0:
            raise ContractError("N and verify_samples_per_segment must be >= 1, max_iters >= 0")
        if not (self.spring_k >= 0 and self.step_size > 0 and self.force_tol >= 0):
            raise ContractError("need spring_k >= 0, step_size > 0, force_tol >= 0")


def straight_line_path(a, b, N: int, layer_index: int = 0) -> PathState:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"endpoint shapes differ: {list(a.shape)} vs {list(b.shape)}")
    if N < 1:
        raise ContractError(f"N must be >= 1, got {N}")
    frac = np.arange(N + 2, dtype=np.float64) / (N + 1)
    points = a[None, :] + frac[:, None] * (b - a)[None, :]
    # pin the far endpoint exactly; a + 1.0 * (b - a) can round
    points[-1] = b
    return PathState(points, layer_index)


def densify(path: PathState, M: int):
    """Pivots plus ``M`` evenly spaced samples inside each segment.

    Returns ``(t, Z)``: positions in [0, 1] (pivot ``i`` sits at
    ``i / (N + 1)``) and the sample coordinates, ``(N + 2) + (N + 1) M`` rows.
    """
    if M < 1:
        raise ContractError(f"M must be >= 1, got {M}")
    P = path.points
    segs = P.shape[0] - 1
    frac = np.arange(M + 1, dtype=np.float64) / (M + 1)
    starts, ends = P[:-1], P[1:]
    Z = starts[:, None, :] + frac[None, :, None] * (ends - starts)[:, None, :]
    Z = np.concatenate([Z.reshape(-1, P.shape[1]), P[-1:]], axis=0)
    t = (np.arange(segs)[:, None] + frac[None, :]).reshape(-1) / segs
    t = np.append(t, 1.0)
    return t, Z


@dataclass
class ClassProfile:
    """Per-sample class probabilities along a path."""

    t: np.ndarray
    probs: np.ndarray
    classes: np.ndarray
    target: int
    energies: Optional[np.ndarray] = None

    @property
    def is_target(self) -> np.ndarray:
        return self.classes == self.target

    @property
    def all_target(self) -> bool:
        return bool(np.all(self.is_target))

    @property
    def max_energy(self) -> float:
        return float(np.max(self.energies)) if self.energies is not None else float("nan")


def path_class_profile(path: PathState, field: EnergyField, target: int, M: int):
    """Classify every densified sample; returns ``(all_target, profile)``."""
    classify = getattr(field, "classify_batch", None)
    if classify is None:
        raise CapabilityError(f"{type(field).__name__} cannot classify points")
    t, Z = densify(path, M)
    if hasattr(field, "energies_and_probs") and getattr(field, "target", None) == target:
        energies, probs = field.energies_and_probs(Z)
        classes = np.argmax(probs, axis=1)
    else:
        classes, probs = classify(Z)
        energies = field.energies(Z)
    profile = ClassProfile(t, probs, np.asarray(classes), int(target), energies)
    return profile.all_target, profile


# --------------------------------------------------------------------------
# nudged elastic band
# --------------------------------------------------------------------------


def _normalize(v, where):
    n = np.linalg.norm(v)
    if not n > 0.0:
        raise DegeneratePathError(f"zero-length tangent at pivot {where}")
    return v / n


def neb_tangent(path, i: int, energies=None, improved: bool = False) -> np.ndarray:
    """Unit tangent at interior pivot ``i``.

    Default: central difference ``p[i+1] - p[i-1]``. With ``improved``, the
    upwind difference toward the higher-energy neighbour, blended by energy
    differences when ``i`` is a local extremum.
    """
    P = path.points if isinstance(path, PathState) else as_tensor(path)
    if not 1 <= i <= P.shape[0] - 2:
        raise ContractError(f"pivot {i} is not interior")
    if not improved:
        return _normalize(P[i + 1] - P[i - 1], i)
    if energies is None:
        raise ContractError("improved tangent needs pivot energies")
    return _normalize(_upwind(P[i - 1], P[i], P[i + 1], *energies[i - 1:i + 2]), i)


def _upwind(prev, cur, nxt, e_prev, e_cur, e_next):
    fwd = nxt - cur
    back = cur - prev
    if e_next > e_cur > e_prev:
        return fwd
    if e_next < e_cur < e_prev:
        return back
    d_max = max(abs(e_next - e_cur), abs(e_prev - e_cur))
    d_min = min(abs(e_next - e_cur), abs(e_prev - e_cur))
    if e_next > e_prev:
        return fwd * d_max + back * d_min
    return fwd * d_min + back * d_max


def neb_force(path, i: int, grad_i, tau_i, spring_k: float) -> np.ndarray:
    """Perpendicular true force plus parallel spring force at pivot ``i``."""
    P = path.points if isinstance(path, PathState) else as_tensor(path)
    g = as_tensor(grad_i)
    tau = as_tensor(tau_i)
    perp = g - (g @ tau) * tau
    stretch = np.linalg.norm(P[i + 1] - P[i]) - np.linalg.norm(P[i] - P[i - 1])
    return -perp + spring_k * stretch * tau


def _tangents(P, energies, improved):
    if improved:
        taus = np.array([_upwind(P[i - 1], P[i], P[i + 1], *energies[i - 1:i + 2])
                         for i in range(1, len(P) - 1)])
    else:
        taus = P[2:] - P[:-2]
    norms = np.linalg.norm(taus, axis=1)
    bad = np.flatnonzero(~(norms > 0.0))
    if bad.size:
        raise DegeneratePathError(f"zero-length tangent at pivot {int(bad[0]) + 1}")
    return taus / norms[:, None]


def _forces(P, grads, taus, spring_k):
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    par = np.einsum("ij,ij->i", grads, taus)
    perp = grads - par[:, None] * taus
    return -perp + (spring_k * (seg[1:] - seg[:-1]))[:, None] * taus


@dataclass
class NebTrace:
    max_energy: List[float] = field(default_factory=list)
    max_force: List[float] = field(default_factory=list)
    iterations: int = 0
    stop_reason: str = ""


def neb_relax(path: PathState, field: EnergyField, cfg: NebConfig = NebConfig(),
              target: Optional[int] = None):
    """Relax the interior pivots of ``path`` by fixed-step NEB updates.

    Stops when the largest pivot force drops below ``cfg.force_tol``, when
    ``target`` is given and every densified sample is classified to it, or
    after ``cfg.max_iters`` updates. Returns ``(new_path, trace)``; the
    input path is not modified.
    """
    if target is not None and getattr(field, "classify_batch", None) is None:
        raise CapabilityError(f"{type(field).__name__} cannot classify points")
    out = path.copy()
    P = out.points
    trace = NebTrace()
    M = cfg.verify_samples_per_segment
    if P.shape[0] < 3:
        trace.stop_reason = "no_pivots"
        return out, trace
    for it in range(cfg.max_iters + 1):
        E, G = field.energies_and_gradients(P)
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(G))):
            raise NumericError(f"non-finite energy or gradient at iteration {it}")
        taus = _tangents(P, E, cfg.improved_tangent)
        F = _forces(P, G[1:-1], taus, cfg.spring_k)
        fmax = float(np.max(np.linalg.norm(F, axis=1)))
        if not np.isfinite(fmax):
            raise NumericError(f"non-finite force at iteration {it}")
        trace.max_energy.append(float(np.max(E)))
        trace.max_force.append(fmax)
        trace.iterations = it
        if fmax < cfg.force_tol:
            trace.stop_reason = "converged"
            break
        if target is not None and path_class_profile(out, field, target, M)[0]:
            trace.stop_reason = "target_attained"
            break
        if it == cfg.max_iters:
            trace.stop_reason = "max_iters"
            break
        P[1:-1] += cfg.step_size * F
    return out, trace


# --------------------------------------------------------------------------
# pair verdicts
# --------------------------------------------------------------------------


class Verdict(str, enum.Enum):
    LINEAR = "LinearlyConnectable"
    NONLINEAR = "NonlinearlyConnectable"
    NONE = "NotConnected"


@dataclass
class PairVerdict:
    verdict: Verdict
    target: int
    layer_index: int
    linear_profile: ClassProfile
    final_profile: ClassProfile
    iterations_used: int
    max_energy_initial: float
    max_energy_final: float
    final_path: PathState
    stop_reason: str = ""

    def soundness_errors(self) -> List[str]:
        """Violated verdict/profile implications, recomputed from the profiles."""
        lin_ok = self.linear_profile.all_target
        fin_ok = self.final_profile.all_target
        errs = []
        if self.verdict is Verdict.LINEAR and not lin_ok:
            errs.append("linear verdict but the straight line leaves the target class")
        if self.verdict is Verdict.NONLINEAR:
            if lin_ok:
                errs.append("nonlinear verdict but the straight line already passes")
            if not fin_ok:
                errs.append("nonlinear verdict but the relaxed path leaves the target class")
            if not self.max_energy_final < self.max_energy_initial:
                errs.append("nonlinear verdict without a drop in max energy")
        if self.verdict is Verdict.NONE and fin_ok:
            errs.append("not-connected verdict but the relaxed path passes")
        return errs


def connect_pair(model: MlpModel, layer_index: int, x1, x2, cfg: NebConfig = NebConfig(),
                 target: Optional[int] = None) -> PairVerdict:
    """Decide whether ``x1`` and ``x2`` connect inside their predicted class.

    The straight line between the layer-``layer_index`` representations is
    tried first; if any densified sample leaves the target class, the line
    is relaxed with NEB on the classifier cross-entropy and re-checked.
    """
    c1, _ = predict(model, x1)
    c2, _ = predict(model, x2)
    if target is None:
        target = c1
    for name, c in (("x1", c1), ("x2", c2)):
        if c != target:
            raise RejectedPairError(f"endpoint {name} is predicted as class {c}, target is {target}")
    z1 = latent(model, x1, layer_index)
    z2 = latent(model, x2, layer_index)
    energy = ClassifierEnergy(model, layer_index, target)
    M = cfg.verify_samples_per_segment
    line = straight_line_path(z1, z2, cfg.N, layer_index)
    ok, lin_profile = path_class_profile(line, energy, target, M)
    if ok:
        return PairVerdict(Verdict.LINEAR, target, layer_index, lin_profile, lin_profile, 0,
                           lin_profile.max_energy, lin_profile.max_energy, line, "linear")
    relaxed, trace = neb_relax(line, energy, cfg, target=target)
    ok, fin_profile = path_class_profile(relaxed, energy, target, M)
    verdict = Verdict.NONLINEAR if ok else Verdict.NONE
    log.debug("layer %d pair -> %s after %d iterations (%s)",
              layer_index, verdict.value, trace.iterations, trace.stop_reason)
    return PairVerdict(verdict, target, layer_index, lin_profile, fin_profile, trace.iterations,
                       lin_profile.max_energy, fin_profile.max_energy, relaxed, trace.stop_reason)
