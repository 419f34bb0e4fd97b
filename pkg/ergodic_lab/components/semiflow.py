import math
import sys
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from sympy import Matrix, ZZ
from sympy.matrices.normalforms import smith_normal_form

from ergodic_lab.components.markov import (
    Cylinder,
    MarkovModel,
    _zeros,
    cylinder_start,
    stationary_start,
    model_from_dict,
    model_to_dict,
    return_sequence,
    step_distribution,
    with_backend,
)
from ergodic_lab.exception.custom_exception import (
    AccuracyError,
    CustomException,
    DomainError,
    RangeError,
    ResourceError,
    StructuralError,
)
from ergodic_lab.logging.logger import logging

MAX_JOINT_CELLS = 50_000_000
MAX_CLOSED_WALKS = 200_000


# ============================================
# MODEL
# ============================================
@dataclass(frozen=True)
class RoofFunction:
    """Locally constant roof h(x) = values[x_0], all values on the lattice (1/Q)Z."""
    values: Tuple[Fraction, ...]
    Q: int

    @property
    def min_value(self) -> Fraction:
        return min(self.values)

    @property
    def max_value(self) -> Fraction:
        return max(self.values)

    def units(self) -> Tuple[int, ...]:
        """Q*h per state."""
        return tuple(int(v * self.Q) for v in self.values)


@dataclass(frozen=True, eq=False)
class SemiflowModel:
    name: str
    base: MarkovModel
    roof: RoofFunction

    @property
    def kappa(self) -> int:
        return self.base.kappa

    @property
    def mean_roof(self) -> Real:
        """varkappa = sum_s mu_s h(s)."""
        total = self.base.zero()
        for m, h in zip(self.base.mu, self.roof.values):
            total = total + m * (h if self.base.backend == "exact" else float(h))
        return total

    def on_backend(self, backend: str) -> "SemiflowModel":
        if backend == self.base.backend:
            return self
        return SemiflowModel(self.name, with_backend(self.base, backend), self.roof)


def build_semiflow(base: MarkovModel, roof: Mapping[str, object], name: str = "custom") -> SemiflowModel:
    if base.kappa < 1:
        raise StructuralError("a semiflow needs a lattice extension (kappa >= 1)")
    values = []
    for s in base.states:
        if s not in roof:
            raise StructuralError(f"roof has no value for state '{s}'")
        v = Fraction(str(roof[s])) if not isinstance(roof[s], Fraction) else roof[s]
        if v <= 0:
            raise StructuralError(f"roof value {v} at state '{s}' must be positive")
        values.append(v)
    extra = set(map(str, roof)) - set(base.states)
    if extra:
        raise StructuralError(f"roof names unknown states {sorted(extra)}")
    Q = math.lcm(*(v.denominator for v in values))
    model = SemiflowModel(name, base, RoofFunction(tuple(values), Q))
    logging.info(f"built semiflow '{name}' over '{base.name}': Q={Q}, mean roof {model.mean_roof}")
    return model


def semiflow_to_dict(model: SemiflowModel) -> dict:
    return {
        "name": model.name,
        "base": model_to_dict(model.base),
        "roof": {s: str(v) for s, v in zip(model.base.states, model.roof.values)},
    }


def semiflow_from_dict(data: Mapping, backend: str = "exact", resolve=None) -> SemiflowModel:
    """`resolve` maps a base model name to a MarkovModel when the base is given by reference."""
    try:
        base = data["base"]
        if isinstance(base, str):
            if resolve is None:
                raise StructuralError(f"base model '{base}' given by name but no resolver supplied")
            base = resolve(base)
        else:
            base = model_from_dict(base, backend)
        return build_semiflow(with_backend(base, backend), data["roof"], data.get("name", "custom"))
    except CustomException:
        raise
    except Exception as e:
        raise CustomException(e, sys)


# ============================================
# JOINT (PHI, H) LAW
# ============================================
class _JointStream:
    """
    Forward DP over (state, phi_n, Q*h_n), preallocated for n_max steps.

    Arrays have shape (S, W, ..., W, H) with W = 2*n_max*R + 1 and H = n_max*max(Q*h) + 1.
    """

    def __init__(self, model: SemiflowModel, n_max: int, word: Optional[Sequence[str]] = None):
        base = model.base
        self.model, self.n_max = model, n_max
        self.units = model.roof.units()
        self.radius = n_max * base.max_step
        self.height = n_max * max(self.units) + 1
        cells = base.size * (2 * self.radius + 1) ** base.kappa * self.height
        if cells > MAX_JOINT_CELLS:
            raise ResourceError(f"joint window of {cells} cells for n={n_max} exceeds {MAX_JOINT_CELLS}; "
                                f"lower n or the roof denominator")
        self.word = [base.index(s) for s in word] if word else None
        logging.info(f"joint (phi, h) window for '{model.name}': radius {self.radius}, height {self.height}")

    def _empty(self) -> np.ndarray:
        base = self.model.base
        return _zeros((base.size,) + (2 * self.radius + 1,) * base.kappa + (self.height,), base.backend)

    def _step(self, arr: np.ndarray, n: int) -> np.ndarray:
        base = self.model.base
        r, R = self.radius, base.max_step
        active = n * R
        new = self._empty()
        src = tuple(slice(r - active, r + active + 1) for _ in range(base.kappa))
        for i, j, z, w in base.edges:
            hi = self.units[i]
            dst = tuple(slice(r + c - active, r + c + active + 1) for c in z)
            new[(j,) + dst + (slice(hi, None),)] += w * arr[(i,) + src + (slice(None, self.height - hi),)]
        return new

    def __iter__(self) -> Iterator[Tuple[int, np.ndarray]]:
        base = self.model.base
        arr = self._empty()
        origin = (self.radius,) * base.kappa
        if self.word:
            arr[(self.word[0],) + origin + (0,)] = base.mu[self.word[0]]
        else:
            for s in range(base.size):
                arr[(s,) + origin + (0,)] = base.mu[s]
        start = len(self.word) - 1 if self.word else 0
        for n in range(self.n_max + 1):
            if n > 0:
                arr = self._step(arr, n - 1)
                if self.word and n < len(self.word):
                    keep = arr[self.word[n]].copy()
                    arr = self._empty()
                    arr[self.word[n]] = keep
            if n >= start:
                yield n, arr

    def fiber_slice(self, arr: np.ndarray, z: Sequence[int]) -> np.ndarray:
        """Mass over (state, Q*h) on the fiber phi_n = z."""
        return arr[(slice(None),) + tuple(c + self.radius for c in z)]


def joint_distribution(model: SemiflowModel, n: int) -> Dict[Tuple[str, Tuple[int, ...], Fraction], Real]:
    """Exact law of (X_n, phi_n, h_n) under mu."""
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    stream = _JointStream(model, max(n, 1))
    for m, arr in stream:
        if m == n:
            out = {}
            for idx in zip(*np.nonzero(arr != 0)):
                z = tuple(int(c) - stream.radius for c in idx[1:-1])
                out[(model.base.states[idx[0]], z, Fraction(int(idx[-1]), model.roof.Q))] = arr[idx]
            return dict(sorted(out.items()))
    raise RangeError(f"step {n} not reached")


# ============================================
# GAUSSIAN PARAMETERS
# ============================================
@dataclass(frozen=True, eq=False)
class GaussianParams:
    covariance: np.ndarray
    cross: np.ndarray
    fX0: float
    degenerate: bool

    def fX(self, x) -> float:
        return float(stats.multivariate_normal(mean=np.zeros(len(self.covariance)), cov=self.covariance).pdf(x))

    def fZ(self, z) -> float:
        if self.degenerate:
            raise DomainError("joint law of (X, Y) is singular; f_Z does not exist")
        return float(stats.multivariate_normal(mean=np.zeros(len(self.cross)), cov=self.cross).pdf(z))


def _second_moments(model: SemiflowModel, n: int, checkpoints: Sequence[int]) -> Dict[int, np.ndarray]:
    """E[V_n V_n^T] for V_n = (phi_n, h_n - varkappa*n) under mu, at the requested n."""
    base = with_backend(model.base, "float")
    k = base.kappa
    kbar = float(model.mean_roof)
    h = [float(v) for v in model.roof.values]
    S = base.size
    m0 = np.asarray(base.mu, dtype=float).copy()
    m1 = np.zeros((S, k + 1))
    m2 = np.zeros((S, k + 1, k + 1))
    out = {}
    for step in range(1, n + 1):
        n0, n1, n2 = np.zeros_like(m0), np.zeros_like(m1), np.zeros_like(m2)
        for i, j, z, w in base.edges:
            D = np.array(list(z) + [h[i] - kbar], dtype=float)
            n0[j] += w * m0[i]
            n1[j] += w * (m1[i] + m0[i] * D)
            n2[j] += w * (m2[i] + np.outer(m1[i], D) + np.outer(D, m1[i]) + m0[i] * np.outer(D, D))
        m0, m1, m2 = n0, n1, n2
        if step in checkpoints:
            out[step] = m2.sum(axis=0)
    return out


def gaussian_parameters(model: SemiflowModel, n_fit: int = 1000) -> GaussianParams:
    """
    Limit covariance of (phi_n, h_n - varkappa n)/sqrt(n), extrapolated as
    (C(n) - C(n/2)) / (n/2) to cancel the O(1) boundary term.
    """
    if n_fit < 4:
        raise DomainError(f"n_fit must be >= 4, got {n_fit}")
    half = n_fit // 2
    moments = _second_moments(model, n_fit, (half, n_fit))
    cross = (moments[n_fit] - moments[half]) / (n_fit - half)
    cross = (cross + cross.T) / 2
    k = model.kappa
    cov = cross[:k, :k]
    eig = np.linalg.eigvalsh(cov)
    if eig.min() <= 1e-12:
        raise AccuracyError(f"fitted covariance is not positive definite (eigenvalues {eig})", achieved=float(eig.min()))
    fX0 = float((2 * math.pi) ** (-k / 2) * np.linalg.det(cov) ** -0.5)
    degenerate = bool(np.linalg.eigvalsh(cross).min() <= 1e-10)
    if degenerate:
        logging.warning(f"'{model.name}': joint covariance of (X, Y) is singular; roof is arithmetic")
    logging.info(f"gaussian fit for '{model.name}' at n={n_fit}: cov={cov.tolist()}, fX0={fX0:.6f}")
    return GaussianParams(cov, cross, fX0, degenerate)


# ============================================
# LOCAL LIMIT CHECKS
# ============================================
@dataclass(frozen=True)
class LLTCheck:
    measured: float
    predicted: float
    relative_error: float
    in_regime: bool


def llt_lattice_check(model: SemiflowModel, A: Optional[Cylinder], t_n: Sequence[int], n: int,
                      gaussian: Optional[GaussianParams] = None, regime: float = 3.0) -> LLTCheck:
    """n^{kappa/2} mu(A and [phi_n = t_n]) / mu(A) against f_X(t_n / sqrt(n))."""
    base = with_backend(model.base, "float")
    if A is None:
        dist, steps = stationary_start(base), n
    else:
        dist, steps = cylinder_start(base, A.word), n - (len(A.word) - 1)
    mass_A = float(dist.total())
    if mass_A <= 0:
        raise DomainError("llt check needs mu(A) > 0")
    if steps < 0:
        raise DomainError(f"n={n} is shorter than the cylinder word")
    t_n = tuple(int(c) for c in t_n)
    if len(t_n) != base.kappa:
        raise DomainError(f"t_n must lie in Z^{base.kappa}")
    out = step_distribution(base, dist, steps)
    measured = n ** (base.kappa / 2) * float(out.fiber_mass(t_n)) / mass_A
    params = gaussian or gaussian_parameters(model)
    predicted = params.fX(np.array(t_n, dtype=float) / math.sqrt(n))
    in_regime = max(abs(c) for c in t_n) <= regime * math.sqrt(n)
    rel = abs(measured - predicted) / predicted if predicted > 0 else math.inf
    if not in_regime:
        logging.info(f"llt check at t_n={t_n}, n={n} is outside the sqrt(n) regime")
    return LLTCheck(measured, predicted, rel, in_regime)


@dataclass(frozen=True)
class FlowReturn:
    value: Optional[float]
    verdict: str


def flow_return_sequence(model: SemiflowModel, n: int) -> FlowReturn:
    """varkappa^{kappa/2 - 1} a_n(T_phi), a float on every backend."""
    if model.kappa >= 3:
        return FlowReturn(None, "dissipative")
    u = return_sequence(model.base, n)
    a_n = float(sum(u.values, model.base.zero()))
    return FlowReturn(a_n * float(model.mean_roof) ** (model.kappa / 2 - 1), "conservative")


# ============================================
# WINDOW SUMS
# ============================================
def _h_window(model: SemiflowModel, I: Tuple[Fraction, Fraction], t: Fraction, y: Fraction) -> Tuple[int, int]:
    """Q*h range [lo, hi) for h_n in I + t - y."""
    Q = model.roof.Q
    lo = math.ceil((I[0] + t - y) * Q)
    hi = math.ceil((I[1] + t - y) * Q)
    return lo, hi


def _window_terms(model: SemiflowModel, word: Optional[Sequence[str]], I, t, y,
                  n_lo: int, n_hi: int) -> Dict[int, float]:
    """n -> mu(A and [phi_n = 0, h_n in I + t - y]) for n in [n_lo, n_hi]."""
    fmodel = model.on_backend("float")
    q_lo, q_hi = _h_window(model, I, t, y)
    stream = _JointStream(fmodel, n_hi, word)
    origin = (0,) * model.kappa
    terms = {}
    for n, arr in stream:
        if n < n_lo:
            continue
        block = stream.fiber_slice(arr, origin)
        lo, hi = max(q_lo, 0), min(q_hi, stream.height)
        terms[n] = float(block[:, lo:hi].sum()) if hi > lo else 0.0
    return terms


@dataclass(frozen=True)
class WindowSum:
    value: float
    predicted: float
    window: Tuple[int, int]
    terms: Tuple[Tuple[int, float], ...]


def _as_fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


def _cylinder_mass(model: SemiflowModel, A: Optional[Cylinder]) -> float:
    if A is None:
        return 1.0
    base = with_backend(model.base, "float")
    return float(cylinder_start(base, A.word).total())


def lll_window_sum(model: SemiflowModel, A: Optional[Cylinder], I, t, M: float, y=0,
                   gaussian: Optional[GaussianParams] = None) -> WindowSum:
    """
    t^{kappa/2} sum over |n - t/varkappa| <= M sqrt(t) of mu(A and [phi_n = 0, h_n in I + t - y]),
    with the limit varkappa^{kappa/2 - 1} f_X(0) mu(A) |I|.
    """
    I = (_as_fraction(I[0]), _as_fraction(I[1]))
    t, y = _as_fraction(t), _as_fraction(y)
    if not (0 <= I[0] < I[1] <= model.roof.min_value):
        raise DomainError(f"I = [{I[0]}, {I[1]}) must lie in [0, min h = {model.roof.min_value})")
    kbar = float(model.mean_roof)
    centre, spread = float(t) / kbar, M * math.sqrt(float(t))
    L = len(A.word) if A is not None else 1
    n_lo = max(L - 1, 1, math.ceil(centre - spread))
    n_hi = math.floor(centre + spread)
    if n_hi < n_lo:
        raise RangeError(f"window n = t/varkappa +- M sqrt(t) around {centre:.3f} contains no admissible n")
    terms = _window_terms(model, A.word if A is not None else None, I, t, y, n_lo, n_hi)
    value = float(t) ** (model.kappa / 2) * math.fsum(terms[n] for n in sorted(terms))
    params = gaussian or gaussian_parameters(model)
    predicted = kbar ** (model.kappa / 2 - 1) * params.fX0 * _cylinder_mass(model, A) * float(I[1] - I[0])
    logging.info(f"lll window sum t={t}, M={M}: {value:.6g} (limit {predicted:.6g}) over n in [{n_lo}, {n_hi}]")
    return WindowSum(value, predicted, (n_lo, n_hi), tuple(sorted(terms.items())))


@dataclass(frozen=True)
class BellTail:
    value: float
    n_range: Tuple[int, int]
    truncation_bound: float


def bell_tail_sum(model: SemiflowModel, t, M: float, I=None, y=0) -> BellTail:
    """
    t^{kappa/2} sum over n >= 1, |n - t/varkappa| >= M sqrt(t) of mu([phi_n = 0, h_n in I + t - y]).

    h_n lies in [n min h, n max h], so only finitely many n contribute and the
    truncation bound is exactly 0.
    """
    t, y = _as_fraction(t), _as_fraction(y)
    I = (Fraction(0), model.roof.min_value) if I is None else (_as_fraction(I[0]), _as_fraction(I[1]))
    lo_h, hi_h = I[0] + t - y, I[1] + t - y
    n_lo = max(1, math.floor(lo_h / model.roof.max_value))
    n_hi = max(n_lo, math.ceil(hi_h / model.roof.min_value))
    kbar = float(model.mean_roof)
    centre, spread = float(t) / kbar, M * math.sqrt(float(t))
    terms = _window_terms(model, None, I, t, y, n_lo, n_hi)
    tail = [terms[n] for n in sorted(terms) if abs(n - centre) >= spread]
    value = float(t) ** (model.kappa / 2) * math.fsum(tail)
    logging.info(f"bell tail t={t}, M={M}: {value:.6g} over n in [{n_lo}, {n_hi}]")
    return BellTail(value, (n_lo, n_hi), 0.0)


@dataclass(frozen=True)
class SpacingProfile:
    window: Tuple[int, int]
    worst: float
    passes: bool
    residual: float
    residual_passes: bool


def spacing_profile(model: SemiflowModel, t, M: float, bound: float = 10.0) -> SpacingProfile:
    """
    x_{n,t} = (t - n varkappa)/sqrt(n); checks |(x_n - x_{n+1}) sqrt(n)/varkappa - 1| sqrt(n) < bound.

    The scaled deviation has leading term x_n/(2 varkappa), which grows with M,
    so the residual after removing it is checked against the same bound too.
    """
    kbar = float(model.mean_roof)
    t = float(t)
    n_lo = max(1, math.ceil(t / kbar - M * math.sqrt(t)))
    n_hi = math.floor(t / kbar + M * math.sqrt(t))
    if n_hi <= n_lo:
        raise RangeError("spacing window has fewer than two points")
    n = np.arange(n_lo, n_hi + 1, dtype=float)
    x = (t - n * kbar) / np.sqrt(n)
    spacing = x[:-1] - x[1:]
    signed = (spacing * np.sqrt(n[:-1]) / kbar - 1.0) * np.sqrt(n[:-1])
    worst = float(np.abs(signed).max())
    residual = float(np.abs(signed - x[:-1] / (2 * kbar)).max())
    return SpacingProfile((n_lo, n_hi), worst, worst < bound, residual, residual < bound)


# ============================================
# APERIODICITY
# ============================================
@dataclass(frozen=True)
class AperiodicityVerdict:
    verdict: str
    invariants: Tuple[int, ...]
    witness: str
    cycle_bound: int


def _closed_walk_vectors(model: SemiflowModel, L: int) -> List[Tuple[int, ...]]:
    base = model.base
    units = model.roof.units()
    out = set()
    walks = 0
    out_edges: Dict[int, List[Tuple[int, Tuple[int, ...]]]] = {}
    for i, j, z, _ in base.edges:
        out_edges.setdefault(i, []).append((j, z))
    for start in range(base.size):
        stack = [(start, 0, 0, (0,) * base.kappa)]
        while stack:
            s, length, q, phi = stack.pop()
            for j, z in out_edges.get(s, []):
                nl, nq, nphi = length + 1, q + units[s], tuple(a + b for a, b in zip(phi, z))
                if j == start:
                    out.add((nl, nq) + nphi)
                if nl < L:
                    stack.append((j, nl, nq, nphi))
                walks += 1
                if walks > MAX_CLOSED_WALKS:
                    raise ResourceError(f"more than {MAX_CLOSED_WALKS} walks below length {L}; lower the bound")
    return sorted(out)


def aperiodicity_check(model: SemiflowModel, L: Optional[int] = None) -> AperiodicityVerdict:
    """
    Cycle vectors (length, Q*h, phi) of closed walks up to length L generate a
    sublattice of Z^{kappa+2}; the pair (h, phi) is aperiodic at denominator Q
    when that sublattice is everything (all invariant factors equal 1).
    """
    L = L or 2 * model.base.size
    vectors = _closed_walk_vectors(model, L)
    dim = model.kappa + 2
    if not vectors:
        return AperiodicityVerdict("arithmetic", (), "no closed walks", L)
    snf = smith_normal_form(Matrix(vectors), domain=ZZ)
    diag = tuple(abs(int(snf[i, i])) for i in range(min(snf.shape)))
    nonzero = tuple(v for v in diag if v != 0)
    if len(nonzero) < dim:
        verdict = AperiodicityVerdict("arithmetic", nonzero,
                                      f"cycle lattice has rank {len(nonzero)} < {dim}", L)
    elif any(v != 1 for v in nonzero):
        verdict = AperiodicityVerdict("arithmetic", nonzero,
                                      f"cycle lattice has index {math.prod(nonzero)} in Z^{dim}", L)
    else:
        verdict = AperiodicityVerdict("aperiodic", nonzero, "cycle lattice is all of Z^%d" % dim, L)
    logging.info(f"aperiodicity of '{model.name}' up to length {L}: {verdict.verdict} ({verdict.witness})")
    return verdict
