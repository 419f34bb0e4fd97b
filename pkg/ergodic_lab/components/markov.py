import itertools
import math
import sys
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from numbers import Real
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import sympy
from scipy import linalg, stats
from scipy.integrate import quad
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from ergodic_lab.components.asymptotics import (
    BandVerdict,
    SeqPrefix,
    band_of,
    doubling_check,
    partial_power_sum,
    rv_index_positive,
)
from ergodic_lab.exception.custom_exception import (
    AccuracyError,
    CustomException,
    DomainError,
    InvariantViolation,
    ResourceError,
    StructuralError,
)
from ergodic_lab.logging.logger import logging

Lattice = Tuple[int, ...]
BACKENDS = ("exact", "float")
MAX_STEP_SUPPORT = 1_000_000


def to_number(value, backend: str) -> Real:
    """Parse an int, float, Fraction or "p/q" / decimal string for the given backend."""
    if backend not in BACKENDS:
        raise DomainError(f"unknown backend '{backend}', expected one of {BACKENDS}")
    if isinstance(value, str):
        value = Fraction(value.strip())
    if backend == "exact":
        if isinstance(value, float):
            return Fraction(value).limit_denominator(10**12)
        return Fraction(value)
    return float(value)


def _zero(backend: str) -> Real:
    return Fraction(0) if backend == "exact" else 0.0


def _zeros(shape, backend: str) -> np.ndarray:
    if backend == "exact":
        arr = np.empty(shape, dtype=object)
        arr.fill(Fraction(0))
        return arr
    return np.zeros(shape, dtype=float)


# ============================================
# MODEL
# ============================================
@dataclass(frozen=True, eq=False)
class MarkovModel:
    """
    Finite irreducible aperiodic Markov shift with a lattice-labelled edge cocycle.

    Each edge (s, s') carries a finite law of labels z in Z^kappa; a labelled
    edge is one symbol of the state-split shift, so a plain edge cocycle is the
    case of a single label of weight 1.
    """
    name: str
    states: Tuple[str, ...]
    P: np.ndarray
    mu: np.ndarray
    kappa: int
    labels: Mapping[Tuple[int, int], Tuple[Tuple[Lattice, Real], ...]]
    backend: str
    edges: Tuple[Tuple[int, int, Lattice, Real], ...] = field(repr=False)
    max_step: int = 0

    @property
    def size(self) -> int:
        return len(self.states)

    def index(self, state) -> int:
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool) and str(state) not in self.states:
            if 0 <= int(state) < self.size:
                return int(state)
        try:
            return self.states.index(str(state))
        except ValueError:
            raise DomainError(f"symbol '{state}' is not a state of model '{self.name}'")

    def number(self, value) -> Real:
        return to_number(value, self.backend)

    def zero(self) -> Real:
        return _zero(self.backend)

    def origin(self) -> Lattice:
        return (0,) * self.kappa


def _is_irreducible(P: np.ndarray) -> bool:
    adj = csr_matrix(np.array([[1 if p != 0 else 0 for p in row] for row in P], dtype=float))
    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    return n_comp == 1


def _period(P: np.ndarray) -> int:
    adj = csr_matrix(np.array([[1 if p != 0 else 0 for p in row] for row in P], dtype=float))
    order, pred = breadth_first_order(adj, 0, directed=True, return_predecessors=True)
    level = {0: 0}
    for node in order[1:]:
        level[int(node)] = level[int(pred[node])] + 1
    g = 0
    for i in range(P.shape[0]):
        for j in range(P.shape[0]):
            if P[i, j] != 0:
                g = math.gcd(g, level[i] + 1 - level[j])
    return abs(g)


def stationary_distribution(P) -> np.ndarray:
    """
    Stationary probability vector of an irreducible stochastic matrix.

    Rational input is solved exactly; float input through the null space of P^T - I.
    """
    rows = [list(r) for r in P]
    exact = all(isinstance(p, (Fraction, int)) for r in rows for p in r)
    arr = np.array(rows, dtype=object if exact else float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise StructuralError(f"transition matrix must be square, got shape {arr.shape}")
    if not _is_irreducible(arr):
        raise StructuralError("transition matrix is reducible: no unique stationary distribution")

    if exact:
        M = sympy.Matrix([[sympy.Rational(p.numerator, p.denominator) if isinstance(p, Fraction) else sympy.Integer(p)
                           for p in r] for r in rows])
        null = (M.T - sympy.eye(M.shape[0])).nullspace()
        if len(null) != 1:
            raise StructuralError(f"stationary equation has a {len(null)}-dimensional solution space")
        vec = null[0]
        total = sum(vec)
        mu = [Fraction(int((v / total).p), int((v / total).q)) for v in vec]
        return np.array(mu, dtype=object)

    null = linalg.null_space(arr.T - np.eye(arr.shape[0]), rcond=1e-10)
    if null.shape[1] != 1:
        raise StructuralError(f"stationary equation has a {null.shape[1]}-dimensional solution space")
    mu = null[:, 0] / null[:, 0].sum()
    if np.any(mu <= 0):
        raise StructuralError("stationary vector is not strictly positive")
    return mu


def build_markov_model(states: Sequence[str], P, labels: Optional[Mapping] = None, kappa: int = 0,
                       backend: str = "exact", name: str = "custom") -> MarkovModel:
    """
    Validate and assemble a MarkovModel.

    `labels` maps (state, state) pairs to a mapping {lattice point: weight};
    omitted edges of a kappa = 0 model get the trivial label.
    """
    states = tuple(str(s) for s in states)
    n = len(states)
    if n == 0:
        raise StructuralError("model needs at least one state")
    if len(set(states)) != n:
        raise StructuralError("state names must be distinct")
    if kappa < 0:
        raise DomainError(f"kappa must be >= 0, got {kappa}")

    Pm = np.empty((n, n), dtype=object if backend == "exact" else float)
    for i in range(n):
        if len(P[i]) != n:
            raise StructuralError(f"row {i} of P has {len(P[i])} entries, expected {n}")
        for j in range(n):
            Pm[i, j] = to_number(P[i][j], backend)
            if Pm[i, j] < 0:
                raise StructuralError(f"negative transition probability at ({states[i]}, {states[j]})")
        row_sum = sum(Pm[i, :])
        if (backend == "exact" and row_sum != 1) or (backend == "float" and abs(row_sum - 1.0) > 1e-12):
            raise StructuralError(f"row {states[i]} of P sums to {row_sum}, not 1")

    if not _is_irreducible(Pm):
        raise StructuralError("transition matrix is reducible")
    period = _period(Pm)
    if period != 1:
        raise StructuralError(f"transition matrix has period {period}; an aperiodic chain is required")

    mu = stationary_distribution([list(r) for r in Pm])
    if backend == "float":
        mu = np.asarray(mu, dtype=float)

    edge_labels: Dict[Tuple[int, int], Tuple[Tuple[Lattice, Real], ...]] = {}
    raw = {}
    for key, law in (labels or {}).items():
        s, t = key
        i, j = states.index(str(s)), states.index(str(t))
        raw[(i, j)] = law
    for i in range(n):
        for j in range(n):
            if Pm[i, j] == 0:
                if (i, j) in raw:
                    raise StructuralError(f"labels given for the forbidden edge ({states[i]}, {states[j]})")
                continue
            law = raw.get((i, j))
            if law is None:
                if kappa > 0:
                    raise StructuralError(f"edge ({states[i]}, {states[j]}) has no cocycle label")
                law = {(): 1}
            parsed = []
            for z, w in law.items():
                z = tuple(int(c) for c in (z if isinstance(z, (tuple, list)) else (z,)))
                if len(z) != kappa:
                    raise StructuralError(f"label {z} on ({states[i]}, {states[j]}) is not in Z^{kappa}")
                w = to_number(w, backend)
                if w <= 0:
                    raise StructuralError(f"label weight {w} on ({states[i]}, {states[j]}) must be positive")
                parsed.append((z, w))
            total = sum(w for _, w in parsed)
            if (backend == "exact" and total != 1) or (backend == "float" and abs(total - 1.0) > 1e-12):
                raise StructuralError(f"label weights on ({states[i]}, {states[j]}) sum to {total}")
            edge_labels[(i, j)] = tuple(sorted(parsed))

    if kappa > 0:
        drift = [_zero(backend)] * kappa
        for (i, j), law in edge_labels.items():
            for z, w in law:
                for a in range(kappa):
                    drift[a] += mu[i] * Pm[i, j] * w * z[a]
        if any((d != 0) if backend == "exact" else abs(d) > 1e-12 for d in drift):
            raise StructuralError(f"cocycle is not centered: stationary drift {drift}")

    edges = tuple((i, j, z, Pm[i, j] * w) for (i, j), law in sorted(edge_labels.items()) for z, w in law)
    max_step = max((max((abs(c) for c in z), default=0) for _, _, z, _ in edges), default=0)
    model = MarkovModel(name=name, states=states, P=Pm, mu=np.array(mu, dtype=Pm.dtype), kappa=kappa,
                        labels=edge_labels, backend=backend, edges=edges, max_step=max_step)
    logging.info(f"built Markov model '{name}': {n} states, kappa={kappa}, backend={backend}, "
                 f"{len(edges)} labelled edges")
    return model


def model_to_dict(model: MarkovModel) -> dict:
    def fmt(v):
        return str(v) if isinstance(v, Fraction) else repr(float(v))
    return {
        "name": model.name,
        "states": list(model.states),
        "kappa": model.kappa,
        "P": [[fmt(p) for p in row] for row in model.P],
        "phi": [
            {"from": model.states[i], "to": model.states[j],
             "labels": [{"z": list(z), "weight": fmt(w)} for z, w in law]}
            for (i, j), law in sorted(model.labels.items())
        ],
    }


def with_backend(model: MarkovModel, backend: str) -> MarkovModel:
    if model.backend == backend:
        return model
    return model_from_dict(model_to_dict(model), backend)


def model_from_dict(data: Mapping, backend: str = "exact") -> MarkovModel:
    try:
        labels = {}
        for entry in data.get("phi", []):
            labels[(entry["from"], entry["to"])] = {tuple(lab["z"]): lab["weight"] for lab in entry["labels"]}
        return build_markov_model(data["states"], data["P"], labels, int(data.get("kappa", 0)),
                                  backend=backend, name=data.get("name", "custom"))
    except CustomException:
        raise
    except Exception as e:
        raise CustomException(e, sys)


# ============================================
# CYLINDERS AND FIBERED SETS
# ============================================
@dataclass(frozen=True)
class Cylinder:
    """[word] at `position`, optionally restricted to one copy `fiber` of the extension."""
    position: int
    word: Tuple[str, ...]
    fiber: Optional[Lattice] = None

    def __post_init__(self):
        object.__setattr__(self, "word", tuple(str(s) for s in self.word))
        if not self.word:
            raise DomainError("cylinder word must be nonempty")
        if self.fiber is not None:
            object.__setattr__(self, "fiber", tuple(int(c) for c in self.fiber))


FiberedSet = Tuple[Cylinder, ...]


def zero_fiber(model: MarkovModel, states: Optional[Iterable[str]] = None) -> FiberedSet:
    """The copy of the base (or of a set of states) sitting over the origin."""
    chosen = model.states if states is None else tuple(states)
    return tuple(Cylinder(0, (s,), model.origin()) for s in chosen)


def cylinder_measure(model: MarkovModel, c: Cylinder) -> Real:
    idx = [model.index(s) for s in c.word]
    value = model.mu[idx[0]]
    for a, b in zip(idx, idx[1:]):
        value = value * model.P[a, b]
    return value


@dataclass(frozen=True)
class _Piece:
    position: int
    word: Tuple[int, ...]
    fiber: Optional[Lattice]


def _admissible(model: MarkovModel, word: Sequence[int]) -> bool:
    return all(model.P[a, b] != 0 for a, b in zip(word, word[1:]))


def _disjoint_pieces(model: MarkovModel, fset: Sequence[Cylinder]) -> List[_Piece]:
    """Rewrite a finite union of cylinders as disjoint admissible cylinders over a common span."""
    cyls = list(fset)
    if not cyls:
        return []
    lo = min(c.position for c in cyls)
    hi = max(c.position + len(c.word) - 1 for c in cyls)
    found: Dict[Tuple[int, ...], set] = {}
    for c in cyls:
        word = [model.index(s) for s in c.word]
        fiber = c.fiber if model.kappa > 0 else ()
        before = c.position - lo
        after = hi - (c.position + len(word) - 1)
        for pre in itertools.product(range(model.size), repeat=before):
            for post in itertools.product(range(model.size), repeat=after):
                full = tuple(pre) + tuple(word) + tuple(post)
                if _admissible(model, full):
                    found.setdefault(full, set()).add(fiber)
    pieces = []
    for word in sorted(found):
        fibers = found[word]
        if None in fibers:
            pieces.append(_Piece(lo, word, None))
        else:
            pieces.extend(_Piece(lo, word, z) for z in sorted(fibers))
    return pieces


def fibered_measure(model: MarkovModel, fset: Sequence[Cylinder]) -> Real:
    total = model.zero()
    for piece in _disjoint_pieces(model, fset):
        if model.kappa > 0 and piece.fiber is None:
            raise DomainError("an unfibered cylinder of a lattice extension has infinite measure")
        value = model.mu[piece.word[0]]
        for a, b in zip(piece.word, piece.word[1:]):
            value = value * model.P[a, b]
        total = total + value
    return total


# ============================================
# LATTICE DP
# ============================================
@dataclass(frozen=True, eq=False)
class LatticeDistribution:
    """
    Joint law of (state, partial cocycle sum) on the box ||z|| <= radius.

    mass has shape (|S|, 2r+1, ..., 2r+1); index r is the origin on every axis.
    """
    kappa: int
    radius: int
    mass: np.ndarray

    def at(self, state: int, z: Lattice) -> Real:
        if any(abs(c) > self.radius for c in z):
            return self.mass.flat[0] * 0
        return self.mass[(state,) + tuple(c + self.radius for c in z)]

    def fiber_mass(self, z: Lattice) -> Real:
        return sum(self.at(s, z) for s in range(self.mass.shape[0]))

    def total(self) -> Real:
        return self.mass.sum()

    def atoms(self) -> Dict[Tuple[int, Lattice], Real]:
        out = {}
        for idx in zip(*np.nonzero(self.mass != 0)):
            state, rest = int(idx[0]), tuple(int(c) - self.radius for c in idx[1:])
            out[(state, rest)] = self.mass[idx]
        return out


def _box(center: int, radius: int, shift: Lattice) -> Tuple[slice, ...]:
    return tuple(slice(center + s - radius, center + s + radius + 1) for s in shift)


def _advance(arr: np.ndarray, model: MarkovModel, active: int, lead: int) -> np.ndarray:
    """One transition step on an array whose fiber axes follow `lead` leading axes and the state axis."""
    center = (arr.shape[-1] - 1) // 2 if model.kappa else 0
    if model.kappa and active + model.max_step > center:
        raise InvariantViolation(f"lattice window overflow: active radius {active} + step {model.max_step} "
                                 f"exceeds window {center}")
    new = _zeros(arr.shape, model.backend)
    head = (slice(None),) * lead
    src = _box(center, active, model.origin())
    for i, j, z, w in model.edges:
        new[head + (j,) + _box(center, active, z)] += w * arr[head + (i,) + src]
    return new


def point_mass(model: MarkovModel, state, z: Optional[Lattice] = None, weight=1) -> LatticeDistribution:
    z = model.origin() if z is None else tuple(z)
    radius = max((abs(c) for c in z), default=0)
    mass = _zeros((model.size,) + (2 * radius + 1,) * model.kappa, model.backend)
    mass[(model.index(state),) + tuple(c + radius for c in z)] = model.number(weight)
    return LatticeDistribution(model.kappa, radius, mass)


def stationary_start(model: MarkovModel, states: Optional[Iterable[str]] = None) -> LatticeDistribution:
    """mu restricted to the given states, placed on the origin fiber."""
    chosen = range(model.size) if states is None else [model.index(s) for s in states]
    mass = _zeros((model.size,) + (1,) * model.kappa, model.backend)
    for i in chosen:
        mass[(i,) + (0,) * model.kappa] = model.mu[i]
    return LatticeDistribution(model.kappa, 0, mass)


def cylinder_start(model: MarkovModel, word: Sequence[str]) -> LatticeDistribution:
    """Law of (X_{L-1}, phi_{L-1}) on the cylinder [word] at position 0 (unnormalized)."""
    idx = [model.index(s) for s in word]
    dist = point_mass(model, model.states[idx[0]], weight=model.mu[idx[0]])
    for nxt in idx[1:]:
        dist = step_distribution(model, dist, 1)
        mask = _zeros(dist.mass.shape, model.backend)
        mask[nxt] = dist.mass[nxt]
        dist = LatticeDistribution(model.kappa, dist.radius, mask)
    return dist


def _embed(dist: LatticeDistribution, radius: int, backend: str) -> np.ndarray:
    arr = _zeros((dist.mass.shape[0],) + (2 * radius + 1,) * dist.kappa, backend)
    off = radius - dist.radius
    arr[(slice(None),) + tuple(slice(off, off + 2 * dist.radius + 1) for _ in range(dist.kappa))] = dist.mass
    return arr


def step_distribution(model: MarkovModel, start: LatticeDistribution, n: int) -> LatticeDistribution:
    """Push the law of (state, phi-sum) forward n steps by exact convolution."""
    if n < 0:
        raise DomainError(f"number of steps must be >= 0, got {n}")
    if n == 0:
        return start
    radius = start.radius + n * model.max_step
    arr = _embed(start, radius, model.backend)
    for k in range(n):
        arr = _advance(arr, model, start.radius + k * model.max_step, lead=0)
    return LatticeDistribution(model.kappa, radius, arr)


@dataclass(frozen=True, eq=False)
class _KernelSnapshot:
    n_max: int
    radius: int
    full: int
    windows: Tuple[np.ndarray, ...]
    powers: Tuple[np.ndarray, ...]


class TransitionKernels:
    """
    Tables K[g][s, s', z] = P(X_g = s', phi_g = z | X_0 = s) for |z| <= radius
    and the state-only powers P^g, for g = 0 .. n_max.

    Built by one forward DP from every start state; grows on demand. Every
    rebuild publishes a new snapshot in one assignment and readers work from
    the snapshot they fetched, so the table can be shared across threads.
    """

    def __init__(self, model: MarkovModel, n_max: int, radius: int = 0):
        self.model = model
        self._lock = threading.Lock()
        self._table = self._build(max(n_max, 1), max(radius, 0))

    @property
    def n_max(self) -> int:
        return self._table.n_max

    @property
    def radius(self) -> int:
        return self._table.radius

    def _build(self, n_max: int, radius: int) -> _KernelSnapshot:
        model = self.model
        S, kappa, R = model.size, model.kappa, model.max_step
        full = n_max * R
        if kappa and (2 * full + 1) ** kappa * S * S > 400_000_000:
            raise ResourceError(f"kernel table for n={n_max}, kappa={kappa} exceeds the memory guard; "
                                f"lower n_max")
        radius = min(radius, full) if kappa else 0
        arr = _zeros((S, S) + (2 * full + 1,) * kappa, model.backend)
        for s in range(S):
            arr[(s, s) + (full,) * kappa] = model.number(1)
        win = tuple(slice(full - radius, full + radius + 1) for _ in range(kappa))
        fiber_axes = tuple(range(2, 2 + kappa))
        windows, powers = [arr[(slice(None), slice(None)) + win].copy()], [arr.sum(axis=fiber_axes) if kappa else arr.copy()]
        for g in range(1, n_max + 1):
            arr = _advance(arr, model, (g - 1) * R, lead=1)
            windows.append(arr[(slice(None), slice(None)) + win].copy())
            powers.append(arr.sum(axis=fiber_axes) if kappa else arr.copy())
        logging.info(f"kernel table for '{model.name}': n_max={n_max}, radius={radius}")
        return _KernelSnapshot(n_max, radius, full, tuple(windows), tuple(powers))

    def ensure(self, n_max: int, radius: int = 0) -> _KernelSnapshot:
        table = self._table
        if not self._needs_rebuild(table, n_max, radius):
            return table
        with self._lock:
            table = self._table
            if self._needs_rebuild(table, n_max, radius):
                table = self._build(max(n_max, table.n_max), max(radius, table.radius))
                self._table = table
            return table

    def _needs_rebuild(self, table: _KernelSnapshot, n_max: int, radius: int) -> bool:
        return n_max > table.n_max or bool(self.model.kappa and radius > table.radius and table.radius < table.full)

    def power(self, g: int) -> np.ndarray:
        return self.ensure(g).powers[g]

    def value(self, g: int, s: int, t: int, z: Lattice) -> Real:
        if any(abs(c) > g * self.model.max_step for c in z):
            return self.model.zero()
        table = self.ensure(g, max((abs(c) for c in z), default=0))
        return table.windows[g][(s, t) + tuple(c + table.radius for c in z)]

    def block(self, g: int, center: Lattice, half: int) -> np.ndarray:
        """K[g][:, :, center - half .. center + half] with zeros outside the reachable box."""
        model = self.model
        need = max((abs(c) for c in center), default=0) + half
        table = self.ensure(g, min(need, g * model.max_step))
        r = table.radius
        out = _zeros((model.size, model.size) + (2 * half + 1,) * model.kappa, model.backend)
        lo = [c - half for c in center]
        src, dst = [], []
        for a in range(model.kappa):
            a0, a1 = max(lo[a], -r), min(lo[a] + 2 * half, r)
            if a0 > a1:
                return out
            src.append(slice(a0 + r, a1 + r + 1))
            dst.append(slice(a0 - lo[a], a1 - lo[a] + 1))
        out[(slice(None), slice(None)) + tuple(dst)] = table.windows[g][(slice(None), slice(None)) + tuple(src)]
        return out


# ============================================
# RETURN SEQUENCES
# ============================================
def return_sequence(model: MarkovModel, n_max: int, state=None,
                    kernels: Optional[TransitionKernels] = None) -> SeqPrefix:
    """
    u_1 .. u_{n_max}.

    With a state s: p^(n)_{(s,0),(s,0)} / mu_s. Without: the mass of [phi_n = 0]
    under mu on the origin fiber, i.e. u(Omega, n) for the full zero fiber.
    """
    if n_max < 1:
        raise DomainError(f"n_max must be >= 1, got {n_max}")
    K = kernels or TransitionKernels(model, n_max, 0)
    K.ensure(n_max, 0)
    origin = model.origin()
    values = []
    for n in range(1, n_max + 1):
        if state is not None:
            s = model.index(state)
            values.append(K.value(n, s, s, origin) / model.mu[s])
        else:
            total = model.zero()
            for s in range(model.size):
                for t in range(model.size):
                    total = total + model.mu[s] * K.value(n, s, t, origin)
            values.append(total)
    return SeqPrefix(1, tuple(values), nonnegative=True)


def return_probability(model: MarkovModel, s, n: int) -> Real:
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    return return_sequence(model, n, state=s).at(n)


# ============================================
# INTERSECTION MEASURES
# ============================================
class _Window:
    """(state, z) mass on a box of given radius around an absolute fiber `base`."""

    def __init__(self, arr: np.ndarray, base: Lattice, radius: int):
        self.arr, self.base, self.radius = arr, base, radius

    @classmethod
    def at_point(cls, model: MarkovModel, vec: np.ndarray, z: Lattice) -> "_Window":
        arr = _zeros((model.size,) + (1,) * model.kappa, model.backend)
        arr[(slice(None),) + (0,) * model.kappa] = vec
        return cls(arr, tuple(z), 0)

    def step(self, model: MarkovModel, g: int) -> "_Window":
        dist = step_distribution(model, LatticeDistribution(model.kappa, self.radius, self.arr), g)
        return _Window(dist.mass, self.base, dist.radius)

    def restrict(self, model: MarkovModel, state: Optional[int]):
        if state is not None:
            keep = self.arr[state].copy()
            self.arr = _zeros(self.arr.shape, model.backend)
            self.arr[state] = keep


def _restrict_vec(vec: np.ndarray, state: Optional[int], backend: str) -> np.ndarray:
    if state is None:
        return vec
    out = _zeros(vec.shape, backend)
    out[state] = vec[state]
    return out


def _jump(model: MarkovModel, K: TransitionKernels, window: _Window, g: int, target: Lattice) -> np.ndarray:
    """State vector of the mass that sits exactly on fiber `target` after g more steps."""
    delta0 = tuple(t - b for t, b in zip(target, window.base))
    r = window.radius
    if any(abs(d) - r > g * model.max_step for d in delta0):
        return _zeros((model.size,), model.backend)
    block = K.block(g, delta0, r)
    # the kernel displacement needed from offset o is delta0 - o
    block = np.flip(block, axis=tuple(range(2, 2 + model.kappa)))
    acc = _zeros((model.size,), model.backend)
    for i in range(model.size):
        prod = block[i] * window.arr[i][np.newaxis, ...]
        acc = acc + prod.reshape(model.size, -1).sum(axis=1)
    return acc


def _single_intersection(model: MarkovModel, combo: Sequence[Tuple[int, _Piece]], K: TransitionKernels) -> Real:
    states: Dict[int, int] = {}
    pins: Dict[int, Lattice] = {}
    for t, piece in combo:
        for i, s in enumerate(piece.word):
            if states.setdefault(t + piece.position + i, s) != s:
                return model.zero()
        if model.kappa and piece.fiber is not None:
            if pins.setdefault(t, piece.fiber) != piece.fiber:
                return model.zero()
    if model.kappa and not pins:
        raise DomainError("intersection of unfibered sets has infinite measure")

    times = sorted(set(states) | set(pins))
    last_pin = max(pins) if pins else None
    vec = model.mu.copy()
    window: Optional[_Window] = None
    prev = times[0]
    for tau in times:
        g = tau - prev
        if window is None:
            if g:
                vec = vec.dot(K.power(g))
            vec = _restrict_vec(vec, states.get(tau), model.backend)
            if tau in pins and tau != last_pin:
                window = _Window.at_point(model, vec, pins[tau])
        elif tau in pins:
            vec = _restrict_vec(_jump(model, K, window, g, pins[tau]), states.get(tau), model.backend)
            window = None if tau == last_pin else _Window.at_point(model, vec, pins[tau])
        else:
            window = window.step(model, g)
            window.restrict(model, states.get(tau))
        prev = tau
    return vec.sum()


def intersection_measure(model: MarkovModel, anchored: Sequence[Tuple[int, Sequence[Cylinder]]],
                         kernels: Optional[TransitionKernels] = None) -> Real:
    """m( intersection over (t, B) of T^{-t} B ) for fibered sets B and integer times t."""
    if not anchored:
        raise DomainError("intersection of no sets")
    piece_lists = [[(t, p) for p in _disjoint_pieces(model, fset)] for t, fset in anchored]
    if any(not pl for pl in piece_lists):
        return model.zero()
    times = [t for t, _ in anchored]
    span = max(times) - min(times) + max(p.position + len(p.word) for pl in piece_lists for _, p in pl) \
        - min(p.position for pl in piece_lists for _, p in pl)
    K = kernels or TransitionKernels(model, max(span, 1), 0)
    total = model.zero()
    for combo in itertools.product(*piece_lists):
        total = total + _single_intersection(model, combo, K)
    return total


def multi_correlation(model: MarkovModel, sets: Sequence[Sequence[Cylinder]], k: int,
                      shifts: Optional[Sequence[int]] = None,
                      kernels: Optional[TransitionKernels] = None) -> Real:
    """m( intersection_j T^{-(jk + r_j)} B_j )."""
    shifts = list(shifts) if shifts is not None else [0] * len(sets)
    if len(shifts) != len(sets):
        raise DomainError(f"{len(sets)} sets but {len(shifts)} shifts")
    return intersection_measure(model, [(j * k + r, B) for j, (B, r) in enumerate(zip(sets, shifts))], kernels)


def kernels_for_sweep(model: MarkovModel, sets: Sequence[Sequence[Cylinder]], n: int,
                      shifts: Optional[Sequence[int]] = None) -> TransitionKernels:
    """Kernel table large enough for multi_correlation at every k <= n."""
    shifts = list(shifts) if shifts is not None else [0] * len(sets)
    d = len(sets) - 1
    width = max(c.position + len(c.word) for B in sets for c in B) - min(c.position for B in sets for c in B)
    fibers = [c.fiber for B in sets for c in B if c.fiber is not None]
    spread = max((max(abs(a - b) for a, b in zip(x, y)) for x in fibers for y in fibers if x), default=0)
    n_max = d * n + (max(shifts) - min(shifts)) + width + 1
    return TransitionKernels(model, n_max, spread + 2 * width * model.max_step)


def recurrence_witness(model: MarkovModel, A: Sequence[Cylinder], d: int, n_max: int) -> Optional[int]:
    if fibered_measure(model, A) <= 0:
        raise DomainError("recurrence witness needs m(A) > 0")
    K = kernels_for_sweep(model, [A] * (d + 1), n_max)
    for n in range(1, n_max + 1):
        if multi_correlation(model, [A] * (d + 1), n, kernels=K) > 0:
            logging.info(f"recurrence witness for d={d}: n={n}")
            return n
    logging.info(f"no recurrence witness for d={d} up to n={n_max}")
    return None


def correlation_sequence(model: MarkovModel, sets: Sequence[Sequence[Cylinder]], n: int,
                         shifts: Optional[Sequence[int]] = None,
                         kernels: Optional[TransitionKernels] = None) -> SeqPrefix:
    """k -> m( intersection_j T^{-(jk + r_j)} B_j ) for k = 1 .. n."""
    K = kernels or kernels_for_sweep(model, sets, n, shifts)
    values = tuple(multi_correlation(model, sets, k, shifts, K) for k in range(1, n + 1))
    return SeqPrefix(1, values, nonnegative=True)


def rwm_defect(model: MarkovModel, sets: Sequence[Sequence[Cylinder]], d: int,
               shifts: Optional[Sequence[int]], n: int,
               kernels: Optional[TransitionKernels] = None) -> Real:
    """(1/a_d(n)) sum_{k<=n} | m(intersection T^{-(jk+r_j)} B_j) - prod m(B_j) u_k^d |."""
    if len(sets) != d + 1:
        raise DomainError(f"d={d} needs {d + 1} sets, got {len(sets)}")
    K = kernels or kernels_for_sweep(model, sets, n, shifts)
    u = return_sequence(model, n, kernels=K)
    a = partial_power_sum(u, d).at(n)
    if a == 0:
        raise DomainError("a_d(n) = 0: the defect is undefined")
    prod = reduce(lambda x, y: x * y, (fibered_measure(model, B) for B in sets))
    corr = correlation_sequence(model, sets, n, shifts, K)
    total = model.zero()
    for k in range(1, n + 1):
        diff = corr.at(k) - prod * u.at(k) ** d
        total = total + (diff if diff >= 0 else -diff)
    defect = total / a
    logging.info(f"rwm defect d={d}, n={n}: {float(defect):.6g}")
    return defect


def correlation_average(model: MarkovModel, sets: Sequence[Sequence[Cylinder]],
                        shifts: Optional[Sequence[int]], n: int,
                        kernels: Optional[TransitionKernels] = None) -> Real:
    """(1/a_d(n)) sum_{k<=n} m(intersection T^{-(jk+r_j)} B_j); tends to prod m(B_j)."""
    d = len(sets) - 1
    K = kernels or kernels_for_sweep(model, sets, n, shifts)
    a = partial_power_sum(return_sequence(model, n, kernels=K), d).at(n)
    if a == 0:
        raise DomainError("a_d(n) = 0")
    corr = correlation_sequence(model, sets, n, shifts, K)
    total = model.zero()
    for v in corr.values:
        total = total + v
    return total / a


# ============================================
# ADMISSIBILITY AND RECURRENCE
# ============================================
def return_mass(model: MarkovModel, Omega: Sequence[Cylinder], n: int,
                kernels: Optional[TransitionKernels] = None) -> Real:
    """u(Omega, n) = m(Omega and T^{-n} Omega) / m(Omega)."""
    return multi_correlation(model, [Omega, Omega], n, kernels=kernels) / fibered_measure(model, Omega)


def admissibility_band(model: MarkovModel, Omega: Sequence[Cylinder], d: int,
                       window: Tuple[int, int]) -> BandVerdict:
    """Band of m(intersection_{k<=d} T^{-kn} Omega) / u(Omega, n)^d over the window."""
    m_omega = fibered_measure(model, Omega)
    if m_omega <= 0:
        raise DomainError("admissibility needs 0 < m(Omega)")
    lo, hi = window
    K = kernels_for_sweep(model, [Omega] * (d + 1), hi)
    ratios, skipped = [], []
    for n in range(lo, hi + 1):
        u = return_mass(model, Omega, n, K)
        if u == 0:
            skipped.append(n)
            continue
        ratios.append(multi_correlation(model, [Omega] * (d + 1), n, kernels=K) / u ** d)
    if skipped:
        logging.warning(f"admissibility: parity obstruction, u(Omega, n) = 0 skipped at {len(skipped)} points "
                        f"(first {skipped[:5]})")
    band = band_of(ratios, (lo, hi))
    return BandVerdict(band.low, band.high, band.window, tuple(skipped))


@dataclass(frozen=True)
class RecurrenceVerdict:
    verdict: str
    exponent: float
    product: float
    window: Tuple[int, int]
    local_exponent: Optional[float] = None


BOUNDARY_EXPONENT_TOLERANCE = 0.02


def boundary_divergence(u: SeqPrefix, d: int, n_max: int,
                        tolerance: float = BOUNDARY_EXPONENT_TOLERANCE) -> Tuple[str, float]:
    """
    Local exponent q of the summands u_n^d, fitted from a_d(2m) - a_d(m) ~ m^{1 - q}
    over m = n_max/16 .. n_max/2. Recurrent when q <= 1 + tolerance.
    """
    a = partial_power_sum(u, d)
    blocks = [m for m in (n_max // 16, n_max // 8, n_max // 4, n_max // 2) if m >= 1]
    incs = [float(a.at(2 * m) - a.at(m)) for m in blocks]
    if len(blocks) < 2 or min(incs) <= 0:
        return "inconclusive", float("nan")
    slope = float(np.polyfit(np.log(blocks), np.log(incs), 1)[0])
    q = 1.0 - slope
    verdict = "recurrent" if q <= 1 + tolerance else "inconclusive"
    logging.info(f"boundary case: doubling increments {incs}, local exponent {q:.4f} -> {verdict}")
    return verdict, q


def recurrence_classify(model: MarkovModel, d: int, n_max: Optional[int] = None,
                        tolerance: float = 0.1) -> RecurrenceVerdict:
    """
    Classify d-fold recurrence from the decay exponent p of u_n.

    p*d < 1 - tol: recurrent; p*d > 1 + tol: dissipative; in between the local
    exponent of u_n^d decides (see boundary_divergence), otherwise inconclusive.
    """
    if d <= 0:
        raise DomainError(f"d must be positive, got {d}")
    if n_max is None:
        n_max = {0: 10_000, 1: 10_000, 2: 400}.get(model.kappa, 60)
    window = (max(1, n_max // 10), n_max)
    if n_max < 30:
        return RecurrenceVerdict("inconclusive", float("nan"), float("nan"), window)

    u = return_sequence(with_backend(model, "float"), n_max)
    if model.kappa == 0:
        p = 0.0
    else:
        p = -rv_index_positive(u, window)
    product = p * d
    logging.info(f"recurrence fit for '{model.name}', d={d}: exponent {p:.4f}, p*d={product:.4f}")
    if product < 1 - tolerance:
        return RecurrenceVerdict("recurrent", p, product, window)
    if product > 1 + tolerance:
        return RecurrenceVerdict("dissipative", p, product, window)
    verdict, q = boundary_divergence(u, d, n_max)
    return RecurrenceVerdict(verdict, p, product, window, q)


# ============================================
# TRANSFER OPERATOR
# ============================================
@dataclass(frozen=True)
class StepFunction:
    """f(x, z) depending on x_0 .. x_{length-1} (state indices) and the fiber z."""
    length: int
    values: Mapping[Tuple[Tuple[int, ...], Lattice], Real]

    def __call__(self, word: Sequence[int], z: Lattice) -> Real:
        return self.values.get((tuple(word[:self.length]), tuple(z)), 0)


def _words(model: MarkovModel, length: int) -> Iterable[Tuple[int, ...]]:
    for w in itertools.product(range(model.size), repeat=length):
        if _admissible(model, w):
            yield w


def indicator(model: MarkovModel, fset: Sequence[Cylinder], length: Optional[int] = None) -> StepFunction:
    """1_B for a fibered set whose cylinders sit at positions >= 0."""
    if any(c.position < 0 for c in fset):
        raise DomainError("indicator step functions need cylinder positions >= 0")
    L = max([c.position + len(c.word) for c in fset] + [length or 1])
    values = {}
    one = model.number(1)
    for c in fset:
        if model.kappa and c.fiber is None:
            raise ResourceError("indicator of an unfibered set has infinite support; restrict it to fibers")
        fiber = c.fiber if model.kappa else ()
        word = [model.index(s) for s in c.word]
        for w in _words(model, L):
            if list(w[c.position:c.position + len(word)]) == word:
                values[(w, fiber)] = one
    return StepFunction(L, values)


def _extend(model: MarkovModel, f: StepFunction, L: int) -> StepFunction:
    if L <= f.length:
        return f
    values = {}
    for (w, z), v in f.values.items():
        for tail in itertools.product(range(model.size), repeat=L - f.length):
            full = w + tail
            if _admissible(model, full):
                values[(full, z)] = v
    return StepFunction(L, values)


def _restrict(model: MarkovModel, f: StepFunction, fset: Sequence[Cylinder]) -> StepFunction:
    """f * 1_B without materializing 1_B."""
    L = max([f.length] + [c.position + len(c.word) for c in fset])
    f = _extend(model, f, L)
    cyls = [(c.position, [model.index(s) for s in c.word], c.fiber if model.kappa else None) for c in fset]
    values = {}
    for (w, z), v in f.values.items():
        if any(list(w[p:p + len(word)]) == word and (fib is None or tuple(fib) == z) for p, word, fib in cyls):
            values[(w, z)] = v
    return StepFunction(L, values)


def multiply(model: MarkovModel, f: StepFunction, g: StepFunction) -> StepFunction:
    L = max(f.length, g.length)
    f, g = _extend(model, f, L), _extend(model, g, L)
    values = {key: v * g.values[key] for key, v in f.values.items() if key in g.values}
    return StepFunction(L, values)


def _transfer_once(model: MarkovModel, f: StepFunction, max_support: int) -> StepFunction:
    L = f.length
    out: Dict[Tuple[Tuple[int, ...], Lattice], Real] = {}
    for (w, z), v in f.values.items():
        if v == 0:
            continue
        a = w[0]
        heads = [w[1]] if L >= 2 else [b for b in range(model.size) if model.P[a, b] != 0]
        for b in heads:
            law = model.labels.get((a, b))
            if law is None:
                continue
            rest = w[1:] if L >= 2 else (b,)
            tails = [t for t in range(model.size) if model.P[rest[-1], t] != 0] if L >= 2 else [None]
            for y, lw in law:
                weight = v * model.mu[a] * model.P[a, b] * lw / model.mu[b]
                z2 = tuple(c + e for c, e in zip(z, y))
                for t in tails:
                    key = (rest + (t,) if t is not None else rest, z2)
                    out[key] = out.get(key, 0) + weight
        if len(out) > max_support:
            raise ResourceError(f"transfer operator support exceeded {max_support} entries; "
                                f"lower n or raise the support limit")
    return StepFunction(L, out)


def transfer_apply(model: MarkovModel, f: StepFunction, n: int,
                   nest: Optional[Sequence[Tuple[Sequence[Cylinder], int]]] = None,
                   max_support: int = MAX_STEP_SUPPORT) -> StepFunction:
    """
    T^n f for the transfer operator of the extension.

    With nest = [(A_1, n_1), ..., (A_m, n_m)] this computes
    T^n( f * T^{n_1}( 1_{A_1} * T^{n_2}( ... T^{n_m}(1_{A_m}) ) ) ).
    """
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    if nest:
        inner_set, inner_lag = nest[-1]
        g = transfer_apply(model, indicator(model, inner_set), inner_lag, max_support=max_support)
        for A, lag in reversed(nest[:-1]):
            g = transfer_apply(model, _restrict(model, g, A), lag, max_support=max_support)
        f = multiply(model, f, g)
    for _ in range(n):
        f = _transfer_once(model, f, max_support)
    return f


def integrate(model: MarkovModel, f: StepFunction, g: Optional[StepFunction] = None) -> Real:
    """Integral of f (times g) against mu x counting measure."""
    h = f if g is None else multiply(model, f, g)
    total = model.zero()
    for (w, _), v in sorted(h.values.items()):
        weight = model.mu[w[0]]
        for a, b in zip(w, w[1:]):
            weight = weight * model.P[a, b]
        total = total + v * weight
    return total


# ============================================
# INDUCED RETURN TIMES
# ============================================
def induced_return_distribution(model: MarkovModel, n_max: int,
                                states: Optional[Iterable[str]] = None) -> List[Real]:
    """
    Law of the first return time to the zero fiber (over the given states) under
    the normalized restriction of m; entry n-1 is P(return time = n).
    """
    if model.kappa != 1:
        raise DomainError("induced return distribution is implemented for kappa = 1 models")
    chosen = [model.index(s) for s in (states if states is not None else model.states)]
    start = stationary_start(model, [model.states[i] for i in chosen])
    m_omega = start.total()
    radius = n_max * model.max_step
    arr = _embed(start, radius, model.backend)
    law = []
    for k in range(n_max):
        arr = _advance(arr, model, k * model.max_step, lead=0)
        hit = model.zero()
        for i in chosen:
            hit = hit + arr[i, radius]
            arr[i, radius] = model.zero()
        law.append(hit / m_omega)
    logging.info(f"first-return mass up to n={n_max}: {float(sum(law)):.6f}")
    return law


# ============================================
# STABLE DENSITY
# ============================================
# E Z^{-1/2} = 1 fixes the scale: Z is Levy with scale 2/pi.
HALF_STABLE_SCALE = 2.0 / math.pi


def half_stable_density(x):
    return stats.levy.pdf(x, scale=HALF_STABLE_SCALE)


def half_stable_closed_form(c: float, d: float) -> float:
    return math.exp(-1.0 / (math.pi * d)) - math.exp(-1.0 / (math.pi * c))


def stable_density_check(c: float, d: float, gamma: float = 0.5, tolerance: float = 1e-9) -> float:
    """Quadrature of the integral of f(x) x^{-1/2} over [c, d]."""
    if gamma != 0.5:
        raise DomainError("only gamma = 1/2 is supported")
    if not (0 < c <= d):
        raise DomainError(f"need 0 < c <= d, got c={c}, d={d}")
    if c == d:
        return 0.0
    # integrate in log x to spread the mass over many decades
    value, err = quad(lambda u: half_stable_density(math.exp(u)) * math.exp(0.5 * u),
                                math.log(c), math.log(d), limit=400, epsabs=1e-12, epsrel=1e-10)
    if err > tolerance:
        raise AccuracyError(f"quadrature error estimate {err:.3g} above tolerance {tolerance:.3g}", achieved=err)
    return float(value)


def dual_ergodic_riemann_sum(c: float, d: float, n: int) -> float:
    """
    Sum over x_k = n/k^2 in [c, d] of (x_k - x_{k+1}) x_k^{-1/2} f(x_k); approaches
    stable_density_check(c, d) as n grows.
    """
    if not (0 < c < d) or n < 1:
        raise DomainError("need 0 < c < d and n >= 1")
    k_lo = max(1, math.ceil(math.sqrt(n / d)))
    k_hi = math.floor(math.sqrt(n / c))
    if k_hi < k_lo:
        return 0.0
    k = np.arange(k_lo, k_hi + 1, dtype=float)
    x = n / k ** 2
    x_next = n / (k + 1) ** 2
    return float(np.sum((x - x_next) * x ** -0.5 * half_stable_density(x)))


# ============================================
# PRODUCT SYSTEM AND NICE-SET DIAGNOSTICS
# ============================================
@dataclass(frozen=True)
class ProductMoments:
    first: Real
    second: Real
    ratio: float


def product_moments(model: MarkovModel, Omega: Sequence[Cylinder], d: int, n: int) -> ProductMoments:
    """Moments of the return count of Omega^d under the d-fold product, over times 1..n."""
    K = kernels_for_sweep(model, [Omega, Omega, Omega], n)
    first = model.zero()
    second = model.zero()
    for k in range(1, n + 1):
        first = first + multi_correlation(model, [Omega, Omega], k, kernels=K) ** d
        for l in range(1, n + 1):
            lo, hi = min(k, l), max(k, l)
            second = second + intersection_measure(model, [(0, Omega), (lo, Omega), (hi, Omega)], K) ** d
    ratio = float(second) / float(first) ** 2 if first else float("inf")
    return ProductMoments(first, second, ratio)


@dataclass(frozen=True)
class NiceReport:
    admissibility: BandVerdict
    recurrence: RecurrenceVerdict
    uniform_band: BandVerdict
    doubling: BandVerdict


def nice_report(model: MarkovModel, Omega: Sequence[Cylinder], d: int, window: Tuple[int, int]) -> NiceReport:
    """Evidence for the four conditions of a d-nice set on the given window."""
    lo, hi = window
    admissible = admissibility_band(model, Omega, d, window)
    verdict = recurrence_classify(model, d, n_max=max(2 * hi, 40))
    u = return_sequence(model, 2 * hi)
    doubling = doubling_check(partial_power_sum(u, d), window)

    subsets = [[c] for c in Omega] if len(Omega) > 1 else [list(Omega)]
    ratios = []
    for B in subsets:
        m_b = fibered_measure(model, B)
        avg = correlation_average(model, [B] * (d + 1), None, hi)
        if m_b > 0:
            ratios.append(float(avg) / float(m_b) ** (d + 1))
    uniform = band_of(ratios, window)
    return NiceReport(admissible, verdict, uniform, doubling)
