import cmath
import hashlib
import itertools
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad
from scipy.spatial import cKDTree

from ergodic_lab.components.asymptotics import BandVerdict, SeqPrefix, band_of
from ergodic_lab.exception.custom_exception import (
    AccuracyError,
    CoverageError,
    CustomException,
    DomainError,
    ResourceError,
    StructuralError,
)
from ergodic_lab.logging.logger import logging

BOUNDARY_GUARD = 1e-12
DET_TOLERANCE = 1e-10
KEY_ROUNDING = 1e-7
MAX_WORD_LENGTH = 12
MAX_ELEMENTS = 2_000_000
TWO_PI = 2 * math.pi


# ============================================
# POINTS, LINE ELEMENTS, MOBIUS MAPS
# ============================================
def check_point(z: complex) -> complex:
    z = complex(z)
    if abs(z) >= 1 - BOUNDARY_GUARD:
        raise DomainError(f"point {z} is not inside the unit disk")
    return z


def hyp_dist(x: complex, y: complex) -> float:
    """rho(x, y) = 2 artanh(|x - y| / |1 - conj(x) y|)."""
    x, y = check_point(x), check_point(y)
    return 2.0 * math.atanh(abs(x - y) / abs(1 - x.conjugate() * y))


@dataclass(frozen=True)
class LineElement:
    base: complex
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "base", check_point(self.base))
        object.__setattr__(self, "angle", float(self.angle) % TWO_PI)

    def flip(self) -> "LineElement":
        """The involution that reverses direction."""
        return LineElement(self.base, self.angle + math.pi)


@dataclass(frozen=True)
class MobiusMap:
    """z -> (a z + b) / (conj(b) z + conj(a)) with |a|^2 - |b|^2 = 1."""
    a: complex
    b: complex

    def __post_init__(self):
        det = abs(self.a) ** 2 - abs(self.b) ** 2
        if abs(det - 1) > DET_TOLERANCE * max(1.0, abs(self.a) ** 2):
            raise StructuralError(f"|a|^2 - |b|^2 = {det!r}, expected 1")

    @classmethod
    def normalized(cls, a: complex, b: complex) -> "MobiusMap":
        det = abs(a) ** 2 - abs(b) ** 2
        if det <= 0:
            raise StructuralError("matrix does not preserve the disk")
        s = math.sqrt(det)
        return cls(a / s, b / s)

    @classmethod
    def identity(cls) -> "MobiusMap":
        return cls(1 + 0j, 0j)

    @classmethod
    def translation(cls, z: complex) -> "MobiusMap":
        """w -> (w + z) / (1 + conj(z) w), sending 0 to z."""
        z = check_point(z)
        s = 1 / math.sqrt(1 - abs(z) ** 2)
        return cls(complex(s), z * s)

    @classmethod
    def rotation(cls, theta: float) -> "MobiusMap":
        return cls(cmath.exp(0.5j * theta), 0j)

    def __call__(self, z):
        return (self.a * z + self.b) / (self.b.conjugate() * z + self.a.conjugate())

    def compose(self, other: "MobiusMap") -> "MobiusMap":
        """self o other."""
        a = self.a * other.a + self.b * other.b.conjugate()
        b = self.a * other.b + self.b * other.a.conjugate()
        return MobiusMap.normalized(a, b)

    def inverse(self) -> "MobiusMap":
        return MobiusMap(self.a.conjugate(), -self.b)

    def derivative_arg(self, z):
        return -2.0 * np.angle(self.b.conjugate() * z + self.a.conjugate())

    def translation_length(self) -> float:
        tr = abs(self.a.real)
        return 2.0 * math.acosh(tr) if tr > 1 else 0.0

    def distance_to(self, other: "MobiusMap") -> float:
        """Entrywise distance up to the sign of the matrix."""
        d1 = abs(self.a - other.a) + abs(self.b - other.b)
        d2 = abs(self.a + other.a) + abs(self.b + other.b)
        return min(d1, d2)


def mobius_act(g: MobiusMap, w: LineElement) -> LineElement:
    return LineElement(g(w.base), w.angle + float(g.derivative_arg(w.base)))


def geodesic_flow(w: LineElement, t: float) -> LineElement:
    """Move distance t along the geodesic through w (backwards for t < 0)."""
    at_origin = LineElement(math.tanh(t / 2) * cmath.exp(1j * w.angle), w.angle)
    return mobius_act(MobiusMap.translation(w.base), at_origin)


# ============================================
# BALLS AND ANGLE WINDOWS
# ============================================
def ball_euclid(w: complex, eta: float) -> Tuple[complex, float]:
    """Euclidean centre and radius of the hyperbolic ball N(w, eta)."""
    w = check_point(w)
    if eta <= 0:
        raise DomainError(f"eta must be positive, got {eta}")
    delta = math.tanh(eta / 2)
    den = 1 - delta ** 2 * abs(w) ** 2
    centre = (1 - delta ** 2) * w / den
    radius = delta * (1 - abs(w) ** 2) / den
    if abs(centre) + radius >= 1 - BOUNDARY_GUARD:
        raise DomainError(f"ball N({w}, {eta}) reaches the boundary at double precision")
    return centre, radius


def hyperbolic_area(eta: float) -> float:
    return 4 * math.pi * math.sinh(eta / 2) ** 2


def lambda_window(w: complex, eta: float) -> float:
    """Angle subtended at 0 by N(w, eta)."""
    centre, radius = ball_euclid(w, eta)
    if abs(centre) <= radius:
        raise DomainError("0 lies inside N(w, eta); the subtended angle is undefined")
    return 2.0 * math.asin(radius / abs(centre))


def _circle_ball_arc(R, centre_abs, radius):
    """Length of the arc of the circle |z| = R inside the Euclidean disk B(c, r), vectorized."""
    R = np.asarray(R, dtype=float)
    c = np.asarray(centre_abs, dtype=float)
    r = np.asarray(radius, dtype=float)
    R, c, r = np.broadcast_arrays(R, c, r)
    out = np.zeros(R.shape)
    inside = c + R <= r
    out[inside] = TWO_PI
    meet = (np.abs(R - c) < r) & ~inside & (R > 0) & (c > 0)
    cosv = (R[meet] ** 2 + c[meet] ** 2 - r[meet] ** 2) / (2 * R[meet] * c[meet])
    out[meet] = 2.0 * np.arccos(np.clip(cosv, -1.0, 1.0))
    return out


def j_window(w: complex, eta: float, s: float) -> float:
    """Angle measure of {theta: tanh(s/2) e^{i theta} in N(w, eta)}."""
    if s < 0:
        raise DomainError(f"s must be >= 0, got {s}")
    centre, radius = ball_euclid(w, eta)
    return float(_circle_ball_arc(math.tanh(s / 2), abs(centre), radius))


@dataclass(frozen=True)
class AngleWindows:
    lambda_len: Optional[float]
    j_len: float


def angle_windows(w: complex, eta: float, s: float) -> AngleWindows:
    """Lambda is None when 0 lies inside the ball."""
    try:
        lam = lambda_window(w, eta)
    except DomainError:
        lam = None
    return AngleWindows(lam, j_window(w, eta, s))


def _j_len_array(points: np.ndarray, eta: float, s: float) -> np.ndarray:
    """J length for many ball centres w at once (|w| < 1 assumed)."""
    delta = math.tanh(eta / 2)
    m = np.abs(points)
    den = 1 - delta ** 2 * m ** 2
    centre_abs = (1 - delta ** 2) * m / den
    radius = delta * (1 - m ** 2) / den
    return _circle_ball_arc(np.full(points.shape, math.tanh(s / 2)), centre_abs, radius)


# ============================================
# GROUPS
# ============================================
@dataclass(frozen=True)
class GroupElement:
    map: MobiusMap
    word: Tuple[int, ...]
    length: int
    theta_image: Tuple[int, ...]

    def displacement(self, x: complex = 0j) -> float:
        return hyp_dist(x, self.map(x))


@dataclass(frozen=True, eq=False)
class FuchsianGroup:
    """
    Generators g_0 .. g_{m-1}, with inverse[i] the index of g_i^{-1}; theta[i] is
    the image of g_i in Z^kappa_max.
    """
    name: str
    generators: Tuple[MobiusMap, ...]
    inverse: Tuple[int, ...]
    theta: Tuple[Tuple[int, ...], ...]
    relator: Optional[Tuple[int, ...]] = None
    _store: Dict[int, "Enumeration"] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        m = len(self.generators)
        if len(self.inverse) != m or sorted(self.inverse) != list(range(m)):
            raise StructuralError("inverse pairing must be a permutation of the generator indices")
        for i, j in enumerate(self.inverse):
            if self.inverse[j] != i:
                raise StructuralError(f"inverse pairing is not an involution at {i}")
            if self.generators[i].compose(self.generators[j]).distance_to(MobiusMap.identity()) > 1e-9:
                raise StructuralError(f"generator {j} is not the inverse of generator {i}")
        if len(self.theta) != m:
            raise StructuralError("theta needs one row per generator")
        for i, j in enumerate(self.inverse):
            if any(a != -b for a, b in zip(self.theta[i], self.theta[j])):
                raise StructuralError(f"theta is not a homomorphism on the pair ({i}, {j})")
        if self.relator is not None:
            err = evaluate_word(self, self.relator).distance_to(MobiusMap.identity())
            if err > 1e-9:
                raise StructuralError(f"relator evaluates {err:.3g} away from +-identity")

    @property
    def rank(self) -> int:
        return len(self.theta[0]) if self.theta else 0

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(group_to_dict(self), sort_keys=True).encode()).hexdigest()[:16]


def evaluate_word(G: FuchsianGroup, word: Sequence[int]) -> MobiusMap:
    g = MobiusMap.identity()
    for letter in word:
        g = g.compose(G.generators[letter])
    return g


def group_to_dict(G: FuchsianGroup) -> dict:
    return {
        "name": G.name,
        "generators": [{"a": [g.a.real, g.a.imag], "b": [g.b.real, g.b.imag]} for g in G.generators],
        "inverse": list(G.inverse),
        "theta": [list(row) for row in G.theta],
        "relator": list(G.relator) if G.relator is not None else None,
    }


def group_from_dict(data: Mapping) -> FuchsianGroup:
    try:
        gens = tuple(MobiusMap.normalized(complex(*g["a"]), complex(*g["b"])) for g in data["generators"])
        relator = tuple(data["relator"]) if data.get("relator") is not None else None
        return FuchsianGroup(data.get("name", "custom"), gens, tuple(data["inverse"]),
                             tuple(tuple(int(c) for c in row) for row in data["theta"]), relator)
    except CustomException:
        raise
    except Exception as e:
        raise CustomException(e, sys)


def schottky_group() -> FuchsianGroup:
    """Free group on two hyperbolic translations along the real and imaginary axes."""
    s3 = math.sqrt(3.0)
    A = MobiusMap(2 + 0j, complex(s3, 0))
    B = MobiusMap(2 + 0j, complex(0, s3))
    gens = (A, A.inverse(), B, B.inverse())
    theta = ((1, 0), (-1, 0), (0, 1), (0, -1))
    return FuchsianGroup("schottky", gens, (1, 0, 3, 2), theta)


def _vertex_cycle(gens: Sequence[MobiusMap], inverse: Sequence[int]) -> Tuple[int, ...]:
    """Shortest cyclic word using every generator once that evaluates to +-identity."""
    letters = list(range(len(gens)))
    identity = MobiusMap.identity()
    for rest in itertools.permutations(letters[1:]):
        word = (0,) + rest
        if any(inverse[a] == b for a, b in zip(word, word[1:] + word[:1])):
            continue
        g = identity
        for letter in word:
            g = g.compose(gens[letter])
        if g.distance_to(identity) < 1e-9:
            return word
    raise StructuralError("no vertex cycle relator found for the side pairings")


def octagon_group() -> FuchsianGroup:
    """
    Genus-2 surface group of the regular octagon with interior angles pi/4;
    generator 2k translates along the direction k*pi/4 and pairs opposite sides.
    """
    cosh_half = 1 + math.sqrt(2.0)
    sinh_half = math.sqrt(cosh_half ** 2 - 1)
    gens, theta = [], []
    for k in range(4):
        T = MobiusMap(complex(cosh_half), sinh_half * cmath.exp(1j * k * math.pi / 4))
        gens.extend([T, T.inverse()])
        e = [0, 0, 0, 0]
        e[k] = 1
        theta.extend([tuple(e), tuple(-c for c in e)])
    inverse = (1, 0, 3, 2, 5, 4, 7, 6)
    relator = _vertex_cycle(gens, inverse)
    logging.info(f"octagon relator word {relator}")
    return FuchsianGroup("octagon", tuple(gens), inverse, tuple(theta), relator)


# ============================================
# ENUMERATION
# ============================================
@dataclass(frozen=True)
class Enumeration:
    group: str
    max_len: int
    elements: Tuple[GroupElement, ...]
    level_counts: Tuple[int, ...]

    def displacements(self, x: complex = 0j) -> np.ndarray:
        x = check_point(x)
        pts = np.array([e.map(x) for e in self.elements])
        return 2.0 * np.arctanh(np.abs(pts - x) / np.abs(1 - np.conj(x) * pts))


def _canonical(g: MobiusMap) -> np.ndarray:
    v = np.array([g.a.real, g.a.imag, g.b.real, g.b.imag])
    if v[0] < 0 or (v[0] == 0 and v[1] < 0):
        v = -v
    return v / max(1.0, abs(g.a))


def _probe_keys(v: np.ndarray) -> List[Tuple[int, ...]]:
    scaled = v / KEY_ROUNDING
    base = np.round(scaled).astype(np.int64)
    options = []
    for c, b in zip(scaled, base):
        frac = c - b
        near = b + (1 if frac > 0 else -1)
        options.append((int(b), int(near)) if abs(frac) > 0.4 else (int(b),))
    return [tuple(k) for k in itertools.product(*options)]


def _cache_path(G: FuchsianGroup, max_len: int) -> Optional[str]:
    root = os.environ.get("ERGODIC_LAB_CACHE")
    if not root:
        return None
    return os.path.join(root, f"{G.name}-{G.digest()}-{max_len}.json")


def _load_cached(G: FuchsianGroup, path: str, max_len: int) -> Optional[Enumeration]:
    if not os.path.exists(path):
        return None
    with open(path, "r") as file:
        data = json.load(file)
    elements = tuple(_element(G, tuple(word)) for word in data["words"])
    logging.info(f"loaded {len(elements)} elements of '{G.name}' from cache {path}")
    return Enumeration(G.name, max_len, elements, tuple(data["level_counts"]))


def _element(G: FuchsianGroup, word: Tuple[int, ...]) -> GroupElement:
    theta = [0] * G.rank
    for letter in word:
        theta = [a + b for a, b in zip(theta, G.theta[letter])]
    return GroupElement(evaluate_word(G, word), word, len(word), tuple(theta))


class _DedupStore:
    """Group elements keyed by their rounded canonical matrices."""

    def __init__(self):
        self.seen: Dict[Tuple[int, ...], int] = {}
        self.elements: List[GroupElement] = []

    def add(self, elem: GroupElement) -> bool:
        keys = _probe_keys(_canonical(elem.map))
        if any(k in self.seen for k in keys):
            return False
        if len(self.elements) >= MAX_ELEMENTS:
            raise ResourceError(f"enumeration exceeds {MAX_ELEMENTS} elements; lower max_len")
        self.seen[keys[0]] = len(self.elements)
        self.elements.append(elem)
        return True


def deduplicate(elements: Sequence[GroupElement]) -> Tuple[GroupElement, ...]:
    """First occurrence of every distinct matrix, in input order."""
    store = _DedupStore()
    for elem in elements:
        store.add(elem)
    return tuple(store.elements)


def _collision_audit(elements: Sequence[GroupElement]) -> None:
    coords = np.array([_canonical(e.map) for e in elements])
    close = cKDTree(coords).query_pairs(10 * KEY_ROUNDING)
    for i, j in sorted(close):
        if elements[i].map.distance_to(elements[j].map) > 1e-9 * max(1.0, abs(elements[i].map.a)):
            raise StructuralError(f"distinct elements {elements[i].word} and {elements[j].word} collide "
                                  f"within the rounding radius; use a finer rounding")


def enumerate_group(G: FuchsianGroup, max_len: int, guard: int = MAX_WORD_LENGTH) -> Enumeration:
    """
    All distinct elements of word length <= max_len by breadth-first search.

    Elements are deduplicated on rounded, sign-normalized matrix entries, so
    each carries its minimal word length.
    """
    if max_len < 0:
        raise DomainError(f"max_len must be >= 0, got {max_len}")
    if max_len > guard:
        raise ResourceError(f"max_len {max_len} exceeds the enumeration guard {guard}")
    if max_len in G._store:
        return G._store[max_len]
    path = _cache_path(G, max_len)
    if path:
        cached = _load_cached(G, path, max_len)
        if cached is not None:
            G._store[max_len] = cached
            return cached

    store = _DedupStore()
    identity = GroupElement(MobiusMap.identity(), (), 0, (0,) * G.rank)
    store.add(identity)
    frontier = [identity]
    counts = [1]
    for level in range(1, max_len + 1):
        nxt = []
        for elem in frontier:
            last = elem.word[-1] if elem.word else None
            for letter, gen in enumerate(G.generators):
                if last is not None and G.inverse[last] == letter:
                    continue
                theta = tuple(a + b for a, b in zip(elem.theta_image, G.theta[letter]))
                child = GroupElement(elem.map.compose(gen), elem.word + (letter,), level, theta)
                if store.add(child):
                    nxt.append(child)
        counts.append(len(nxt))
        frontier = nxt
        logging.info(f"enumeration of '{G.name}': level {level} adds {len(nxt)} elements")

    _collision_audit(store.elements)
    result = Enumeration(G.name, max_len, tuple(store.elements), tuple(counts))
    G._store[max_len] = result
    if path:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w") as file:
            json.dump({"words": [list(e.word) for e in store.elements], "level_counts": counts}, file)
    return result


def word_metric_band(G: FuchsianGroup, max_len: int) -> BandVerdict:
    """Band of rho(0, g(0)) / l(g) over the enumerated non-identity elements."""
    enum = enumerate_group(G, max_len)
    rho = enum.displacements()
    ratios = [float(r) / e.length for r, e in zip(rho, enum.elements) if e.length > 0]
    band = band_of(ratios, (1, max_len))
    logging.info(f"word metric band of '{G.name}' up to length {max_len}: [{band.low:.4f}, {band.high:.4f}]")
    return band


# ============================================
# CERTIFIED ORBITAL SUMS
# ============================================
def max_certifiable(G: FuchsianGroup, max_len: int, x: complex = 0j) -> float:
    """Largest radius r such that every g with rho(x, g x) <= r has word length <= max_len."""
    band = word_metric_band(G, max_len)
    return band.low * (max_len + 1) - 2 * hyp_dist(0j, x)


def certified_enumeration(G: FuchsianGroup, radius: float, x: complex = 0j,
                          cap: int = MAX_WORD_LENGTH) -> Enumeration:
    for max_len in range(1, cap + 1):
        if max_certifiable(G, max_len, x) > radius:
            return enumerate_group(G, max_len)
    best = max_certifiable(G, cap, x)
    raise CoverageError(f"radius {radius:.4f} cannot be certified for '{G.name}' at word length {cap}; "
                        f"max certifiable radius is {best:.4f}", max_certifiable=best)


def _theta_mask(enum: Enumeration, kappa: Optional[int]) -> np.ndarray:
    if not kappa:
        return np.ones(len(enum.elements), dtype=bool)
    return np.array([all(c == 0 for c in e.theta_image[:kappa]) for e in enum.elements], dtype=bool)


def _annulus_terms(G: FuchsianGroup, x: complex, lo: float, hi: float,
                   kappa: Optional[int] = None) -> Tuple[Enumeration, np.ndarray]:
    enum = certified_enumeration(G, hi, x)
    rho = enum.displacements(x)
    mask = (rho >= lo) & (rho <= hi) & _theta_mask(enum, kappa)
    return enum, np.sort(rho[mask])


def orbital_sum(G: FuchsianGroup, x: complex, t: float, eps: float, kappa: Optional[int] = None) -> float:
    """Sum of e^{-rho(x, g x)} over g with rho(x, g x) in [t - eps, t + eps] (g in Ker Theta_kappa if kappa)."""
    if eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps}")
    _, rho = _annulus_terms(G, x, t - eps, t + eps, kappa)
    return math.fsum(np.exp(-rho))


def hopf_tsuji_sum(G: FuchsianGroup, x: complex, t: float) -> float:
    """Sum of e^{-rho(x, g x)} over g with rho(x, g x) <= t."""
    _, rho = _annulus_terms(G, x, 0.0, t)
    return math.fsum(np.exp(-rho))


# ============================================
# CORRELATION INTEGRALS
# ============================================
def _ball_nodes(x: complex, eps: float, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on N(x, eps) in polar coordinates, weighted by the hyperbolic area element."""
    centre, radius = ball_euclid(x, eps)
    u, wu = leggauss(order)
    r = radius * (u + 1) / 2
    wr = wu * radius / 2
    alpha = math.pi * (u + 1)
    wa = wu * math.pi
    R, A = np.meshgrid(r, alpha, indexing="ij")
    W = np.outer(wr, wa) * R
    z = centre + R * np.exp(1j * A)
    W = W * 4.0 / (1 - np.abs(z) ** 2) ** 2
    return z.ravel(), W.ravel()


def _phi_inverse(z: np.ndarray, y: complex) -> np.ndarray:
    """phi_z^{-1}(y) = (y - z) / (1 - conj(z) y) for an array of z."""
    return (y - z) / (1 - np.conj(z) * y)


def _adaptive(integrand, x: complex, eps: float, tolerance: float, start: int = 16, max_order: int = 256) -> float:
    """Tensor Gauss on N(x, eps), doubling the order until two consecutive doublings agree."""
    order, values = start, []
    while order <= max_order:
        z, w = _ball_nodes(x, eps, order)
        values.append(float(np.dot(w, integrand(z))))
        if len(values) >= 3:
            scale = max(abs(values[-1]), 1e-300)
            if max(abs(values[-1] - values[-2]), abs(values[-2] - values[-3])) <= tolerance * scale:
                return values[-1]
        order *= 2
    achieved = abs(values[-1] - values[-2]) / max(abs(values[-1]), 1e-300) if len(values) > 1 else math.inf
    raise AccuracyError(f"quadrature did not reach relative tolerance {tolerance:g} by order {max_order}",
                        achieved=achieved)


def circle_arc(r: float, D: float, eta: float) -> float:
    """
    Angle, seen from its centre c, of the part of the hyperbolic circle of radius r
    lying in N(p, eta), where rho(c, p) = D.
    """
    if r <= 0 or D <= 0:
        return TWO_PI if max(r, D) < eta else 0.0
    if r + D <= eta:
        return TWO_PI
    if abs(r - D) >= eta:
        return 0.0
    cosv = (math.cosh(D) * math.cosh(r) - math.cosh(eta)) / (math.sinh(D) * math.sinh(r))
    return 2.0 * math.acos(min(1.0, max(-1.0, cosv)))


def pair_correlation(D: float, eps: float, s: float, tolerance: float = 1e-6) -> Tuple[float, float]:
    """
    m(Delta(x, eps) and phi^{-s} Delta(y, eps)) for rho(x, y) = D, with its error estimate.

    The J length at z depends only on rho(z, y), so the ball integral is the radial
    integral of J(r) * (arc of the circle S(y, r) inside N(x, eps)) * sinh r.
    """
    lo, hi = max(0.0, D - eps, s - eps), min(D + eps, s + eps)
    if hi <= lo:
        return 0.0, 0.0
    breaks = sorted({abs(D - eps), D + eps, abs(s - eps), s + eps, eps - D, eps - s})
    points = [b for b in breaks if lo < b < hi]
    value, err = quad(lambda r: circle_arc(s, r, eps) * circle_arc(r, D, eps) * math.sinh(r), lo, hi,
                      points=points or None, epsabs=0.0, epsrel=tolerance, limit=200)
    return float(value), float(err)


def correlation_integral(G: FuchsianGroup, x: complex, eps: float, s: float, tolerance: float = 1e-6) -> float:
    """
    m(Delta(x, eps) and phi^{-s} Delta(x, eps)) with dm = dA dtheta: the sum over the
    orbit points g x within s +- 2 eps of the radial pair integrals.
    """
    if s < 0:
        raise DomainError(f"s must be >= 0, got {s}")
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    x = check_point(x)
    enum = certified_enumeration(G, s + 2 * eps, x)
    rho = enum.displacements(x)
    total, error = 0.0, 0.0
    for D in sorted(float(r) for r in rho if s - 2 * eps <= r <= s + 2 * eps):
        value, err = pair_correlation(D, eps, s, tolerance)
        total += value
        error += err
    if total > 0 and error > tolerance * total:
        raise AccuracyError(f"correlation quadrature error {error / total:.3g} above relative tolerance {tolerance:g}",
                            achieved=error / total)
    return total


@dataclass(frozen=True)
class Sandwich:
    correlation: float
    lower_sum: float
    upper_sum: float
    upper_constant: Optional[float]

    @property
    def lower_ratio(self) -> float:
        return self.correlation / self.lower_sum if self.lower_sum > 0 else math.inf

    @property
    def upper_ratio(self) -> float:
        return self.correlation / self.upper_sum if self.upper_sum > 0 else 0.0


def correlation_sandwich(G: FuchsianGroup, x: complex, eps: float, s: float, tolerance: float = 1e-6) -> Sandwich:
    """
    Correlation integral against the eps/2 and 2 eps annulus sums.

    Every contributing summand has rho(z, g x) >= s - 3 eps, so for s > 4 eps
    J <= Lambda <= 4 pi delta e^{eps} e^{-rho(x, g x)} / ((1 - delta^2)(1 - e^{-2(s - 3 eps)})),
    which gives the explicit upper constant.
    """
    corr = correlation_integral(G, x, eps, s, tolerance)
    lower = orbital_sum(G, x, s, eps / 2)
    upper = orbital_sum(G, x, s, 2 * eps)
    constant = None
    if s > 4 * eps:
        delta = math.tanh(eps / 2)
        constant = hyperbolic_area(eps) * 4 * math.pi * delta * math.exp(eps) / (
            (1 - delta ** 2) * (1 - math.exp(-2 * (s - 3 * eps))))
    return Sandwich(corr, lower, upper, constant)


def _arcs(points: np.ndarray, eps: float, dist: float) -> List[Tuple[float, float]]:
    """Angle arcs (start, end) in [0, 2 pi) of directions at distance `dist` landing in N(p, eps)."""
    out = []
    lengths = _j_len_array(points, eps, dist)
    for p, length in zip(points, lengths):
        if length <= 0:
            continue
        if length >= TWO_PI:
            return [(0.0, TWO_PI)]
        mid = math.atan2(p.imag, p.real) % TWO_PI
        lo, hi = mid - length / 2, mid + length / 2
        if lo < 0:
            out.extend([(lo + TWO_PI, TWO_PI), (0.0, hi)])
        elif hi > TWO_PI:
            out.extend([(lo, TWO_PI), (0.0, hi - TWO_PI)])
        else:
            out.append((lo, hi))
    return _merge(out)


def _merge(arcs: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    merged: List[Tuple[float, float]] = []
    for lo, hi in sorted(arcs):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def _intersect(a: List[Tuple[float, float]], b: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    out, i, j = [], 0, 0
    while i < len(a) and j < len(b):
        lo, hi = max(a[i][0], b[j][0]), min(a[i][1], b[j][1])
        if lo < hi:
            out.append((lo, hi))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


@dataclass(frozen=True)
class GeodesicCorrelation:
    lhs: float
    rhs_product: float
    ratio: float


def multi_correlation_geodesic(G: FuchsianGroup, x: complex, eps: float, gaps: Sequence[float],
                               tolerance: float = 1e-6, arc_tolerance: float = 1e-3,
                               max_terms: int = 20_000) -> GeodesicCorrelation:
    """
    m(intersection over j <= p of phi^{-(s_1 + ... + s_j)} Delta(x, eps)) against
    prod_k m(Delta(x, 4 eps) and phi^{-s_k} Delta(x, 4 eps)).

    Single correlations are radial integrals held to `tolerance`; the p-fold
    intersection for p >= 2 is a tensor Gauss cubature held to `arc_tolerance`.
    """
    if not gaps:
        raise DomainError("need at least one gap")
    if any(s < 0 for s in gaps):
        raise DomainError("gaps must be nonnegative")
    x = check_point(x)
    rhs = 1.0
    for s in gaps:
        rhs *= correlation_integral(G, x, 4 * eps, s, tolerance)
    if len(gaps) == 1:
        lhs = correlation_integral(G, x, eps, gaps[0], tolerance)
    else:
        partial = list(itertools.accumulate(gaps))
        enum = certified_enumeration(G, partial[-1] + 2 * eps, x)
        rho = enum.displacements(x)
        images = np.array([e.map(x) for e in enum.elements])
        per_gap = [images[(rho >= S - 2 * eps) & (rho <= S + 2 * eps)] for S in partial]
        if sum(len(p) for p in per_gap) > max_terms:
            raise ResourceError(f"{sum(len(p) for p in per_gap)} orbit points in the annuli exceed {max_terms}")
        if any(len(p) == 0 for p in per_gap):
            lhs = 0.0
        else:
            def integrand(z):
                out = np.empty(z.shape)
                for idx, zz in enumerate(z):
                    current = [(0.0, TWO_PI)]
                    for S, pts in zip(partial, per_gap):
                        current = _intersect(current, _arcs(_phi_inverse(zz, pts), eps, S))
                        if not current:
                            break
                    out[idx] = sum(hi - lo for lo, hi in current)
                return out

            lhs = _adaptive(integrand, x, eps, arc_tolerance, start=8, max_order=128)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    logging.info(f"geodesic multi-correlation gaps={list(gaps)}: lhs={lhs:.6g}, rhs={rhs:.6g}, ratio={ratio:.6g}")
    return GeodesicCorrelation(lhs, rhs, ratio)


# ============================================
# COVER COUNTING
# ============================================
@dataclass(frozen=True)
class CoverCounting:
    t_grid: Tuple[float, ...]
    normalized: SeqPrefix
    band: Optional[BandVerdict]


def cover_counting(G: FuchsianGroup, kappa: int, t_grid: Sequence[float], eps: float,
                   x: complex = 0j) -> CoverCounting:
    """t^{kappa/2} times the Ker Theta_kappa annulus sums over the grid."""
    if kappa < 0 or kappa > G.rank:
        raise DomainError(f"kappa must lie in [0, {G.rank}], got {kappa}")
    values = tuple(t ** (kappa / 2) * orbital_sum(G, x, t, eps, kappa) for t in t_grid)
    positive = [v for v in values if v > 0]
    band = band_of(positive, (0, len(values) - 1)) if positive else None
    return CoverCounting(tuple(t_grid), SeqPrefix(0, values, nonnegative=True), band)


# ============================================
# PROPERTY CHECKS
# ============================================
@dataclass(frozen=True)
class GeometryCheck:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _random_points(rng: np.random.Generator, n: int, max_rho: float) -> np.ndarray:
    radius = np.tanh(rng.uniform(0.0, max_rho, n) / 2)
    return radius * np.exp(1j * rng.uniform(0.0, TWO_PI, n))


def _random_map(rng: np.random.Generator, max_rho: float) -> MobiusMap:
    z = complex(_random_points(rng, 1, max_rho)[0])
    return MobiusMap.translation(z).compose(MobiusMap.rotation(rng.uniform(0.0, TWO_PI)))


def _random_element(rng: np.random.Generator, max_rho: float) -> LineElement:
    return LineElement(complex(_random_points(rng, 1, max_rho)[0]), rng.uniform(0.0, TWO_PI))


def _angle_gap(a: float, b: float) -> float:
    d = abs(a - b) % TWO_PI
    return min(d, TWO_PI - d)


def _element_gap(v: LineElement, w: LineElement) -> float:
    return max(abs(v.base - w.base), _angle_gap(v.angle, w.angle))


def geometry_checks(samples: int = 1000, seed: int = 0, max_rho: float = 3.0) -> List[GeometryCheck]:
    """Random-sample checks of the disk-model identities; all errors are absolute."""
    if samples < 1:
        raise DomainError(f"samples must be >= 1, got {samples}")
    rng = np.random.default_rng(seed)
    errors = {name: 0.0 for name in ("isometry", "symmetry", "flow-additivity", "flow-commutes",
                                     "flip-anticommutes", "ball-boundary")}
    for _ in range(samples):
        g = _random_map(rng, max_rho)
        x, y = (complex(p) for p in _random_points(rng, 2, max_rho))
        errors["isometry"] = max(errors["isometry"], abs(hyp_dist(g(x), g(y)) - hyp_dist(x, y)))
        errors["symmetry"] = max(errors["symmetry"], abs(hyp_dist(x, y) - hyp_dist(y, x)))

        w = _random_element(rng, max_rho)
        s, t = rng.uniform(-max_rho, max_rho, 2)
        gap = _element_gap(geodesic_flow(w, s + t), geodesic_flow(geodesic_flow(w, t), s))
        errors["flow-additivity"] = max(errors["flow-additivity"], gap)
        gap = _element_gap(mobius_act(g, geodesic_flow(w, t)), geodesic_flow(mobius_act(g, w), t))
        errors["flow-commutes"] = max(errors["flow-commutes"], gap)
        gap = _element_gap(geodesic_flow(w, t).flip(), geodesic_flow(w.flip(), -t))
        errors["flip-anticommutes"] = max(errors["flip-anticommutes"], gap)

        eta = rng.uniform(0.01, 1.0)
        centre, radius = ball_euclid(x, eta)
        u = x / abs(x) if abs(x) > 0 else 1 + 0j
        for p in (centre + radius * u, centre - radius * u):
            errors["ball-boundary"] = max(errors["ball-boundary"], abs(hyp_dist(x, p) - eta))

    checks = [GeometryCheck(name, err, 1e-9) for name, err in errors.items()]

    # small-step walk: determinant stays normalized and the reversed walk returns to the identity
    g, steps, det_err = MobiusMap.identity(), [], 0.0
    for _ in range(10 * samples):
        step = MobiusMap.translation(0.02 * complex(np.exp(1j * rng.uniform(0.0, TWO_PI))))
        steps.append(step)
        g = g.compose(step)
        det_err = max(det_err, abs(abs(g.a) ** 2 - abs(g.b) ** 2 - 1))
    for step in reversed(steps):
        g = g.compose(step.inverse())
    checks.append(GeometryCheck("determinant", det_err, 1e-10))
    checks.append(GeometryCheck("walk-return", g.distance_to(MobiusMap.identity()), 1e-8))
    for check in checks:
        logging.info(f"geometry check {check.name}: max error {check.max_error:.3g} (tolerance {check.tolerance:g})")
    return checks


def lambda_by_sampling(w: complex, eta: float, points: int = 1_000_000) -> float:
    """Angle measure of rays from 0 that meet N(w, eta), by equally spaced directions."""
    centre, radius = ball_euclid(w, eta)
    theta = TWO_PI * (np.arange(points) + 0.5) / points
    rel = centre * np.exp(-1j * theta)
    hits = (np.abs(rel.imag) < radius) & (rel.real > 0)
    return TWO_PI * np.count_nonzero(hits) / points


@dataclass(frozen=True)
class WindowGridCheck:
    points: int
    iff_failures: int
    containment_failures: int

    @property
    def passed(self) -> bool:
        return self.iff_failures == 0 and self.containment_failures == 0


def window_grid_check(n_rho: int = 50, n_s: int = 50, n_eta: int = 10,
                      rho_max: float = 6.0, eta_max: float = 0.3) -> WindowGridCheck:
    """
    On a grid of (rho(0, w), s, eta): J > 0 iff |rho(0, w) - s| < eta, and J <= Lambda
    wherever Lambda is defined. Grid points within 1e-9 of the tangency are skipped.
    """
    rhos = np.linspace(rho_max / n_rho, rho_max, n_rho)
    ss = np.linspace(rho_max / n_s, rho_max, n_s)
    etas = np.linspace(eta_max / n_eta, eta_max, n_eta)
    checked = iff_fail = contain_fail = 0
    for i, rho in enumerate(rhos):
        w = math.tanh(rho / 2) * cmath.exp(1j * i)
        for eta in etas:
            centre, radius = ball_euclid(w, eta)
            lengths = _circle_ball_arc(np.tanh(ss / 2), abs(centre), radius)
            lam = lambda_window(w, eta) if rho > eta else None
            for s, length in zip(ss, lengths):
                margin = abs(rho - s) - eta
                if abs(margin) < 1e-9:
                    continue
                checked += 1
                if (length > 0) != (margin < 0):
                    iff_fail += 1
                if lam is not None and length > lam + 1e-12:
                    contain_fail += 1
    logging.info(f"angle window grid: {checked} points, {iff_fail} iff failures, {contain_fail} containment failures")
    return WindowGridCheck(checked, iff_fail, contain_fail)


@dataclass(frozen=True)
class FundamentalDomainCheck:
    points: int
    elements: int
    violations: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _dist_array(x, y) -> np.ndarray:
    return 2.0 * np.arctanh(np.abs(x - y) / np.abs(1 - np.conj(x) * y))


def _in_generator_domain(G: FuchsianGroup, points: np.ndarray, margin: float = 1e-9) -> np.ndarray:
    """Points strictly closer to 0 than to every generator image of 0."""
    d0 = _dist_array(0j, points)
    mask = np.ones(points.shape, dtype=bool)
    for g in G.generators:
        mask &= d0 < _dist_array(g(0j), points) - margin
    return mask


def fundamental_domain_check(G: FuchsianGroup, max_len: int = 4, samples: int = 2000,
                             seed: int = 0, max_rho: float = 3.0) -> FundamentalDomainCheck:
    """
    Sample the polygon cut out by the generator bisectors at 0 and count the
    non-identity elements of length <= max_len that move a sample back inside.
    """
    rng = np.random.default_rng(seed)
    pts = _random_points(rng, samples, max_rho)
    pts = pts[_in_generator_domain(G, pts)]
    enum = enumerate_group(G, max_len)
    violations = 0
    for elem in enum.elements:
        if elem.length == 0:
            continue
        violations += int(np.count_nonzero(_in_generator_domain(G, elem.map(pts))))
    logging.info(f"fundamental domain of '{G.name}': {len(pts)} points, "
                 f"{len(enum.elements) - 1} elements, {violations} violations")
    return FundamentalDomainCheck(len(pts), len(enum.elements) - 1, violations)
