"""Probability densities, importance-sampling weights, and input samplers.

Provides the nominal density f_X and biased density g as composable specs,
a hierarchical flood-input law (offshore conditions plus a conditional
breach), Sobol training designs, and seeded sampling whose first n draws
coincide with any longer run from the same seed (prefix coherence).

Mixed measures (an atom plus a continuous part) evaluate to the atom MASS
exactly at the atom and to the DENSITY elsewhere, so importance ratios f/g
compare mass to mass and density to density.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.stats import qmc

__all__ = [
    "CoordSupport",
    "DensitySpec",
    "PiecewiseUniform",
    "TruncatedParametric",
    "DiscreteUniform",
    "AtomPlusUniform",
    "Product",
    "BreachPair",
    "FloodInputs",
    "OffshoreConditions",
    "SampleStream",
    "named_seed",
    "density_eval",
    "density_batch",
    "is_weight",
    "is_weight_batch",
    "sample",
    "signal_max",
    "breach_conditional",
    "sobol_design",
    "supports_subset",
    "is_mean_se",
    "density_to_config",
    "density_from_config",
]

_MASS_TOL = 1e-9

# Default semidiurnal tidal period, hours.
TIDAL_PERIOD_HOURS = 12.4


@dataclass(frozen=True)
class CoordSupport:
    """Support of one input coordinate: exact atoms plus closed intervals."""

    atoms: tuple[float, ...] = ()
    intervals: tuple[tuple[float, float], ...] = ()


class DensitySpec:
    """Base class for input densities.

    Subclasses define ``dim`` (coordinates per sample), ``n_uniforms``
    (uniform variates consumed per sample, a fixed count so that longer
    sample runs extend shorter ones), ``density_batch`` and ``transform``.
    """

    dim: int = 1
    n_uniforms: int = 1

    def density_batch(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def transform(self, U: np.ndarray) -> np.ndarray:
        """Map an (n, n_uniforms) array of U(0,1) variates to (n, dim) samples."""
        raise NotImplementedError

    def support(self) -> tuple[CoordSupport, ...]:
        raise NotImplementedError


def _as_points(spec: DensitySpec, x) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != spec.dim:
        raise ValueError(f"expected points of dimension {spec.dim}, got {X.shape[1]}")
    return X


@dataclass(frozen=True)
class PiecewiseUniform(DensitySpec):
    """Histogram density: constant on each bin, total mass 1.

    A single-bin instance is the plain uniform distribution on an interval.
    """

    breaks: tuple[float, ...]
    densities: tuple[float, ...]

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=np.float64)
        d = np.asarray(self.densities, dtype=np.float64)
        if b.ndim != 1 or b.size < 2 or d.shape != (b.size - 1,):
            raise ValueError("need m+1 ascending breaks and m densities")
        if np.any(np.diff(b) <= 0):
            raise ValueError("breaks must be strictly ascending")
        if np.any(d < 0):
            raise ValueError("densities must be nonnegative")
        mass = float(np.dot(d, np.diff(b)))
        if abs(mass - 1.0) > _MASS_TOL:
            raise ValueError(f"total mass is {mass}, expected 1")
        object.__setattr__(self, "breaks", tuple(float(v) for v in b))
        object.__setattr__(self, "densities", tuple(float(v) for v in d))

    @classmethod
    def interval(cls, lower: float, upper: float) -> "PiecewiseUniform":
        return cls((lower, upper), (1.0 / (upper - lower),))

    def density_batch(self, X: np.ndarray) -> np.ndarray:
        x = X[:, 0]
        b = np.asarray(self.breaks)
        d = np.asarray(self.densities)
        idx = np.searchsorted(b, x, side="right") - 1
        idx = np.where(x == b[-1], b.size - 2, idx)  # top edge belongs to the last bin
        inside = (idx >= 0) & (idx <= b.size - 2)
        out = np.zeros_like(x)
        out[inside] = d[idx[inside]]
        return out

    def transform(self, U: np.ndarray) -> np.ndarray:
        b = np.asarray(self.breaks)
        widths = np.diff(b)
        masses = np.asarray(self.densities) * widths
        cmass = np.cumsum(masses)
        cmass[-1] = 1.0
        u = U[:, 0]
        idx = np.searchsorted(cmass, u, side="right")
        idx = np.minimum(idx, masses.size - 1)
        lo_mass = np.concatenate(([0.0], cmass[:-1]))[idx]
        denom = np.where(masses[idx] > 0, masses[idx], 1.0)
        frac = (u - lo_mass) / denom
        return (b[idx] + frac * widths[idx])[:, None]

    def support(self) -> tuple[CoordSupport, ...]:
        ivs = [
            (self.breaks[i], self.breaks[i + 1])
            for i in range(len(self.densities))
            if self.densities[i] > 0
        ]
        return (CoordSupport(intervals=tuple(ivs)),)


_FAMILIES = {
    "normal": lambda p: stats.norm(loc=p["mean"], scale=p["std"]),
    "lognormal": lambda p: stats.lognorm(s=p["sigma"], scale=math.exp(p["mu"])),
    "exponential": lambda p: stats.expon(scale=1.0 / p["rate"]),
    "gumbel": lambda p: stats.gumbel_r(loc=p["loc"], scale=p["scale"]),
}


@dataclass(frozen=True)
class TruncatedParametric(DensitySpec):
    """A named parametric density restricted and renormalized to [lower, upper]."""

    family: str
    params: dict
    lower: float
    upper: float
    _dist: object = field(init=False, repr=False, compare=False)
    _norm: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, options: {sorted(_FAMILIES)}")
        if not self.upper > self.lower:
            raise ValueError("need upper > lower")
        dist = _FAMILIES[self.family](self.params)
        z = float(dist.cdf(self.upper) - dist.cdf(self.lower))
        if z <= 0:
            raise ValueError("truncation interval carries no mass")
        object.__setattr__(self, "_dist", dist)
        object.__setattr__(self, "_norm", z)

    def density_batch(self, X: np.ndarray) -> np.ndarray:
        x = X[:, 0]
        inside = (x >= self.lower) & (x <= self.upper)
        out = np.zeros_like(x)
        out[inside] = self._dist.pdf(x[inside]) / self._norm
        return out

    def transform(self, U: np.ndarray) -> np.ndarray:
        lo = self._dist.cdf(self.lower)
        x = self._dist.ppf(lo + U[:, 0] * self._norm)
        return np.clip(x, self.lower, self.upper)[:, None]

    def support(self) -> tuple[CoordSupport, ...]:
        return (CoordSupport(intervals=((self.lower, self.upper),)),)


@dataclass(frozen=True)
class DiscreteUniform(DensitySpec):
    """Equal mass on a finite list of atoms."""

    atoms: tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(v) for v in self.atoms)
        if len(a) < 1 or len(set(a)) != len(a):
            raise ValueError("atoms must be nonempty and distinct")
        object.__setattr__(self, "atoms", a)

    @classmethod
    def integer_range(cls, lo: int, hi: int) -> "DiscreteUniform":
        return cls(tuple(float(k) for k in range(lo, hi + 1)))

    def density_batch(self, X: np.ndarray) -> np.ndarray:
        x = X[:, 0]
        mass = 1.0 / len(self.atoms)
        out = np.zeros_like(x)
        for a in self.atoms:
            out[x == a] = mass
        return out

    def transform(self, U: np.ndarray) -> np.ndarray:
        m = len(self.atoms)
        idx = np.minimum((U[:, 0] * m).astype(np.int64), m - 1)
        return np.asarray(self.atoms)[idx][:, None]

    def support(self) -> tuple[CoordSupport, ...]:
        return (CoordSupport(atoms=self.atoms),)


@dataclass(frozen=True)
class AtomPlusUniform(DensitySpec):
    """A point mass at ``atom`` plus a uniform layer on (lower, upper].

    Evaluation returns the atom mass exactly at the atom and the continuous
    density uniform_mass/(upper-lower) elsewhere inside the interval.
    """

    atom: float
    atom_mass: float
    lower: float
    upper: float
    uniform_mass: float

    def __post_init__(self):
        if not self.upper > self.lower:
            raise ValueError("need upper > lower")
        if self.atom_mass < 0 or self.uniform_mass < 0:
            raise ValueError("masses must be nonnegative")
        if abs(self.atom_mass + self.uniform_mass - 1.0) > _MASS_TOL:
            raise ValueError("atom_mass + uniform_mass must equal 1")

    def density_batch(self, X: np.ndarray) -> np.ndarray:
        x = X[:, 0]
        dens = self.uniform_mass / (self.upper - self.lower)
        out = np.where((x > self.lower) & (x <= self.upper), dens, 0.0)
        out = np.where(x == self.atom, self.atom_mass, out)
        return out

    def transform(self, U: np.ndarray) -> np.ndarray:
        u = U[:, 0]
        frac = (u - self.atom_mass) / max(self.uniform_mass, np.finfo(float).tiny)
        x = self.lower + frac * (self.upper - self.lower)
        return np.where(u <= self.atom_mass, self.atom, x)[:, None]

    def support(self) -> tuple[CoordSupport, ...]:
        atoms = (self.atom,) if self.atom_mass > 0 else ()
        ivs = ((self.lower, self.upper),) if self.uniform_mass > 0 else ()
        return (CoordSupport(atoms=atoms, intervals=ivs),)


@dataclass(frozen=True)
class Product(DensitySpec):
    """Independent product of component specs; coordinates concatenate."""

    components: tuple[DensitySpec, ...]

    def __post_init__(self):
        if len(self.components) < 1:
            raise ValueError("need at least one component")
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def dim(self) -> int:
        return sum(c.dim for c in self.components)

    @property
    def n_uniforms(self) -> int:
        return sum(c.n_uniforms for c in self.components)

    def density_batch(self, X: np.ndarray) -> np.ndarray:
        out = np.ones(X.shape[0])
        col = 0
        for c in self.components:
            out *= c.density_batch(X[:, col : col + c.dim])
            col += c.dim
        return out

    def transform(self, U: np.ndarray) -> np.ndarray:
        cols = []
        ucol = 0
        for c in self.components:
            cols.append(c.transform(U[:, ucol : ucol + c.n_uniforms]))
            ucol += c.n_uniforms
        return np.concatenate(cols, axis=1)

    def support(self) -> tuple[CoordSupport, ...]:
        out: list[CoordSupport] = []
        for c in self.components:
            out.extend(c.support())
        return tuple(out)


@dataclass(frozen=True)
class BreachPair(DensitySpec):
    """Joint (location, erosion_rate) coordinates in canonical encoding.

    Drawn as independent location and erosion marginals, then canonicalized:
    whenever the erosion rate is 0 (no breach) the location is set to 0.
    Density evaluation follows the same pushforward, so only canonical points
    carry mass: (0, 0) gets the erosion atom mass, (loc, e > 0) the product
    of the location mass and the continuous erosion density.
    """

    location: DiscreteUniform
    erosion: AtomPlusUniform

    dim = 2
    n_uniforms = 2

    def __post_init__(self):
        if self.erosion.atom != 0.0:
            raise ValueError("erosion atom must sit at 0 (no breach)")
        if 0.0 in self.location.atoms:
            raise ValueError("location atoms must not include 0 (reserved for no breach)")

    def density_batch(self, X: np.ndarray) -> np.ndarray:
        loc, ero = X[:, 0], X[:, 1]
        no_breach = ero == 0.0
        atom = np.where(loc == 0.0, self.erosion.atom_mass, 0.0)
        cont = self.location.density_batch(loc[:, None]) * self.erosion.density_batch(ero[:, None])
        return np.where(no_breach, atom, cont)

    def transform(self, U: np.ndarray) -> np.ndarray:
        loc = self.location.transform(U[:, 0:1])[:, 0]
        ero = self.erosion.transform(U[:, 1:2])[:, 0]
        loc = np.where(ero == 0.0, 0.0, loc)
        return np.column_stack([loc, ero])

    def support(self) -> tuple[CoordSupport, ...]:
        ero_sup = self.erosion.support()[0]
        return (
            CoordSupport(atoms=(0.0,) + self.location.atoms),
            ero_sup,
        )


@dataclass(frozen=True)
class OffshoreConditions:
    """Offshore forcing: high-tide level, surge peak, and surge timing.

    T and S are in meters; t0 (phase shift of the surge peak relative to high
    tide), t_minus (rising duration, <= 0) and t_plus (falling duration, >= 0)
    are in hours.
    """

    T: float
    S: float
    t0: float
    t_minus: float
    t_plus: float

    def __post_init__(self):
        if self.t_minus > 0 or self.t_plus < 0:
            raise ValueError("need t_minus <= 0 <= t_plus")


def _surge_batch(t: np.ndarray, S, t0, t_minus, t_plus) -> np.ndarray:
    """Triangular surge: 0 at t0 + t_minus, peak S at t0, 0 at t0 + t_plus."""
    rise_span = np.where(t_minus < 0, -t_minus, 1.0)
    fall_span = np.where(t_plus > 0, t_plus, 1.0)
    rising = np.where(t_minus < 0, (t - t0 - t_minus) / rise_span, 1.0)
    falling = np.where(t_plus > 0, 1.0 - (t - t0) / fall_span, 1.0)
    shape = np.where(t <= t0, rising, falling)
    inside = (t >= t0 + t_minus) & (t <= t0 + t_plus)
    return np.where(inside, S * np.clip(shape, 0.0, 1.0), 0.0)


def signal_max(
    c: OffshoreConditions,
    *,
    period_hours: float = TIDAL_PERIOD_HOURS,
    step_minutes: float = 1.0,
) -> float:
    """Maximum over time of tide(t) + surge(t).

    The tide is T*cos(2*pi*t/period) with high tide at t = 0; the surge is
    the triangle peaking at t0.  The maximum is taken by dense time sampling
    (step <= step_minutes) over a window covering one full tidal cycle and
    the whole surge triangle, with the exact peak instants included so
    aligned-peak cases are computed without grid error.
    """
    half = period_hours / 2.0
    a = min(-half, c.t0 + c.t_minus)
    b = max(half, c.t0 + c.t_plus)
    n = int(math.ceil((b - a) * 60.0 / step_minutes)) + 1
    t = np.linspace(a, b, n)
    extra = np.array([0.0, c.t0, c.t0 + c.t_minus, c.t0 + c.t_plus])
    t = np.concatenate([t, extra[(extra >= a) & (extra <= b)]])
    tide = c.T * np.cos(2.0 * np.pi * t / period_hours)
    surge = _surge_batch(t, c.S, c.t0, c.t_minus, c.t_plus)
    return float(np.max(tide + surge))


def _signal_max_batch(C: np.ndarray, period_hours: float, step_minutes: float) -> np.ndarray:
    out = np.empty(C.shape[0])
    for k in range(C.shape[0]):
        out[k] = signal_max(
            OffshoreConditions(*C[k]), period_hours=period_hours, step_minutes=step_minutes
        )
    return out


def breach_conditional(
    c: OffshoreConditions,
    embankment_height: float,
    *,
    p_high: float = 0.5,
    p_low: float = 1e-4,
    crest_fraction: float = 0.7,
    period_hours: float = TIDAL_PERIOD_HOURS,
):
    """Conditional breach law given the offshore conditions.

    Returns (probability_of_breach, location_law, erosion_law).  The
    probability is p_high when the peak of tide + surge strictly exceeds
    crest_fraction * embankment_height, else p_low; given a breach, the
    location is uniform on {1..10} and the erosion rate uniform on (0, 1].
    """
    if embankment_height <= 0:
        raise ValueError("embankment_height must be positive")
    peak = signal_max(c, period_hours=period_hours)
    p = p_high if peak > crest_fraction * embankment_height else p_low
    return p, DiscreteUniform.integer_range(1, 10), PiecewiseUniform.interval(0.0, 1.0)


@dataclass(frozen=True)
class FloodInputs(DensitySpec):
    """Hierarchical nominal law of the 7 flood inputs.

    Coordinates: (T, S, t0, t_minus, t_plus, location, erosion_rate).  The
    five offshore coordinates are independent with the given marginals; a
    breach then occurs with probability p_high or p_low depending on whether
    the peak of tide + surge strictly exceeds crest_fraction * height.  Given
    a breach, location ~ uniform {1..10} and erosion ~ uniform (0, 1]; with
    no breach the pair is the canonical atom (location 0, erosion 0).
    """

    offshore: tuple[DensitySpec, ...]
    embankment_height: float
    p_high: float = 0.5
    p_low: float = 1e-4
    crest_fraction: float = 0.7
    period_hours: float = TIDAL_PERIOD_HOURS
    step_minutes: float = 1.0

    dim = 7
    n_uniforms = 8

    def __post_init__(self):
        if len(self.offshore) != 5:
            raise ValueError("need exactly 5 offshore marginals (T, S, t0, t_minus, t_plus)")
        if any(c.dim != 1 or c.n_uniforms != 1 for c in self.offshore):
            raise ValueError("offshore marginals must be scalar densities")
        if self.embankment_height <= 0:
            raise ValueError("embankment_height must be positive")
        object.__setattr__(self, "offshore", tuple(self.offshore))

    def breach_probability(self, C: np.ndarray) -> np.ndarray:
        """Breach probability for each row of offshore conditions (n, 5)."""
        peaks = _signal_max_batch(C, self.period_hours, self.step_minutes)
        return np.where(peaks > self.crest_fraction * self.embankment_height, self.p_high, self.p_low)

    def density_batch(self, X: np.ndarray) -> np.ndarray:
        dens = np.ones(X.shape[0])
        for j, c in enumerate(self.offshore):
            dens *= c.density_batch(X[:, j : j + 1])
        loc, ero = X[:, 5], X[:, 6]
        ok = dens > 0  # skip the signal computation outside the offshore support
        p = np.zeros(X.shape[0])
        if np.any(ok):
            p[ok] = self.breach_probability(X[ok, :5])
        loc_mass = DiscreteUniform.integer_range(1, 10).density_batch(loc[:, None])
        cont = p * loc_mass * np.where((ero > 0) & (ero <= 1.0), 1.0, 0.0)
        atom = np.where(loc == 0.0, 1.0 - p, 0.0)
        return dens * np.where(ero == 0.0, atom, cont)

    def transform(self, U: np.ndarray) -> np.ndarray:
        cols = [c.transform(U[:, j : j + 1]) for j, c in enumerate(self.offshore)]
        C = np.concatenate(cols, axis=1)
        p = self.breach_probability(C)
        breach = U[:, 5] < p
        loc = np.minimum((U[:, 6] * 10).astype(np.int64), 9) + 1.0
        ero = 1.0 - U[:, 7]  # uniform on (0, 1]
        loc = np.where(breach, loc, 0.0)
        ero = np.where(breach, ero, 0.0)
        return np.column_stack([C, loc, ero])

    def support(self) -> tuple[CoordSupport, ...]:
        out = [c.support()[0] for c in self.offshore]
        out.append(CoordSupport(atoms=(0.0,) + tuple(float(k) for k in range(1, 11))))
        out.append(CoordSupport(atoms=(0.0,), intervals=((0.0, 1.0),)))
        return tuple(out)


def density_eval(spec: DensitySpec, x) -> float:
    """Density (or atom mass) of the spec at one point; 0 outside the support."""
    return float(spec.density_batch(_as_points(spec, x))[0])


def density_batch(spec: DensitySpec, X) -> np.ndarray:
    """Vectorized density_eval over rows of X."""
    return spec.density_batch(_as_points(spec, X))


def is_weight(f: DensitySpec, g: DensitySpec, x) -> float:
    """Importance ratio f(x)/g(x); mass/mass at atoms, density/density elsewhere."""
    return float(is_weight_batch(f, g, _as_points(f, x))[0])


def is_weight_batch(f: DensitySpec, g: DensitySpec, X) -> np.ndarray:
    if f.dim != g.dim:
        raise ValueError(f"f and g have different dimensions: {f.dim} != {g.dim}")
    X = _as_points(f, X)
    fx = f.density_batch(X)
    gx = g.density_batch(X)
    bad = (gx == 0) & (fx > 0)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise ValueError(f"support violation: g = 0 but f > 0 at sample {k}: {X[k]}")
    out = np.zeros_like(fx)
    ok = gx > 0
    out[ok] = fx[ok] / gx[ok]
    return out


_SEED_STREAMS = {"sampling": 1, "perturbation": 2, "bootstrap": 3, "forest": 4, "gp": 5, "init": 6}


def named_seed(root_seed: int, name: str) -> np.random.SeedSequence:
    """Derive the sub-seed for one named randomness consumer from the root seed."""
    return np.random.SeedSequence([int(root_seed), _SEED_STREAMS[name]])


class SampleStream:
    """Sequential sampler from a spec whose draws extend prefix-coherently.

    draw(a) followed by draw(b) yields exactly the first a + b samples of a
    single draw(a + b) from a fresh stream with the same seed, because every
    sample consumes a fixed number of uniforms in row order.
    """

    def __init__(self, spec: DensitySpec, seed):
        self.spec = spec
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(int(seed))
        self._rng = np.random.default_rng(seed)

    def draw(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        U = self._rng.random((n, self.spec.n_uniforms))
        return self.spec.transform(U)


def sample(spec: DensitySpec, n: int, seed: int) -> np.ndarray:
    """n i.i.d. draws from the spec as an (n, dim) array; deterministic in seed."""
    return SampleStream(spec, seed).draw(n)


def sobol_design(d: int, n: int) -> np.ndarray:
    """First n points of the (unscrambled) d-dimensional Sobol sequence.

    Uses standard published direction numbers; the sequence starts at the
    all-zero point.  Supported for 1 <= d <= 16.
    """
    if not 1 <= d <= 16:
        raise ValueError("sobol_design supports 1 <= d <= 16")
    if n < 1:
        raise ValueError("n must be >= 1")
    eng = qmc.Sobol(d=d, scramble=False)
    with warnings.catch_warnings():
        # n need not be a power of two for a training design
        warnings.simplefilter("ignore", UserWarning)
        return eng.random(n)


def _interval_cover(iv: tuple[float, float], cover: list[tuple[float, float]]) -> bool:
    lo, hi = iv
    pos = lo
    for clo, chi in sorted(cover):
        if clo > pos:
            return False
        pos = max(pos, chi)
        if pos >= hi:
            return True
    return pos >= hi


def supports_subset(f: DensitySpec, g: DensitySpec) -> bool:
    """Check supp(f) is contained in supp(g), coordinate by coordinate.

    Atoms of f must be matched by atoms of g (mass-to-mass semantics);
    continuous parts of f must be covered by g's intervals.  The check works
    on per-coordinate projections, which is exact for the specs provided
    here (any dependence is confined to the canonical breach pair, whose
    projections coincide for f and g).
    """
    fs, gs = f.support(), g.support()
    if len(fs) != len(gs):
        return False
    for fc, gc in zip(fs, gs):
        if any(a not in gc.atoms for a in fc.atoms):
            return False
        for iv in fc.intervals:
            if not _interval_cover(iv, list(gc.intervals)):
                return False
    return True


def is_mean_se(h_weighted) -> tuple[float, float]:
    """Mean and standard error of an importance-sampling estimator.

    Input is the per-sample array h(Y(x)) * f(x)/g(x); the variance of the
    estimator is the sample variance of those terms divided by n.
    """
    v = np.asarray(h_weighted, dtype=np.float64)
    n = v.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    return float(v.mean()), float(np.sqrt(v.var(ddof=1) / n))


# --- configuration (de)serialization -------------------------------------

def density_to_config(spec: DensitySpec) -> dict:
    if isinstance(spec, PiecewiseUniform):
        return {"type": "piecewise_uniform", "breaks": list(spec.breaks), "densities": list(spec.densities)}
    if isinstance(spec, TruncatedParametric):
        return {
            "type": "truncated_parametric",
            "family": spec.family,
            "params": dict(spec.params),
            "lower": spec.lower,
            "upper": spec.upper,
        }
    if isinstance(spec, DiscreteUniform):
        return {"type": "discrete_uniform", "atoms": list(spec.atoms)}
    if isinstance(spec, AtomPlusUniform):
        return {
            "type": "atom_plus_uniform",
            "atom": spec.atom,
            "atom_mass": spec.atom_mass,
            "lower": spec.lower,
            "upper": spec.upper,
            "uniform_mass": spec.uniform_mass,
        }
    if isinstance(spec, BreachPair):
        return {
            "type": "breach_pair",
            "location": density_to_config(spec.location),
            "erosion": density_to_config(spec.erosion),
        }
    if isinstance(spec, Product):
        return {"type": "product", "components": [density_to_config(c) for c in spec.components]}
    if isinstance(spec, FloodInputs):
        return {
            "type": "flood_inputs",
            "offshore": [density_to_config(c) for c in spec.offshore],
            "embankment_height": spec.embankment_height,
            "p_high": spec.p_high,
            "p_low": spec.p_low,
            "crest_fraction": spec.crest_fraction,
            "period_hours": spec.period_hours,
            "step_minutes": spec.step_minutes,
        }
    raise ValueError(f"cannot serialize {type(spec).__name__}")


def density_from_config(cfg: dict) -> DensitySpec:
    kind = cfg.get("type")
    if kind == "piecewise_uniform":
        return PiecewiseUniform(tuple(cfg["breaks"]), tuple(cfg["densities"]))
    if kind == "truncated_parametric":
        return TruncatedParametric(cfg["family"], dict(cfg["params"]), cfg["lower"], cfg["upper"])
    if kind == "discrete_uniform":
        return DiscreteUniform(tuple(cfg["atoms"]))
    if kind == "atom_plus_uniform":
        return AtomPlusUniform(
            cfg["atom"], cfg["atom_mass"], cfg["lower"], cfg["upper"], cfg["uniform_mass"]
        )
    if kind == "breach_pair":
        return BreachPair(
            density_from_config(cfg["location"]), density_from_config(cfg["erosion"])
        )
    if kind == "product":
        return Product(tuple(density_from_config(c) for c in cfg["components"]))
    if kind == "flood_inputs":
        return FloodInputs(
            tuple(density_from_config(c) for c in cfg["offshore"]),
            cfg["embankment_height"],
            p_high=cfg.get("p_high", 0.5),
            p_low=cfg.get("p_low", 1e-4),
            crest_fraction=cfg.get("crest_fraction", 0.7),
            period_hours=cfg.get("period_hours", TIDAL_PERIOD_HOURS),
            step_minutes=cfg.get("step_minutes", 1.0),
        )
    raise ValueError(f"unknown density type {kind!r}")
