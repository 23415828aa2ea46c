"""Coefficient functions of a mean field game and their structural checks.

A coefficient is a sum of terms. Catalog terms have a textual form so that
models round-trip through the model file; arbitrary callables are allowed
for programmatic use but cannot be written out.

Convolution and local-density terms are translation invariant by
construction. Everything else has to earn its certificate by sampling.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .measures import GridMeasure, abs_moment, shift_measure, wasserstein

SIGMA_FLOOR = 1e-6
DEFAULT_TI_TOL = 1e-9

_CHUNK = 4096


class OutOfSupportError(ValueError):
    """A local-density functional was evaluated off the grid support."""


class CertificationError(ValueError):
    """Translation invariance could not be certified."""

    def __init__(self, message: str, report: "InvarianceReport | None" = None):
        super().__init__(message)
        self.report = report


# --------------------------------------------------------------------------
# scalar building blocks


@dataclass(frozen=True)
class Kernel:
    """Interaction kernel ``phi`` for convolution functionals."""

    name: str
    param: float = 0.0

    def __post_init__(self):
        if self.name not in ("gaussian", "identity", "indicator"):
            raise ValueError(f"unknown kernel {self.name!r}")
        if self.name != "identity" and not self.param > 0:
            raise ValueError(f"kernel {self.name} needs a positive parameter")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.name == "identity":
            return z
        if self.name == "gaussian":
            w = self.param
            u = np.divide(z, w, out=np.empty_like(z))
            np.square(u, out=u)
            u *= -0.5
            np.exp(u, out=u)
            u /= math.sqrt(2.0 * math.pi) * w
            return u
        return (np.abs(z) <= self.param).astype(float)

    def spec(self) -> str:
        return "identity" if self.name == "identity" else f"{self.name}({self.param!r})"


@dataclass(frozen=True)
class Outer:
    """Outer scalar function ``G``."""

    name: str
    param: float = 1.0

    def __post_init__(self):
        if self.name not in ("identity", "tanh", "scale", "square"):
            raise ValueError(f"unknown outer function {self.name!r}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.name == "identity":
            return u
        if self.name == "tanh":
            return np.tanh(u)
        if self.name == "scale":
            return self.param * u
        return self.param * u * u

    @property
    def lipschitz(self) -> float:
        """Global Lipschitz constant (inf for ``square``)."""
        if self.name in ("identity", "tanh"):
            return 1.0
        if self.name == "scale":
            return abs(self.param)
        return math.inf if self.param != 0 else 0.0

    def spec(self) -> str:
        if self.name in ("identity", "tanh"):
            return self.name
        return f"{self.name}({self.param!r})"


@dataclass(frozen=True)
class MeasureFunctional:
    """Scalar functional ``F(x, mu)`` from the fixed catalog.

    ``convolution``: ``G(integral phi(x - y) mu(dy))``.
    ``local_density``: ``G(density of mu at x)``.
    ``mean_affine``: ``x_coef * x + G(mean(mu))``; not invariant in general.
    ``constant``: ``value``.
    """

    kind: str
    kernel: Optional[Kernel] = None
    outer: Optional[Outer] = None
    x_coef: float = 0.0
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("convolution", "local_density", "mean_affine", "constant"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == "convolution" and (self.kernel is None or self.outer is None):
            raise ValueError("convolution needs a kernel and an outer function")
        if self.kind in ("local_density", "mean_affine") and self.outer is None:
            raise ValueError(f"{self.kind} needs an outer function")

    @classmethod
    def convolution(cls, kernel: Kernel, outer: Outer = Outer("identity")):
        return cls("convolution", kernel=kernel, outer=outer)

    @classmethod
    def local_density(cls, outer: Outer = Outer("identity")):
        return cls("local_density", outer=outer)

    @classmethod
    def mean_affine(cls, outer: Outer, x_coef: float = 0.0):
        return cls("mean_affine", outer=outer, x_coef=float(x_coef))

    @classmethod
    def constant(cls, value: float):
        return cls("constant", value=float(value))

    @property
    def structurally_invariant(self) -> bool:
        return self.kind in ("convolution", "local_density")

    @property
    def uses_state(self) -> bool:
        if self.kind == "mean_affine":
            return self.x_coef != 0.0
        return self.kind != "constant"

    @property
    def uses_measure(self) -> bool:
        return self.kind != "constant"

    def evaluate(self, x, mu: GridMeasure) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape, self.value)
        if self.kind == "mean_affine":
            return self.x_coef * x + self.outer(mu.mean())
        if self.kind == "local_density":
            lo, hi = mu.x_min, mu.x_max
            if np.any((x < lo) | (x > hi)):
                raise OutOfSupportError(
                    f"local density evaluated outside the grid support [{lo:.6g}, {hi:.6g}]"
                )
            return self.outer(mu.pdf(x))
        if self.kernel.name == "identity":
            return self.outer(x - mu.mean())
        flat = x.ravel()
        out = np.empty(flat.shape)
        nodes, w = mu.nodes, mu.weights
        for s in range(0, flat.size, _CHUNK):
            xs = flat[s : s + _CHUNK]
            out[s : s + _CHUNK] = self.kernel(xs[:, None] - nodes[None, :]) @ w
        return self.outer(out.reshape(x.shape))

    def spec(self) -> str:
        if self.kind == "constant":
            return f"constant({self.value!r})"
        if self.kind == "local_density":
            return f"local_density({self.outer.spec()})"
        if self.kind == "mean_affine":
            if self.x_coef == 0.0:
                return f"mean({self.outer.spec()})"
            return f"mean_affine({self.x_coef!r}, {self.outer.spec()})"
        return f"convolution({self.kernel.spec()}, {self.outer.spec()})"


def eval_functional(F: MeasureFunctional, x, mu: GridMeasure):
    """Evaluate ``F(x, mu)``; scalar in, scalar out."""
    out = F.evaluate(x, mu)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# coefficient terms


@dataclass(frozen=True)
class ControlTerm:
    """``gain * a``."""

    gain: float
    uses_control = True
    uses_state = False
    uses_measure = False
    structurally_invariant = True

    def __call__(self, t, x, mu, a):
        return self.gain * np.asarray(a, dtype=float)

    def spec(self) -> str:
        return f"control({self.gain!r})"


@dataclass(frozen=True)
class ControlCostTerm:
    """``-(weight / 2) * a**2``."""

    weight: float
    uses_control = True
    uses_state = False
    uses_measure = False
    structurally_invariant = True

    def __call__(self, t, x, mu, a):
        a = np.asarray(a, dtype=float)
        return -0.5 * self.weight * a * a

    def spec(self) -> str:
        return f"control_cost({self.weight!r})"


@dataclass(frozen=True)
class FunctionalTerm:
    functional: MeasureFunctional
    uses_control = False

    @property
    def uses_state(self) -> bool:
        return self.functional.uses_state

    @property
    def uses_measure(self) -> bool:
        return self.functional.uses_measure

    @property
    def structurally_invariant(self) -> bool:
        return self.functional.structurally_invariant or self.functional.kind == "constant"

    def __call__(self, t, x, mu, a):
        return self.functional.evaluate(x, mu)

    def spec(self) -> str:
        return self.functional.spec()


@dataclass(frozen=True)
class StateTerm:
    """``G(x)``, ignoring the measure. Not translation invariant."""

    outer: Outer
    uses_control = False
    uses_state = True
    uses_measure = False
    structurally_invariant = False

    def __call__(self, t, x, mu, a):
        return self.outer(x)

    def spec(self) -> str:
        return f"state({self.outer.spec()})"


@dataclass(frozen=True)
class XTimesMeanTerm:
    """``k * x * mean(mu)``. Not translation invariant."""

    k: float = 1.0
    uses_control = False
    uses_state = True
    uses_measure = True
    structurally_invariant = False

    def __call__(self, t, x, mu, a):
        return self.k * np.asarray(x, dtype=float) * mu.mean()

    def spec(self) -> str:
        return f"x_times_mean({self.k!r})"


@dataclass(frozen=True)
class CallableTerm:
    """Arbitrary vectorised ``fn(t, x, mu, a)``; cannot be serialised."""

    fn: Callable
    name: str = "callable"
    uses_control: bool = True
    uses_state: bool = True
    uses_measure: bool = True
    structurally_invariant = False

    def __call__(self, t, x, mu, a):
        return np.asarray(self.fn(t, x, mu, a), dtype=float)

    def spec(self) -> str:
        raise ValueError(f"term {self.name!r} is a Python callable and has no text form")


@dataclass(frozen=True)
class Coefficient:
    """Sum of terms evaluated as ``(t, x, mu, a) -> value`` (vectorised).

    ``certified`` records a passed translation-invariance check.
    """

    terms: tuple = ()
    certified: bool = False
    name: str = ""

    @classmethod
    def of(cls, *terms, name: str = "") -> "Coefficient":
        return cls(tuple(terms), name=name)

    @classmethod
    def from_callable(cls, fn, name: str = "callable", uses_control: bool = True) -> "Coefficient":
        return cls((CallableTerm(fn, name, uses_control=uses_control),), name=name)

    def __call__(self, t, x, mu, a=0.0):
        x = np.asarray(x, dtype=float)
        shape = np.broadcast(x, np.asarray(a)).shape
        total = np.zeros(shape)
        for term in self.terms:
            total = total + term(t, x, mu, a)
        return total

    def state_part(self, t, x, mu):
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape)
        for term in self.terms:
            if not term.uses_control:
                total = total + term(t, x, mu, 0.0)
        return total

    def control_part(self, t, x, mu, a):
        shape = np.broadcast(np.asarray(x), np.asarray(a)).shape
        total = np.zeros(shape)
        for term in self.terms:
            if term.uses_control:
                total = total + term(t, x, mu, a)
        return total

    @property
    def uses_control(self) -> bool:
        return any(term.uses_control for term in self.terms)

    @property
    def uses_state(self) -> bool:
        return any(term.uses_state for term in self.terms)

    @property
    def structurally_invariant(self) -> bool:
        return all(term.structurally_invariant for term in self.terms)

    def control_linear_gain(self) -> Optional[float]:
        """Gain ``k`` if the control enters only as ``k * a``."""
        ctrl = [term for term in self.terms if term.uses_control]
        if not all(isinstance(term, ControlTerm) for term in ctrl):
            return None
        return float(sum(term.gain for term in ctrl))

    def control_quadratic(self) -> Optional[tuple]:
        """``(lin, quad)`` if the control enters as ``lin * a - quad / 2 * a**2``."""
        lin = quad = 0.0
        for term in self.terms:
            if not term.uses_control:
                continue
            if isinstance(term, ControlTerm):
                lin += term.gain
            elif isinstance(term, ControlCostTerm):
                quad += term.weight
            else:
                return None
        return lin, quad

    def plus(self, *terms) -> "Coefficient":
        return Coefficient(self.terms + tuple(terms), certified=False, name=self.name)

    def spec(self) -> str:
        if not self.terms:
            return "constant(0.0)"
        return " + ".join(term.spec() for term in self.terms)


def constant(c: float) -> Coefficient:
    return Coefficient.of(FunctionalTerm(MeasureFunctional.constant(c)))


ZERO = constant(0.0)


# --------------------------------------------------------------------------
# text form of terms


_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$|^[+-]?(inf|nan)$")


def _split_top(text: str, sep: str) -> list:
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ValueError(f"unbalanced ')' at column {i + 1}")
        elif ch == sep and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    if depth != 0:
        raise ValueError("unbalanced '('")
    parts.append(text[start:])
    return [p.strip() for p in parts]


def _parse_call(text: str):
    text = text.strip()
    if _NUMBER.match(text):
        return float(text)
    m = re.fullmatch(r"([A-Za-z_][A-Za-z_0-9]*)\s*(?:\((.*)\))?", text, flags=re.S)
    if m is None:
        raise ValueError(f"cannot parse {text!r}")
    name, inner = m.group(1), m.group(2)
    args = [] if inner is None or not inner.strip() else [_parse_call(p) for p in _split_top(inner, ",")]
    return name, args


def _num(args, i, name) -> float:
    if len(args) <= i or not isinstance(args[i], float):
        raise ValueError(f"{name} expects a numeric argument in position {i + 1}")
    return args[i]


def _outer(node) -> Outer:
    if isinstance(node, float):
        raise ValueError("expected an outer function, got a number")
    name, args = node
    if name in ("identity", "tanh"):
        return Outer(name)
    if name in ("scale", "square"):
        return Outer(name, _num(args, 0, name))
    raise ValueError(f"unknown outer function {name!r}")


def _kernel(node) -> Kernel:
    if isinstance(node, float):
        raise ValueError("expected a kernel, got a number")
    name, args = node
    if name == "identity":
        return Kernel("identity")
    if name in ("gaussian", "indicator"):
        return Kernel(name, _num(args, 0, name))
    raise ValueError(f"unknown kernel {name!r}")


def parse_term(text: str):
    node = _parse_call(text)
    if isinstance(node, float):
        return FunctionalTerm(MeasureFunctional.constant(node))
    name, args = node
    if name == "control":
        return ControlTerm(_num(args, 0, name) if args else 1.0)
    if name == "control_cost":
        return ControlCostTerm(_num(args, 0, name) if args else 1.0)
    if name == "constant":
        return FunctionalTerm(MeasureFunctional.constant(_num(args, 0, name)))
    if name == "convolution":
        if len(args) != 2:
            raise ValueError("convolution expects (kernel, outer)")
        return FunctionalTerm(MeasureFunctional.convolution(_kernel(args[0]), _outer(args[1])))
    if name == "local_density":
        return FunctionalTerm(MeasureFunctional.local_density(_outer(args[0]) if args else Outer("identity")))
    if name == "mean":
        return FunctionalTerm(MeasureFunctional.mean_affine(_outer(args[0]) if args else Outer("identity")))
    if name == "mean_affine":
        return FunctionalTerm(MeasureFunctional.mean_affine(_outer(args[1]), _num(args, 0, name)))
    if name == "state":
        return StateTerm(_outer(args[0]) if args else Outer("identity"))
    if name == "x_times_mean":
        return XTimesMeanTerm(_num(args, 0, name) if args else 1.0)
    raise ValueError(f"unknown functional name {name!r}")


def parse_coefficient(text: str, name: str = "") -> Coefficient:
    """Parse ``term + term + ...`` into a :class:`Coefficient`."""
    parts = [p for p in _split_top(text, "+") if p]
    if not parts:
        raise ValueError("empty coefficient expression")
    return Coefficient(tuple(parse_term(p) for p in parts), name=name)


# --------------------------------------------------------------------------
# model data


@dataclass(frozen=True)
class CoefficientSet:
    """``b, sigma, f, g`` and the common-noise coefficients ``b0, sigma0``.

    ``g`` and the common-noise coefficients are called with the same
    signature; their unused arguments are ignored.
    """

    b: Coefficient
    sigma: Coefficient
    f: Coefficient
    g: Coefficient
    b0: Coefficient = ZERO
    sigma0: Coefficient = ZERO

    @property
    def certified(self) -> bool:
        return all(c.certified for c in (self.b, self.sigma, self.f, self.g))


@dataclass(frozen=True)
class MFGModel:
    """Problem data on the real line with control set ``[a_min, a_max]``."""

    coefficients: CoefficientSet
    T: float
    a_min: float
    a_max: float
    initial: GridMeasure
    p: float = 1.0
    p_prime: float = 2.0
    p_sigma: float = 0.0
    domain_tag: str = "lebesgue_density"
    initial_law: Optional[str] = None
    lipschitz_waiver: bool = False

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if self.a_min > self.a_max:
            raise ValueError("empty control interval")
        if self.domain_tag not in ("all_measures", "lebesgue_density"):
            raise ValueError(f"unknown domain tag {self.domain_tag!r}")
        if self.coefficients.sigma.uses_control:
            raise ValueError("sigma must not depend on the control")

    @property
    def lift_eligible(self) -> bool:
        return self.coefficients.certified

    def project(self, a):
        return np.clip(a, self.a_min, self.a_max)

    def with_initial(self, initial: GridMeasure, law: Optional[str] = None) -> "MFGModel":
        return replace(self, initial=initial, initial_law=law)

    def with_coefficients(self, **kw) -> "MFGModel":
        return replace(self, coefficients=replace(self.coefficients, **kw))


# --------------------------------------------------------------------------
# translation invariance


@dataclass
class InvarianceReport:
    max_violation: float
    passed: bool
    trials: int
    tol: float
    witness: dict = field(default_factory=dict)

    def describe(self) -> str:
        w = self.witness
        if not w:
            return f"max violation {self.max_violation:.3g} over {self.trials} trials"
        return (
            f"max violation {self.max_violation:.3g} at t={w['t']:.4g}, x={w['x']:.4g}, "
            f"a={w['a']:.4g}, q={w['q']:.4g}, mu={w['mu']}"
        )


def random_grid_measure(rng: np.random.Generator, center: float = 0.0) -> GridMeasure:
    """Random Gaussian mixture on a random grid; used by the samplers."""
    k = int(rng.integers(1, 4))
    means = center + rng.normal(0.0, 1.0, k)
    stds = rng.uniform(0.3, 1.2, k)
    mix = rng.dirichlet(np.ones(k))
    dx = float(rng.uniform(0.02, 0.1))
    lo = float(np.min(means - 5 * stds)) + float(rng.uniform(-0.5, 0.0))
    hi = float(np.max(means + 5 * stds))
    n = int(np.ceil((hi - lo) / dx)) + 1
    x = lo + dx * np.arange(n)
    vals = sum(c * np.exp(-0.5 * ((x - m) / s) ** 2) / s for c, m, s in zip(mix, means, stds))
    return GridMeasure.from_values(lo, dx, vals)


def check_translation_invariance(
    F: Coefficient,
    trials: int = 100,
    tol: float = DEFAULT_TI_TOL,
    seed: int = 0,
    T: float = 1.0,
    a_range: tuple = (-2.0, 2.0),
) -> InvarianceReport:
    """Compare ``F(t, x + q, mu, a)`` with ``F(t, x, shift_measure(mu, -q), a)``.

    Samples are drawn from a seeded generator; ``x + q`` always lies inside
    the grid of ``mu`` so that local-density terms are evaluable.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if isinstance(F, MeasureFunctional):
        F = Coefficient.of(FunctionalTerm(F))
    rng = np.random.default_rng(seed)
    worst, witness = 0.0, {}
    for _ in range(trials):
        mu = random_grid_measure(rng)
        t = float(rng.uniform(0.0, T))
        a = float(rng.uniform(*a_range))
        q = float(rng.normal(0.0, 2.0))
        y = float(rng.uniform(mu.x_min + 2 * mu.dx, mu.x_max - 2 * mu.dx))
        lhs = float(F(t, y, mu, a))
        rhs = float(F(t, y - q, shift_measure(mu, -q), a))
        v = abs(lhs - rhs)
        if not math.isfinite(v):
            v = math.inf
        if v > worst or not witness:
            worst = max(worst, v)
            witness = dict(t=t, x=y - q, a=a, q=q, mu=f"mean={mu.mean():.4g}, var={mu.variance():.4g}")
    return InvarianceReport(worst, worst <= tol, trials, tol, witness)


def certify(F: Coefficient, trials: int = 100, tol: float = DEFAULT_TI_TOL, seed: int = 0, **kw):
    """Return ``(coefficient, report)``; the certificate is set only on a pass."""
    report = check_translation_invariance(F, trials, tol, seed, **kw)
    return replace(F, certified=report.passed), report


def certify_set(cs: CoefficientSet, trials: int = 100, seed: int = 0, T: float = 1.0, a_range=(-2.0, 2.0)):
    """Certify ``b, sigma, f, g``; returns the new set and per-entry reports."""
    out, reports = {}, {}
    for i, key in enumerate(("b", "sigma", "f", "g")):
        out[key], reports[key] = certify(getattr(cs, key), trials, seed=seed + i, T=T, a_range=a_range)
    return replace(cs, **out), reports


def affine_decompose(model: MFGModel, Q: float, r_f: float, r_g: float, seed: int = 0) -> MFGModel:
    """Absorb linear non-invariant parts into the common drift.

    Starting from ``Qx + b``, ``r_f x + f``, ``r_g x + g`` the returned model
    has ``b + Q(x - mean)``, ``f + r_f(x - mean)``, ``g + r_g(x - mean)``
    and common drift ``b0 + Q mean``. The dropped mean terms in ``f`` and
    ``g`` do not depend on the control.
    """
    cs = model.coefficients
    if not cs.certified:
        raise CertificationError("affine_decompose needs certified b, sigma, f, g")
    if Q == 0 and r_f == 0 and r_g == 0:
        return model

    def centred(k):
        return FunctionalTerm(MeasureFunctional.convolution(Kernel("identity"), Outer("scale", float(k))))

    new = dict(b=cs.b, f=cs.f, g=cs.g, b0=cs.b0)
    if Q != 0:
        new["b"] = cs.b.plus(centred(Q))
        new["b0"] = cs.b0.plus(FunctionalTerm(MeasureFunctional.mean_affine(Outer("scale", float(Q)))))
    if r_f != 0:
        new["f"] = cs.f.plus(centred(r_f))
    if r_g != 0:
        new["g"] = cs.g.plus(centred(r_g))
    cs2 = replace(cs, **new)
    cs2, reports = certify_set(cs2, seed=seed, T=model.T, a_range=_sample_range(model))
    failed = [k for k, r in reports.items() if not r.passed]
    if failed:
        raise CertificationError(f"decomposed coefficients {failed} failed certification", reports[failed[0]])
    return replace(model, coefficients=cs2)


def _sample_range(model: MFGModel) -> tuple:
    return (max(model.a_min, -5.0), min(model.a_max, 5.0))


# --------------------------------------------------------------------------
# sampled existence assumptions


@dataclass
class ConditionReport:
    condition: str
    constant: float
    passed: Optional[bool]
    witness: dict = field(default_factory=dict)
    note: str = ""


def _ratio_max(num, den, samples):
    r = np.where(den > 0, np.abs(num) / np.where(den > 0, den, 1.0), np.where(np.abs(num) > 0, np.inf, 0.0))
    i = int(np.argmax(r))
    return float(r[i]), samples[i]


def validate_existence_assumptions(model: MFGModel, samples: int = 200, seed: int = 0) -> dict:
    """Sampled checks of the growth, coercivity, convexity and Lipschitz assumptions.

    Returns a dict of :class:`ConditionReport` keyed by condition name. The
    constants are the smallest ones consistent with the samples, so a pass
    is evidence, not proof.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    cs = model.coefficients
    p, pp, ps = model.p, model.p_prime, model.p_sigma
    lo, hi = _sample_range(model)
    reports = {}

    reports["exponents"] = ConditionReport(
        "exponents",
        math.nan,
        bool(pp > p >= max(1.0, ps) and 0.0 <= ps <= 2.0),
        note=f"p={p}, p'={pp}, p_sigma={ps}",
    )

    rows = []
    for _ in range(samples):
        mu = random_grid_measure(rng, center=float(rng.normal(0.0, 1.0)))
        t = float(rng.uniform(0.0, model.T))
        x, y = rng.normal(0.0, 3.0, 2)
        a = float(rng.uniform(lo, hi))
        rows.append((t, float(x), float(y), a, mu))
    keys = [dict(t=r[0], x=r[1], y=r[2], a=r[3], mu=f"mean={r[4].mean():.4g}") for r in rows]

    def ev(c, t, x, mu, a):
        return float(c(t, x, mu, a))

    b_x = np.array([ev(cs.b, t, x, m, a) for t, x, y, a, m in rows])
    b_y = np.array([ev(cs.b, t, y, m, a) for t, x, y, a, m in rows])
    s_x = np.array([ev(cs.sigma, t, x, m, a) for t, x, y, a, m in rows])
    s_y = np.array([ev(cs.sigma, t, y, m, a) for t, x, y, a, m in rows])
    xs = np.array([r[1] for r in rows])
    ys = np.array([r[2] for r in rows])
    aa = np.array([r[3] for r in rows])
    mp = np.array([abs_moment(r[4], p) for r in rows])

    c_lip, w = _ratio_max(np.abs(b_x - b_y) + np.abs(s_x - s_y), np.abs(xs - ys), keys)
    reports["4_lipschitz_x"] = ConditionReport("4_lipschitz_x", c_lip, math.isfinite(c_lip), w)
    c_b, w = _ratio_max(b_x, 1 + np.abs(xs) + mp ** (1 / p) + np.abs(aa), keys)
    reports["4_growth_b"] = ConditionReport("4_growth_b", c_b, math.isfinite(c_b), w)
    c_s, w = _ratio_max(s_x**2, 1 + np.abs(xs) ** ps + mp ** (ps / p) + np.abs(aa) ** ps, keys)
    reports["4_growth_sigma"] = ConditionReport("4_growth_sigma", c_s, math.isfinite(c_s), w)

    g_x = np.array([ev(cs.g, model.T, x, m, 0.0) for t, x, y, a, m in rows])
    f_x = np.array([ev(cs.f, t, x, m, a) for t, x, y, a, m in rows])
    f_0 = np.array([ev(cs.f, t, x, m, 0.0) for t, x, y, a, m in rows])
    base = 1 + np.abs(xs) ** p + mp
    c_g, w = _ratio_max(g_x, base, keys)
    reports["5_growth_g"] = ConditionReport("5_growth_g", c_g, math.isfinite(c_g), w)
    c_up, w = _ratio_max(np.maximum(f_0, 0.0), base, keys)
    reports["5_upper_f"] = ConditionReport("5_upper_f", c_up, math.isfinite(c_up), w)
    c_low, w = _ratio_max(np.minimum(f_x, 0.0), base + np.abs(aa) ** pp, keys)
    reports["5_lower_f"] = ConditionReport("5_lower_f", c_low, math.isfinite(c_low), w)
    # coercivity: largest c3 with f(., a) <= f(., 0) - c3 |a|^p'
    nz = np.abs(aa) > 1e-8
    if np.any(nz):
        ratios = (f_0[nz] - f_x[nz]) / np.abs(aa[nz]) ** pp
        i = int(np.argmin(ratios))
        c3 = float(ratios[i])
        w = [k for k, z in zip(keys, nz) if z][i]
    else:
        c3, w = math.nan, {}
    reports["5_coercivity"] = ConditionReport("5_coercivity", c3, bool(c3 > 0), w)

    gain = cs.b.control_linear_gain()
    quad = cs.f.control_quadratic()
    structural = gain is not None and not cs.sigma.uses_control and quad is not None and quad[1] >= 0
    reports["6_convexity"] = ConditionReport(
        "6_convexity",
        math.nan,
        True if structural else None,
        note="control-affine drift with concave reward" if structural else "not decidable structurally",
    )

    reports["7_translation_invariance"] = ConditionReport(
        "7_translation_invariance", math.nan, cs.certified, note="certificates on b, sigma, f, g"
    )

    num, den, wit = [], [], []
    for i in range(samples):
        mu = random_grid_measure(rng, center=float(rng.normal(0.0, 1.0)))
        if i % 2:
            nu = shift_measure(mu, float(rng.normal(0.0, 0.5)))
        else:
            nu = random_grid_measure(rng, center=float(rng.normal(0.0, 1.0)))
        t = float(rng.uniform(0.0, model.T))
        d = abs(ev(cs.b0, t, 0.0, mu, 0.0) - ev(cs.b0, t, 0.0, nu, 0.0))
        d += abs(ev(cs.sigma0, t, 0.0, mu, 0.0) - ev(cs.sigma0, t, 0.0, nu, 0.0))
        num.append(d)
        den.append(wasserstein(mu, nu, max(p, 1.0)))
        wit.append(dict(t=t, mean_mu=mu.mean(), mean_nu=nu.mean()))
    # dense sweeps along translation orbits, where W_p(mu(.-q1), mu(.-q2)) = |q1 - q2|
    qs = np.linspace(-4.0, 4.0, 161)
    for _ in range(max(1, samples // 20)):
        mu = random_grid_measure(rng, center=float(rng.normal(0.0, 1.0)))
        t = float(rng.uniform(0.0, model.T))
        moved = [shift_measure(mu, q) for q in qs]
        drift = np.array([ev(cs.b0, t, 0.0, m, 0.0) for m in moved])
        vol = np.array([ev(cs.sigma0, t, 0.0, m, 0.0) for m in moved])
        num.extend(np.abs(np.diff(drift)) + np.abs(np.diff(vol)))
        den.extend(np.diff(qs))
        wit.extend(dict(t=t, mean_mu=mu.mean() + q, mean_nu=mu.mean() + q + qs[1] - qs[0]) for q in qs[:-1])
    c4, w = _ratio_max(np.array(num), np.array(den), wit)
    reports["8_common_lipschitz"] = ConditionReport("8_common_lipschitz", c4, math.isfinite(c4), w)
    return reports
