"""Vector/scalar potential families, gauge functions, and payoffs.

Everything is a small picklable class with vectorized __call__ over point
arrays of shape (..., d): vector fields return (..., d), scalar fields
return (...).  Built-in families:

    A:   zero | affine (symmetric matrix) | gaussian_bump | hoelder
    V:   zero | harmonic (kappa |x|^2) | bump
    chi: gaussian | quadratic

A FieldBundle carries A, its divergence (needed for the j = 3 functional),
V >= 0, an optional gauge function, and a (alpha, constant) Hoelder bound
used for runtime sanity checks on the small-ball correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "FieldBundle",
    "make_fields",
    "make_payoff",
    "gauge_shift",
    "phase_payoff",
]


def _vec(params, d, name, default=1.0):
    v = params.get(name, default)
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    if arr.shape != (d,):
        raise ValueError(f"{name} must be a scalar or length-{d} vector")
    return arr


class ZeroA:
    is_zero = True

    def __init__(self, d):
        self.d = d
        self.holder = (1.0, 0.0)

    def __call__(self, x):
        return np.zeros_like(x)

    def div(self, x):
        return np.zeros(x.shape[:-1])

    def spec(self):
        return {"family": "zero"}


class AffineA:
    """A(x) = M x with M symmetric: the constant-magnetic-field case."""

    is_zero = False

    def __init__(self, d, **params):
        m = params.get("matrix")
        if m is None:
            m = params.get("a", 1.0) * np.eye(d)
        m = np.asarray(m, dtype=float).reshape(d, d)
        if not np.allclose(m, m.T, atol=1e-12):
            raise ValueError("affine field matrix must be symmetric")
        self.matrix = m
        self.d = d
        lip = float(np.linalg.norm(m, 2))
        self.holder = (1.0, lip)

    def __call__(self, x):
        return x @ self.matrix.T

    def div(self, x):
        return np.full(x.shape[:-1], float(np.trace(self.matrix)))

    def spec(self):
        return {"family": "affine", "matrix": self.matrix.tolist()}


class GaussianBumpA:
    """A_i(x) = a_i exp(-|x - c|^2 / w^2)."""

    is_zero = False

    def __init__(self, d, **params):
        self.amps = _vec(params, d, "a")
        self.center = _vec(params, d, "c", 0.0)
        self.width = float(params.get("w", 1.0))
        if self.width <= 0:
            raise ValueError("width must be positive")
        amp = float(np.linalg.norm(self.amps))
        # |grad e^{-r^2/w^2}| <= sqrt(2/e)/w
        self.holder = (1.0, 1.01 * amp * math.sqrt(2.0 / math.e) / self.width)

    def __call__(self, x):
        r2 = np.sum((x - self.center) ** 2, axis=-1)
        return self.amps * np.exp(-r2 / self.width**2)[..., None]

    def div(self, x):
        dx = x - self.center
        r2 = np.sum(dx * dx, axis=-1)
        return np.exp(-r2 / self.width**2) * (dx @ self.amps) * (-2.0 / self.width**2)

    def spec(self):
        return {"family": "gaussian_bump", "a": self.amps.tolist(),
                "c": self.center.tolist(), "w": self.width}


class HoelderA:
    """A_i(x) = a_i |x - c|^alpha: alpha-Hoelder but not differentiable."""

    is_zero = False

    def __init__(self, d, **params):
        self.amps = _vec(params, d, "a")
        self.center = _vec(params, d, "c", 0.0)
        self.alpha = float(params.get("alpha", 0.5))
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        # ||x|^a - |y|^a| <= |x - y|^a for a <= 1
        self.holder = (self.alpha, 1.01 * float(np.linalg.norm(self.amps)))

    def __call__(self, x):
        r = np.linalg.norm(x - self.center, axis=-1)
        return self.amps * (r**self.alpha)[..., None]

    div = None

    def spec(self):
        return {"family": "hoelder", "a": self.amps.tolist(),
                "c": self.center.tolist(), "alpha": self.alpha}


class ShiftedA:
    """A + grad(chi): the gauge-transformed vector potential."""

    is_zero = False

    def __init__(self, base, chi):
        self.base = base
        self.chi = chi
        alpha, const = base.holder
        # chi families have globally bounded Hessians
        self.holder = (min(alpha, 1.0), const + chi.hessian_bound)

    def __call__(self, x):
        return self.base(x) + self.chi.grad(x)

    def div(self, x):
        if self.base.div is None:
            raise ValueError("base field has no divergence")
        return self.base.div(x) + self.chi.laplacian(x)

    def spec(self):
        return {"family": "shifted", "base": self.base.spec(), "chi": self.chi.spec()}


class ZeroV:
    is_zero = True

    def __call__(self, x):
        return np.zeros(x.shape[:-1])

    def spec(self):
        return {"family": "zero"}


class HarmonicV:
    """V(x) = kappa |x|^2."""

    is_zero = False

    def __init__(self, d, **params):
        self.kappa = float(params.get("k", 1.0))
        if self.kappa < 0:
            raise ValueError("harmonic V requires kappa >= 0")

    def __call__(self, x):
        return self.kappa * np.sum(x * x, axis=-1)

    def spec(self):
        return {"family": "harmonic", "k": self.kappa}


class BumpV:
    """V(x) = kappa exp(-|x - c|^2 / w^2)."""

    is_zero = False

    def __init__(self, d, **params):
        self.kappa = float(params.get("k", 1.0))
        self.center = _vec(params, d, "c", 0.0)
        self.width = float(params.get("w", 1.0))
        if self.kappa < 0 or self.width <= 0:
            raise ValueError("bump V requires kappa >= 0 and w > 0")

    def __call__(self, x):
        r2 = np.sum((x - self.center) ** 2, axis=-1)
        return self.kappa * np.exp(-r2 / self.width**2)

    def spec(self):
        return {"family": "bump", "k": self.kappa, "c": self.center.tolist(),
                "w": self.width}


class GaussianChi:
    """chi(x) = a exp(-|x - c|^2 / w^2), with analytic grad and Laplacian."""

    def __init__(self, d, **params):
        self.a = float(params.get("a", 1.0))
        self.center = _vec(params, d, "c", 0.0)
        self.width = float(params.get("w", 1.0))
        self.d = d
        self.hessian_bound = abs(self.a) * (2.0 + 4.0 / math.e) * d / self.width**2

    def __call__(self, x):
        r2 = np.sum((x - self.center) ** 2, axis=-1)
        return self.a * np.exp(-r2 / self.width**2)

    def grad(self, x):
        dx = x - self.center
        r2 = np.sum(dx * dx, axis=-1)
        return (-2.0 / self.width**2) * self.a * np.exp(-r2 / self.width**2)[..., None] * dx

    def laplacian(self, x):
        dx = x - self.center
        r2 = np.sum(dx * dx, axis=-1)
        w2 = self.width**2
        return self.a * np.exp(-r2 / w2) * (4.0 * r2 / w2 - 2.0 * self.d) / w2

    def spec(self):
        return {"family": "gaussian", "a": self.a, "c": self.center.tolist(),
                "w": self.width}


class QuadraticChi:
    """chi(x) = x . Q x / 2 with Q symmetric."""

    def __init__(self, d, **params):
        q = params.get("matrix")
        if q is None:
            q = params.get("a", 1.0) * np.eye(d)
        q = np.asarray(q, dtype=float).reshape(d, d)
        if not np.allclose(q, q.T, atol=1e-12):
            raise ValueError("quadratic chi matrix must be symmetric")
        self.matrix = q
        self.d = d
        self.hessian_bound = float(np.linalg.norm(q, 2))

    def __call__(self, x):
        return 0.5 * np.sum((x @ self.matrix.T) * x, axis=-1)

    def grad(self, x):
        return x @ self.matrix.T

    def laplacian(self, x):
        return np.full(x.shape[:-1], float(np.trace(self.matrix)))

    def spec(self):
        return {"family": "quadratic", "matrix": self.matrix.tolist()}


_A_FAMILIES = {"zero": ZeroA, "affine": AffineA, "gaussian_bump": GaussianBumpA,
               "hoelder": HoelderA}
_V_FAMILIES = {"zero": ZeroV, "harmonic": HarmonicV, "bump": BumpV}
_CHI_FAMILIES = {"gaussian": GaussianChi, "quadratic": QuadraticChi}


@dataclass
class FieldBundle:
    """The potentials a functional evaluation needs, with metadata.

    ``div_a`` is required for the j = 3 functional; ``holder`` is the
    (alpha, constant) pair bounding |A(x) - A(y)| <= C |x-y|^alpha, used to
    sanity-check the small-ball correction at runtime.
    """

    d: int
    A: Callable
    V: Callable
    div_a: Optional[Callable] = None
    chi: Optional[object] = None
    holder: tuple = (1.0, 0.0)
    _spec: dict = field(default_factory=dict)

    @property
    def a_is_zero(self) -> bool:
        return getattr(self.A, "is_zero", False)

    @property
    def v_is_zero(self) -> bool:
        return getattr(self.V, "is_zero", False)

    def spec(self) -> dict:
        return self._spec


def _check_divergence(a_field, div, d, rng) -> None:
    """Central-difference probe check of the declared divergence."""
    probes = rng.uniform(-2.0, 2.0, size=(32, d))
    h = 1e-5
    fd = np.zeros(32)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        fd += (a_field(probes + e)[:, i] - a_field(probes - e)[:, i]) / (2.0 * h)
    declared = div(probes)
    if np.max(np.abs(fd - declared)) > 1e-4:
        raise ValueError("declared divergence disagrees with finite differences")


def make_fields(
    d: int,
    a_family: str = "zero",
    v_family: str = "zero",
    a_params: dict | None = None,
    v_params: dict | None = None,
    chi_family: str | None = None,
    chi_params: dict | None = None,
    validate: bool = True,
) -> FieldBundle:
    """Assemble a FieldBundle from named families."""
    if a_family not in _A_FAMILIES:
        raise ValueError(f"unknown A family '{a_family}' (have {sorted(_A_FAMILIES)})")
    if v_family not in _V_FAMILIES:
        raise ValueError(f"unknown V family '{v_family}' (have {sorted(_V_FAMILIES)})")
    a_cls = _A_FAMILIES[a_family]
    a = a_cls(d) if a_family == "zero" else a_cls(d, **(a_params or {}))
    v = _V_FAMILIES[v_family]() if v_family == "zero" else _V_FAMILIES[v_family](d, **(v_params or {}))
    chi = None
    if chi_family is not None:
        if chi_family not in _CHI_FAMILIES:
            raise ValueError(f"unknown chi family '{chi_family}' (have {sorted(_CHI_FAMILIES)})")
        chi = _CHI_FAMILIES[chi_family](d, **(chi_params or {}))
    div = a.div if getattr(a, "div", None) is not None else None
    if validate and div is not None and not a.is_zero:
        _check_divergence(a, div, d, np.random.Generator(np.random.Philox(key=[7, 7])))
    bundle = FieldBundle(
        d=d, A=a, V=v, div_a=div, chi=chi, holder=a.holder,
        _spec={"A": a.spec(), "V": v.spec(), "chi": chi.spec() if chi else None},
    )
    return bundle


class _ShiftedDiv:
    def __init__(self, base_div, chi):
        self.base_div = base_div
        self.chi = chi

    def __call__(self, x):
        return self.base_div(x) + self.chi.laplacian(x)


def gauge_shift(bundle: FieldBundle, chi) -> FieldBundle:
    """Bundle with A -> A + grad(chi) and divA -> divA + Lap(chi)."""
    shifted = ShiftedA(bundle.A, chi)
    div = _ShiftedDiv(bundle.div_a, chi) if bundle.div_a is not None else None
    return FieldBundle(
        d=bundle.d, A=shifted, V=bundle.V, div_a=div, chi=chi,
        holder=shifted.holder,
        _spec={"A": shifted.spec(), "V": bundle._spec.get("V"), "chi": chi.spec()},
    )


# ---------------------------------------------------------------------------
# payoffs
# ---------------------------------------------------------------------------

class OnePayoff:
    max_abs = 1.0
    is_zero = False

    def __call__(self, y):
        return np.ones(y.shape[:-1])

    def spec(self):
        return {"family": "one"}


class ZeroPayoff:
    max_abs = 0.0
    is_zero = True

    def __call__(self, y):
        return np.zeros(y.shape[:-1])

    def spec(self):
        return {"family": "zero"}


class GaussPayoff:
    """g(y) = exp(-|y - c|^2 / w^2)."""

    is_zero = False

    def __init__(self, d, **params):
        self.center = _vec(params, d, "c", 0.0)
        self.width = float(params.get("w", 1.0))
        self.max_abs = 1.0

    def __call__(self, y):
        r2 = np.sum((y - self.center) ** 2, axis=-1)
        return np.exp(-r2 / self.width**2)

    def spec(self):
        return {"family": "gauss", "c": self.center.tolist(), "w": self.width}


class FourierPayoff:
    """g(y) = e^{i xi . y}: turns an estimate into a characteristic function."""

    is_zero = False
    max_abs = 1.0

    def __init__(self, d, **params):
        self.xi = _vec(params, d, "xi")

    def __call__(self, y):
        return np.exp(1j * (y @ self.xi))

    def spec(self):
        return {"family": "fourier", "xi": self.xi.tolist()}


class PhasePayoff:
    """g(y) e^{i s chi(y)}: the gauge-adjusted payoff."""

    is_zero = False

    def __init__(self, base, chi, sign=1.0):
        self.base = base
        self.chi = chi
        self.sign = float(sign)
        self.max_abs = base.max_abs

    def __call__(self, y):
        return self.base(y) * np.exp(1j * self.sign * self.chi(y))

    def spec(self):
        return {"family": "phase", "base": self.base.spec(), "sign": self.sign,
                "chi": self.chi.spec()}


_PAYOFFS = {"one": OnePayoff, "zero": ZeroPayoff, "gauss": GaussPayoff,
            "fourier": FourierPayoff}


def make_payoff(family: str, d: int, **params):
    if family not in _PAYOFFS:
        raise ValueError(f"unknown payoff family '{family}' (have {sorted(_PAYOFFS)})")
    if family in ("one", "zero"):
        return _PAYOFFS[family]()
    return _PAYOFFS[family](d, **params)


def phase_payoff(base, chi, sign=1.0):
    return PhasePayoff(base, chi, sign)
