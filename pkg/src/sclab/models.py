"""Power-law fluxes, the spectral multiplicative noise family and sampled
checks of the structural hypotheses they are meant to satisfy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Grid

SIGMA_KINDS = {"zero": 0, "linear": 1, "tanh": 2}


@dataclass(frozen=True)
class FluxModel:
    """Flux ``A_j(u) = (scale/d) |u|^q0 u`` for every component ``j``.

    ``q0`` must be an even integer >= 2 unless ``experimental`` is set, in which
    case any integer >= 1 is accepted.  ``scale=0`` gives the zero flux used as a
    test hook.
    """

    q0: int = 2
    d: int = 1
    scale: float = 1.0
    experimental: bool = False

    def __post_init__(self):
        if int(self.q0) != self.q0 or self.q0 < 1:
            raise ValueError(f"q0 must be a positive integer, got {self.q0}")
        if not self.experimental and (self.q0 < 2 or self.q0 % 2):
            raise ValueError(
                f"q0={self.q0} is outside the supported family (even q0 >= 2); "
                "pass experimental=True to use it anyway"
            )
        if self.d not in (1, 2):
            raise ValueError(f"d must be 1 or 2, got {self.d}")
        if self.scale < 0:
            raise ValueError("flux scale must be nonnegative")

    @property
    def c_coer(self) -> float:
        """Sharp constant ``C`` in ``sum_j |A_j(u) - A_j(v)| >= C |u - v|^(q0+1)``.

        The quotient is minimised at ``v = -u``, giving ``scale * 2**-q0``.
        """
        return self.scale * 2.0 ** (-self.q0)

    def component(self, u):
        u = np.asarray(u, dtype=float)
        return (self.scale / self.d) * np.abs(u) ** self.q0 * u

    def total(self, u):
        """``sum_j A_j(u)``."""
        u = np.asarray(u, dtype=float)
        return self.scale * np.abs(u) ** self.q0 * u

    def speed(self, u):
        u = np.asarray(u, dtype=float)
        return (self.scale * (self.q0 + 1) / self.d) * np.abs(u) ** self.q0


def flux_eval(flux: FluxModel, u) -> np.ndarray:
    """All flux components at ``u``; the last axis has length ``d``."""
    comp = flux.component(u)
    return np.repeat(comp[..., None], flux.d, axis=-1)


def wave_speed(flux: FluxModel, u):
    """``max_j a_j(u)``; all components coincide for this family."""
    s = flux.speed(u)
    return float(s) if np.ndim(s) == 0 else s


@dataclass(frozen=True)
class NoiseModel:
    """Noise modes ``g_k(x, u) = c_k (alpha_k(x) + sigma(u))``, ``k = 1..K``.

    ``alpha_k(x) = sin(k pi xhat) / k`` with ``xhat`` the first coordinate
    rescaled to (0, 1); ``alpha=False`` switches the spatial part off, which
    makes ``u = 0`` a fixed point of the dynamics.
    """

    coefficients: tuple[float, ...] = ()
    sigma: str = "linear"
    alpha: bool = True
    rule: str = "explicit"

    def __post_init__(self):
        if self.sigma not in SIGMA_KINDS:
            raise ValueError(f"unknown sigma {self.sigma!r}; choose from {sorted(SIGMA_KINDS)}")
        c = tuple(float(x) for x in self.coefficients)
        if not all(np.isfinite(c)):
            raise ValueError("noise coefficients must be finite")
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def from_rule(cls, K: int, rule: str = "geometric", ratio: float = 0.5,
                  exponent: float = 1.0, sigma: str = "linear", alpha: bool = True):
        """Truncate an infinite coefficient sequence to its first ``K`` terms.

        The full sequence must be square-summable, otherwise the truncation
        would not converge as ``K`` grows and the model is rejected.
        """
        if K < 0:
            raise ValueError("K must be >= 0")
        k = np.arange(1, K + 1, dtype=float)
        if rule == "geometric":
            if not abs(ratio) < 1:
                raise ValueError(f"geometric ratio {ratio} gives a non-summable noise budget")
            c = ratio ** k
        elif rule == "power":
            if not exponent > 0.5:
                raise ValueError(f"power exponent {exponent} gives a non-summable noise budget")
            c = k ** (-exponent)
        elif rule == "constant":
            raise ValueError("constant coefficients give a non-summable noise budget")
        else:
            raise ValueError(f"unknown coefficient rule {rule!r}")
        return cls(tuple(c), sigma=sigma, alpha=alpha, rule=rule)

    @classmethod
    def zero(cls):
        return cls((), sigma="zero", alpha=False, rule="zero")

    @property
    def K(self) -> int:
        return len(self.coefficients)

    @property
    def c(self) -> np.ndarray:
        return np.array(self.coefficients, dtype=float)

    @property
    def sigma_code(self) -> int:
        return SIGMA_KINDS[self.sigma]

    @property
    def sigma_lipschitz(self) -> float:
        return 0.0 if self.sigma == "zero" else 1.0

    @property
    def is_zero(self) -> bool:
        return self.K == 0 or not np.any(self.c)

    def sigma_fn(self, u):
        u = np.asarray(u, dtype=float)
        if self.sigma == "zero":
            return np.zeros_like(u)
        if self.sigma == "linear":
            return u
        return np.tanh(u)

    def profiles(self, xhat) -> np.ndarray:
        """``alpha_k(xhat)`` stacked along a leading axis of length K."""
        xhat = np.asarray(xhat, dtype=float)
        k = np.arange(1, self.K + 1).reshape((-1,) + (1,) * xhat.ndim)
        if not self.alpha:
            return np.zeros((self.K,) + xhat.shape)
        return np.sin(k * np.pi * xhat) / k

    def g(self, xhat, u) -> np.ndarray:
        """All modes ``g_k(xhat, u)``, leading axis k."""
        xhat, u = np.broadcast_arrays(np.asarray(xhat, float), np.asarray(u, float))
        c = self.c.reshape((-1,) + (1,) * u.ndim)
        return c * (self.profiles(xhat) + self.sigma_fn(u))

    def G2(self, xhat, u) -> np.ndarray:
        return np.sum(self.g(xhat, u) ** 2, axis=0)

    @property
    def mode_bounds(self) -> np.ndarray:
        """``C_k`` with ``|g_k(x, u)| <= C_k (1 + |u|)``."""
        sup_alpha = 1.0 / np.arange(1, self.K + 1) if self.alpha else np.zeros(self.K)
        return np.abs(self.c) * np.maximum(1.0, sup_alpha + self.sigma_lipschitz)

    def cell_profiles(self, grid: Grid) -> np.ndarray:
        """``c_k alpha_k`` on the first grid axis, shape (K, cells[0])."""
        return self.c[:, None] * self.profiles(grid.first_axis_unit())


@dataclass(frozen=True)
class Models:
    flux: FluxModel
    noise: NoiseModel


@dataclass
class ValidationReport:
    name: str
    passed: bool
    constants: dict[str, float] = field(default_factory=dict)
    violations: dict[str, float] = field(default_factory=dict)
    sample_range: tuple[float, float] | None = None
    n_samples: int = 0

    def lines(self) -> list[str]:
        out = [f"{self.name}: {'PASS' if self.passed else 'FAIL'}"
               f" (range={self.sample_range}, samples={self.n_samples})"]
        out += [f"  {k} = {v:.6g}" for k, v in self.constants.items()]
        out += [f"  violation[{k}] = {v:.6g}" for k, v in self.violations.items()]
        return out


def validate_h1(flux: FluxModel, sample_range=(-3.0, 3.0), n_samples: int = 200
                ) -> ValidationReport:
    """Sampled check of oddness, monotonicity, derivative growth and coercivity.

    Samples form a lattice symmetric about 0 so that the minimising pairs
    ``(u, -u)`` of the coercivity quotient are included.  Pairs with ``u == v``
    are skipped.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    lo, hi = map(float, sample_range)
    half = max(abs(lo), abs(hi))
    u = np.linspace(-half, half, n_samples)
    u = u[(u >= lo) & (u <= hi)]

    A = flux.total(u)
    odd_violation = float(np.max(np.abs(flux.total(-u) + A)))
    dA = np.diff(A)
    mono_violation = float(max(0.0, -np.min(dA))) if dA.size else 0.0
    if np.any(dA == 0):
        mono_violation = max(mono_violation, np.finfo(float).tiny)

    iu, iv = np.triu_indices(u.size, k=1)
    du = np.abs(u[iu] - u[iv])
    keep = du > 0
    iu, iv, du = iu[keep], iv[keep], du[keep]
    ratio = np.abs(A[iu] - A[iv]) / du ** (flux.q0 + 1)
    coercivity = float(np.min(ratio)) if ratio.size else float("nan")

    a = flux.speed(u) * flux.d
    growth = np.abs(a[iu] - a[iv]) / (
        (1 + np.abs(u[iu]) ** (flux.q0 - 1) + np.abs(u[iv]) ** (flux.q0 - 1)) * du)
    growth_const = float(np.max(growth)) if growth.size else 0.0

    passed = odd_violation == 0.0 and mono_violation == 0.0 and coercivity > 0
    return ValidationReport(
        "H1",
        passed,
        constants={
            "coercivity_empirical": coercivity,
            "coercivity_closed_form": flux.c_coer,
            "growth_constant": growth_const,
        },
        violations={"oddness": odd_violation, "monotonicity": mono_violation},
        sample_range=(lo, hi),
        n_samples=int(u.size),
    )


def validate_noise(noise: NoiseModel, grid: Grid, state_range=(-3.0, 3.0),
                   n_samples: int = 1000, seed: int = 0) -> ValidationReport:
    """Empirical constants for the linear-growth, Lipschitz and mode-budget bounds.

    Positions are cell centres (first coordinate, rescaled); states are drawn
    uniformly from ``state_range``.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    rng = np.random.default_rng(seed)
    xc = grid.first_axis_unit()
    lo, hi = map(float, state_range)
    x = rng.choice(xc, n_samples)
    u = rng.uniform(lo, hi, n_samples)
    y = rng.choice(xc, n_samples)
    v = rng.uniform(lo, hi, n_samples)

    if noise.K == 0:
        return ValidationReport("noise", True,
                                constants={"C0_growth": 0.0, "C0_lipschitz": 0.0,
                                           "sum_Ck2": 0.0},
                                sample_range=(lo, hi), n_samples=n_samples)

    G2 = noise.G2(x, u)
    c_growth = float(np.max(G2 / (1 + u ** 2)))
    # x-distances measured in physical units along axis 0
    length = grid.extents[0][1] - grid.extents[0][0]
    diff2 = np.sum((noise.g(x, u) - noise.g(y, v)) ** 2, axis=0)
    dist2 = (length * (x - y)) ** 2 + (u - v) ** 2
    ok = dist2 > 0
    c_lip = float(np.max(diff2[ok] / dist2[ok])) if np.any(ok) else 0.0
    Ck = noise.mode_bounds
    h4_ratio = float(np.max(np.abs(noise.g(x, u)) / (Ck[:, None] * (1 + np.abs(u)))))
    sum_ck2 = float(np.sum(Ck ** 2))
    consts = {"C0_growth": c_growth, "C0_lipschitz": c_lip, "sum_Ck2": sum_ck2}
    passed = all(np.isfinite(list(consts.values()))) and h4_ratio <= 1.0 + 1e-12
    return ValidationReport("noise", passed, constants=consts,
                            violations={"H4_bound_ratio_minus_1": max(0.0, h4_ratio - 1.0)},
                            sample_range=(lo, hi), n_samples=n_samples)
