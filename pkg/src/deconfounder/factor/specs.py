"""Factor-model specifications and their text form (``ppca:k=3,prior_var=1``)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import ClassVar

from ..errors import SpecError


@dataclass(frozen=True, kw_only=True)
class FactorModelSpec:
    k: int = 1
    max_iter: int = 500
    tol: float = 1e-8
    seed: int = 0

    variant: ClassVar[str] = ""
    allowed_kinds: ClassVar[tuple] = ()

    def __post_init__(self):
        if int(self.k) < 1:
            raise SpecError("latent dimension k must be >= 1")
        if self.max_iter < 1:
            raise SpecError("max_iter must be >= 1")
        if not self.tol > 0:
            raise SpecError("tol must be > 0")

    def label(self) -> str:
        return f"{self.variant}(k={self.k})"

    def to_dict(self) -> dict:
        return {"variant": self.variant, **asdict(self)}

    def to_text(self) -> str:
        defaults = type(self)()
        parts = [f"{f.name}={getattr(self, f.name)}" for f in fields(self)
                 if f.name == "k" or getattr(self, f.name) != getattr(defaults, f.name)]
        return f"{self.variant}:" + ",".join(parts)


@dataclass(frozen=True, kw_only=True)
class PPCASpec(FactorModelSpec):
    """a_ij ~ N(z_i . theta_j, noise_var), z_i ~ N(0, prior_var I)."""

    prior_var: float = 1.0
    noise_var: float = 1.0
    learn_noise: bool = True
    init: str = "random"

    variant: ClassVar[str] = "ppca"
    allowed_kinds: ClassVar[tuple] = ("real",)

    def __post_init__(self):
        super().__post_init__()
        if not (self.prior_var > 0 and self.noise_var > 0):
            raise SpecError("variance hyperparameters must be > 0")
        if self.init not in ("random", "pca"):
            raise SpecError("init must be 'random' or 'pca'")


@dataclass(frozen=True, kw_only=True)
class LinearFactorSpec(PPCASpec):
    """PPCA with a per-cause intercept."""

    variant: ClassVar[str] = "linear"


@dataclass(frozen=True, kw_only=True)
class QuadraticFactorSpec(FactorModelSpec):
    """a_ij ~ N(eta0_j + eta1_j . z + eta2_j . z**2, noise_var), z ~ N(0, I), k in {1, 2, 3}."""

    noise_var: float = 1.0
    learn_noise: bool = True
    grid_points: int = 0
    grid_limit: float = 5.0

    variant: ClassVar[str] = "quadratic"
    allowed_kinds: ClassVar[tuple] = ("real",)

    def __post_init__(self):
        super().__post_init__()
        if self.k not in (1, 2, 3):
            raise SpecError("quadratic factor models support k in {1, 2, 3}")
        if not self.noise_var > 0:
            raise SpecError("noise_var must be > 0")

    def points_per_axis(self) -> int:
        return self.grid_points or {1: 201, 2: 41, 3: 17}[self.k]


@dataclass(frozen=True, kw_only=True)
class PoissonFactorSpec(FactorModelSpec):
    """a_ij ~ Poisson(z_i . theta_j) with Gamma(shape, rate) priors on z and theta."""

    shape: float = 0.3
    rate: float = 0.3

    variant: ClassVar[str] = "pf"
    allowed_kinds: ClassVar[tuple] = ("count", "binary")

    def __post_init__(self):
        super().__post_init__()
        if not (self.shape > 0 and self.rate > 0):
            raise SpecError("gamma hyperparameters must be > 0")


@dataclass(frozen=True, kw_only=True)
class LFASpec(FactorModelSpec):
    """a_ij ~ Binomial(trials, sigmoid(pi_ij)), pi_ij ~ N(z_i . theta_j + b_j, link_var)."""

    link_var: float = 0.1
    trials: int = 2
    intercept: bool = True
    quad_points: int = 21
    learning_rate: float = 1.0
    max_iter: int = 200

    variant: ClassVar[str] = "lfa"
    allowed_kinds: ClassVar[tuple] = ("count", "binary")

    def __post_init__(self):
        super().__post_init__()
        if not self.link_var > 0:
            raise SpecError("link_var must be > 0")
        if self.trials < 1:
            raise SpecError("trials must be >= 1")


SPEC_TYPES = {cls.variant: cls for cls in
              (PPCASpec, LinearFactorSpec, QuadraticFactorSpec, PoissonFactorSpec, LFASpec)}


def _coerce(value: str, current):
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise SpecError(f"expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def spec_from_dict(data: dict) -> FactorModelSpec:
    data = dict(data)
    variant = data.pop("variant", None)
    if variant not in SPEC_TYPES:
        raise SpecError(f"unknown factor model {variant!r}")
    return SPEC_TYPES[variant](**data)


def parse_factor_spec(text: str) -> FactorModelSpec:
    """Parse ``variant[:key=value,...]``, e.g. ``pf:k=10,shape=0.3``."""
    variant, _, rest = text.strip().partition(":")
    variant = variant.strip().lower()
    if variant not in SPEC_TYPES:
        raise SpecError(f"unknown factor model {variant!r}; choose from {sorted(SPEC_TYPES)}")
    cls = SPEC_TYPES[variant]
    defaults = {f.name: getattr(cls(), f.name) for f in fields(cls)}
    kwargs = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        key = key.strip()
        if not eq or key not in defaults:
            raise SpecError(f"bad option {item!r} for {variant}")
        kwargs[key] = _coerce(value.strip(), defaults[key])
    return cls(**kwargs)
