"""Parameter bundles for the dimensionless tropical-cyclone model.

The model couples the tangential wind speed of the eye-wall, v, with the
inner-core moisture, m.  After nondimensionalizing wind by the maximum
potential velocity V_p and time by C_d/(2h) V_p, the only remaining
parameters are the dissipative-heating parameter gamma in (0, 1) and the
dimensionless wind shear c = 2.2 S / V_p.
"""
from __future__ import annotations

from dataclasses import dataclass

# Empirical coupling between wind shear and moisture loss (the 2.2 S m term
# of the dimensional moisture equation).
SHEAR_COUPLING = 2.2


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless parameters, plus optional dimensional context.

    Parameters
    ----------
    gamma : float
        Dissipative-heating parameter, 0 < gamma < 1.
    c : float
        Dimensionless wind shear, c > 0.
    vp : float, optional
        Maximum potential velocity (velocity units), if known.
    vp_ref : float, optional
        Reference velocity used for nondimensionalization.  Defaults to vp.
    """

    gamma: float
    c: float
    vp: float | None = None
    vp_ref: float | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.c > 0.0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.vp is not None and not self.vp > 0.0:
            raise ValueError(f"vp must be positive, got {self.vp}")
        if self.vp_ref is None and self.vp is not None:
            object.__setattr__(self, "vp_ref", self.vp)
        if self.vp_ref is not None and not self.vp_ref > 0.0:
            raise ValueError(f"vp_ref must be positive, got {self.vp_ref}")


@dataclass(frozen=True)
class DimensionalParams:
    """Dimensional model parameters.

    Parameters
    ----------
    cd_over_h : float
        Surface drag over boundary-layer depth, inverse length.
    shear_s : float
        Wind shear S, velocity units.  May be zero.
    vp : float
        Maximum potential velocity, velocity units.
    gamma : float
        Dissipative-heating parameter, 0 < gamma < 1.
    """

    cd_over_h: float
    shear_s: float
    vp: float
    gamma: float

    def __post_init__(self):
        if not self.cd_over_h > 0.0:
            raise ValueError("cd_over_h must be positive")
        if self.shear_s < 0.0:
            raise ValueError("shear_s must be nonnegative")
        if not self.vp > 0.0:
            raise ValueError("vp must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")


def nondimensionalize(d: DimensionalParams) -> ModelParams:
    """Map dimensional parameters to the dimensionless model.

    c = 2.2 S / V_p; gamma passes through.  The time-scale factor relating
    dimensionless time tau to dimensional time t (tau = time_scale(d) * t)
    is exposed separately by :func:`time_scale`.
    """
    c = SHEAR_COUPLING * d.shear_s / d.vp
    if c == 0.0:
        # ModelParams requires c > 0; callers probing the zero-shear limit get
        # the raw value back rather than a constructed params object.
        raise ValueError("zero shear gives c = 0, outside the ModelParams domain; "
                         "use shear_ratio() for the raw value")
    return ModelParams(gamma=d.gamma, c=c, vp=d.vp)


def shear_ratio(d: DimensionalParams) -> float:
    """Raw dimensionless shear 2.2 S / V_p, valid for any S >= 0."""
    return SHEAR_COUPLING * d.shear_s / d.vp


def time_scale(d: DimensionalParams) -> float:
    """Factor converting dimensional time to dimensionless: tau = factor * t."""
    return 0.5 * d.cd_over_h * d.vp
