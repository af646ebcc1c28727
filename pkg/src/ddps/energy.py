"""Per-slot energy accounting for a solar-harvesting device that splits its
workload between the local CPU and an edge server.

All energies are joules per one-second slot, data sizes are bits, rates are
bits per second. The three thresholds (critical size, maximum offload,
balanced offload) are the closed forms that compare a plan's energy draw
against the per-slot harvest.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "EnergyParams",
    "BatteryState",
    "OffloadThresholds",
    "InsufficientEnergyError",
    "local_energy",
    "transmission_times",
    "transmission_energy",
    "total_energy",
    "harvest_energy",
    "update_battery",
    "critical_data",
    "max_offload",
    "balanced_offload",
    "compute_thresholds",
]

# Negative rounding residue below this magnitude is snapped to zero joules.
_SNAP = 1e-12


class InsufficientEnergyError(ValueError):
    """A slot's plan draws more energy than harvest plus stored charge."""


@dataclass(frozen=True)
class EnergyParams:
    """Physical constants of one device and its solar harvester."""

    k: float      # effective switched capacitance, J*s^2/cycle^3
    h: float      # CPU cycles needed per bit
    A: float      # harvester area, m^2
    H: float      # mean solar irradiance, W/m^2
    eta: float    # harvester efficiency, in (0, 1)
    k_a: float    # weather/occlusion correction, in [0, 1]
    P_u: float    # uplink transmit power, W
    P_d: float    # downlink receive power, W
    R_u: float    # uplink rate, bit/s
    R_d: float    # downlink rate, bit/s
    r: float      # output bits per input bit
    E_b: float    # battery capacity, J
    F_loc: float  # local CPU frequency, cycle/s

    def __post_init__(self) -> None:
        positive = ("k", "h", "A", "H", "P_u", "P_d", "R_u", "R_d", "r", "E_b", "F_loc")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        if not 0.0 <= self.k_a <= 1.0:
            raise ValueError("k_a must lie in [0, 1]")
        # Equal slopes make the balanced-offload equation singular.
        if self.local_slope == self.offload_slope:
            raise ValueError("local energy slope k*h*F_loc^2 equals offload slope; no unique balance point")

    @property
    def local_slope(self) -> float:
        """Joules consumed per locally executed bit: k * h * F_loc^2."""
        return self.k * self.h * self.F_loc**2

    @property
    def offload_slope(self) -> float:
        """Joules consumed per offloaded bit across both links."""
        return self.P_u / self.R_u + self.r * self.P_d / self.R_d


@dataclass(frozen=True)
class BatteryState:
    """Stored energy of one device at the start of a slot."""

    E_r: float     # stored energy, J; always within [0, E_b]
    slot: int = 0  # slot index

    def __post_init__(self) -> None:
        if self.E_r < 0:
            raise ValueError("stored energy cannot be negative")


@dataclass(frozen=True)
class OffloadThresholds:
    """The three data-size thresholds of one device for a given task size."""

    l_c: float            # below this the whole task runs locally within harvest
    l_m: float            # above this even pure transmission exceeds harvest
    q_opt: float | None   # harvest-neutral offload amount; None when undefined


def _snap(x: float) -> float:
    return 0.0 if -_SNAP < x < 0.0 else x


def local_energy(p: EnergyParams, l: float, q: float) -> float:
    """Energy to execute the non-offloaded l - q bits on the local CPU."""
    if l < 0 or q < 0 or q > l:
        raise ValueError("need 0 <= q <= l")
    return _snap(p.local_slope * (l - q))


def transmission_times(p: EnergyParams, q: float) -> tuple[float, float]:
    """Uplink and downlink transfer times for q offloaded bits."""
    if q < 0:
        raise ValueError("q must be non-negative")
    return q / p.R_u, q * p.r / p.R_d


def transmission_energy(p: EnergyParams, q: float) -> tuple[float, float]:
    """Uplink and downlink energy for q offloaded bits."""
    t_up, t_down = transmission_times(p, q)
    return p.P_u * t_up, p.P_d * t_down


def total_energy(p: EnergyParams, l: float, q: float) -> float:
    """Whole-slot energy of a plan: upload, local execution, download."""
    e_u, e_d = transmission_energy(p, q)
    return _snap(e_u + local_energy(p, l, q) + e_d)


def harvest_energy(p: EnergyParams) -> float:
    """Solar energy collected during one slot: A * H * eta * k_a."""
    return p.A * p.H * p.eta * p.k_a


def update_battery(b: BatteryState, p: EnergyParams, e_tot: float) -> BatteryState:
    """Advance the battery one slot: add harvest, subtract the slot's draw.

    Raises InsufficientEnergyError when the unclamped level would go
    negative; the decision layer must never have committed such a plan.
    The level is capped at the battery capacity.
    """
    if e_tot < 0:
        raise ValueError("consumed energy cannot be negative")
    surplus = b.E_r + harvest_energy(p) - e_tot
    if surplus < -_SNAP:
        raise InsufficientEnergyError(
            f"slot {b.slot}: plan needs {e_tot:.6g} J but only "
            f"{b.E_r + harvest_energy(p):.6g} J available"
        )
    return BatteryState(E_r=min(max(surplus, 0.0), p.E_b), slot=b.slot + 1)


def critical_data(p: EnergyParams) -> float:
    """Largest task size whose fully-local execution fits in one harvest."""
    return harvest_energy(p) / p.local_slope


def max_offload(p: EnergyParams) -> float:
    """Largest offload volume whose transmission alone fits in one harvest."""
    return harvest_energy(p) / p.offload_slope


def balanced_offload(p: EnergyParams, l: float) -> float | None:
    """Offload amount at which the plan's energy exactly equals the harvest.

    Solves harvest = local_slope*(l - q) + offload_slope*q and clamps the
    solution into [max(0, l - l_c), l_m]. Returns None when offloading costs
    more energy per bit than local work saves and the raw solution is
    negative (no balance point exists).
    """
    if l < critical_data(p):
        raise ValueError("balance point is only defined for l >= l_c")
    c, slope_off = p.local_slope, p.offload_slope
    raw = (c * l - harvest_energy(p)) / (c - slope_off)
    if c <= slope_off and raw < 0:
        return None
    lo = max(0.0, l - critical_data(p))
    return min(max(raw, lo), max_offload(p))


def compute_thresholds(p: EnergyParams, l: float) -> OffloadThresholds:
    """All three thresholds of a device for a task of l bits."""
    l_c = critical_data(p)
    q_opt = balanced_offload(p, l) if l >= l_c else None
    return OffloadThresholds(l_c=l_c, l_m=max_offload(p), q_opt=q_opt)
