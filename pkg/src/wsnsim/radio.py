"""Two-ray link budget, SNR, and first-order radio energy costs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

from .core import InvalidParamsError, LevelBand, NodeState, SimError, distance


class UnreachableError(SimError):
    pass


@dataclass(frozen=True)
class RadioConfig:
    # one entry per power-level index, ascending; the BS sweeps the same levels
    tx_power_dbm: Tuple[float, ...] = (-22.0, -10.0, -3.0, 7.5)
    antenna_gain_tx: float = 1.0
    antenna_gain_rx: float = 1.0
    antenna_height_m: float = 1.5
    noise_floor_dbm: float = -111.0
    rx_threshold_dbm: float = -111.0
    bandwidth_bps: float = 20000.0
    margin_db: float = 3.0
    packet_error_rate: float = 0.0
    # explicit band upper limits; derived from the BS power sweep when None
    band_upper_m: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.noise_floor_dbm > self.rx_threshold_dbm:
            raise InvalidParamsError("noise floor must not exceed rx threshold")
        if self.bandwidth_bps <= 0:
            raise InvalidParamsError("bandwidth must be positive")
        if not self.tx_power_dbm:
            raise InvalidParamsError("at least one power level is required")
        if any(b <= a for a, b in zip(self.tx_power_dbm, self.tx_power_dbm[1:])):
            raise InvalidParamsError("power levels must be strictly increasing")
        if self.band_upper_m is not None:
            if len(self.band_upper_m) != len(self.tx_power_dbm):
                raise InvalidParamsError("need one band limit per power level")
            if any(b <= a for a, b in zip(self.band_upper_m, self.band_upper_m[1:])):
                raise InvalidParamsError("band limits must be strictly increasing")
        if not 0 <= self.packet_error_rate < 1:
            raise InvalidParamsError("packet_error_rate must be in [0, 1)")

    @property
    def gain_db(self) -> float:
        h = self.antenna_height_m
        return 10 * math.log10(self.antenna_gain_tx * self.antenna_gain_rx * h**4)

    @property
    def max_power_dbm(self) -> float:
        return self.tx_power_dbm[-1]

    @property
    def levels(self) -> Tuple[LevelBand, ...]:
        uppers = self.band_upper_m
        if uppers is None:
            uppers = tuple(range_for_power(p, self) for p in self.tx_power_dbm)
        bands, lower = [], 0.0
        for i, upper in enumerate(uppers, start=1):
            bands.append(LevelBand(i, lower, upper))
            lower = upper
        return tuple(bands)


@dataclass(frozen=True)
class EnergyModel:
    e_elec_j_per_bit: float = 50e-9
    eps_fs_j_per_bit_m2: float = 10e-12
    eps_mp_j_per_bit_m4: float = 0.0013e-12
    crossover_d_m: Optional[float] = None
    e_aggregate_j_per_bit: float = 5e-9

    def __post_init__(self):
        coeffs = (self.e_elec_j_per_bit, self.eps_fs_j_per_bit_m2,
                  self.eps_mp_j_per_bit_m4, self.e_aggregate_j_per_bit)
        if any(c <= 0 for c in coeffs):
            raise InvalidParamsError("energy coefficients must be positive")
        if self.crossover_d_m is not None and self.crossover_d_m <= 0:
            raise InvalidParamsError("crossover distance must be positive")

    @property
    def d0(self) -> float:
        if self.crossover_d_m is not None:
            return self.crossover_d_m
        return math.sqrt(self.eps_fs_j_per_bit_m2 / self.eps_mp_j_per_bit_m4)


@dataclass(frozen=True)
class LinkBudget:
    rx_power_dbm: float
    snr_db: float
    receivable: bool


def two_ray_rx_power(tx_power_dbm: float, d: float, cfg: RadioConfig) -> float:
    if d <= 0:
        raise InvalidParamsError(f"distance must be positive, got {d}")
    return tx_power_dbm + cfg.gain_db - 40 * math.log10(d)


def range_for_power(tx_power_dbm: float, cfg: RadioConfig) -> float:
    """Largest distance at which ``tx_power_dbm`` still meets the rx threshold."""
    return 10 ** ((tx_power_dbm + cfg.gain_db - cfg.rx_threshold_dbm) / 40)


def link_budget(rx_power_dbm: float, cfg: RadioConfig) -> LinkBudget:
    return LinkBudget(rx_power_dbm, rx_power_dbm - cfg.noise_floor_dbm,
                      rx_power_dbm >= cfg.rx_threshold_dbm)


def snr(tx: NodeState, rx: NodeState, cfg: RadioConfig,
        power_dbm: Optional[float] = None) -> LinkBudget:
    """Link budget from ``tx`` to ``rx``; defaults to the highest power level."""
    if tx.id == rx.id:
        raise InvalidParamsError("tx and rx must be different nodes")
    d = distance(tx.pos, rx.pos)
    if d == 0:
        raise InvalidParamsError("coincident nodes")
    p = cfg.max_power_dbm if power_dbm is None else power_dbm
    return link_budget(two_ray_rx_power(p, d, cfg), cfg)


def tx_energy(bits: int, d: float, em: EnergyModel) -> float:
    if d < em.d0:
        return em.e_elec_j_per_bit * bits + em.eps_fs_j_per_bit_m2 * bits * d * d
    return em.e_elec_j_per_bit * bits + em.eps_mp_j_per_bit_m4 * bits * d**4


def rx_energy(bits: int, em: EnergyModel) -> float:
    return em.e_elec_j_per_bit * bits


def min_tx_power_for(rssi_of_advert_dbm: float, advert_tx_power_dbm: float,
                     cfg: RadioConfig, margin_db: Optional[float] = None) -> float:
    """Smallest power level that reaches the advertiser back, with margin.

    The path loss is inferred from how much weaker the advert arrived than
    it was sent; links are assumed reciprocal.
    """
    margin = cfg.margin_db if margin_db is None else margin_db
    path_loss = advert_tx_power_dbm - rssi_of_advert_dbm
    need = cfg.rx_threshold_dbm + margin
    for p in cfg.tx_power_dbm:
        if p - path_loss >= need:
            return p
    raise UnreachableError(
        f"path loss {path_loss:.2f} dB exceeds the top power level")
