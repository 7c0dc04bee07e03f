"""Scenario files: ``key = value`` lines, ``#`` comments, dotted keys for sections."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, Tuple, Union

from .adversary import AttackConfig
from .core import ThresholdParams
from .protocols.base import ProtocolConfig
from .protocols.esrpsdc import EsrpsdcParams
from .radio import EnergyModel, RadioConfig

PROTOCOL_NAMES = ("esrpsdc", "leach", "pegasis")
TOPOLOGIES = ("uniform", "connected", "source_sink")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    field_m: float = 1000.0
    n_nodes: int = 500
    n_clusters: int = 20
    sim_time_s: float = 600.0
    bs_pos: Tuple[float, float] = (50.0, 75.0)
    init_energy_j: float = 0.5
    payload_bytes: Tuple[int, int] = (30, 70)
    load_packets: int = 200
    send_interval_s: float = 60.0
    protocol: str = "esrpsdc"
    seed: int = 1
    topology: str = "uniform"
    processing_delay_s: float = 1e-3
    leach_p: float = 0.05
    radio: RadioConfig = field(default_factory=RadioConfig)
    energy: EnergyModel = field(default_factory=EnergyModel)
    attack: AttackConfig = field(default_factory=AttackConfig)
    esrpsdc: EsrpsdcParams = field(default_factory=EsrpsdcParams)
    timing: ProtocolConfig = field(default_factory=ProtocolConfig)

    def __post_init__(self):
        if self.protocol not in PROTOCOL_NAMES:
            raise ScenarioError(f"protocol: {self.protocol!r} is not one of "
                                f"{', '.join(PROTOCOL_NAMES)}")
        if self.topology not in TOPOLOGIES:
            raise ScenarioError(f"topology: {self.topology!r} is not one of "
                                f"{', '.join(TOPOLOGIES)}")
        if self.n_nodes < self.n_clusters:
            raise ScenarioError(f"n_nodes: {self.n_nodes} is fewer than "
                                f"n_clusters = {self.n_clusters}")
        if self.n_clusters < 1:
            raise ScenarioError("n_clusters: must be >= 1")
        if self.load_packets < 1:
            raise ScenarioError("load_packets: must be >= 1")
        lo, hi = self.payload_bytes
        if not 0 < lo <= hi:
            raise ScenarioError("payload_bytes: need 0 < min <= max")
        if self.field_m <= 0 or self.sim_time_s <= 0 or self.send_interval_s <= 0:
            raise ScenarioError("field_m, sim_time_s and send_interval_s must be positive")
        if self.init_energy_j <= 0:
            raise ScenarioError("init_energy_j: must be positive")
        if not 0 < self.leach_p < 1:
            raise ScenarioError("leach.p: must be in (0, 1)")

    def with_value(self, key: str, value: Any) -> "Scenario":
        """Copy with one (possibly dotted) key replaced by an already-typed value."""
        section, _, name = key.rpartition(".")
        if not section:
            return replace(self, **{_TOP_ALIASES.get(name, name): value})
        attr, sub = _SECTIONS[section]
        return replace(self, **{attr: replace(getattr(self, attr), **{sub(name): value})})


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in s.replace(";", ",").split(",") if x.strip())


def _pair(s: str) -> Tuple[float, float]:
    v = _floats(s)
    if len(v) != 2:
        raise ValueError("expected two comma-separated numbers")
    return v


def _payload(s: str) -> Tuple[int, int]:
    parts = [p for p in s.replace("-", ",").split(",") if p.strip()]
    if len(parts) == 1:
        n = int(parts[0])
        return (n, n)
    if len(parts) != 2:
        raise ValueError("expected N or MIN-MAX")
    return (int(parts[0]), int(parts[1]))


def _optional(parse: Callable) -> Callable:
    return lambda s: None if s.strip().lower() in ("", "none", "auto") else parse(s)


_TOP: Dict[str, Callable] = {
    "field_m": float, "n_nodes": int, "n_clusters": int, "sim_time_s": float,
    "bs_pos": _pair, "init_energy_j": float, "payload_bytes": _payload,
    "load_packets": int, "send_interval_s": float, "protocol": str.strip, "seed": int,
    "topology": str.strip, "processing_delay_s": float,
}
_TOP_ALIASES: Dict[str, str] = {}

_SECTION_KEYS: Dict[str, Dict[str, Callable]] = {
    "radio": {
        "tx_power_dbm": _floats, "antenna_gain_tx": float, "antenna_gain_rx": float,
        "antenna_height_m": float, "noise_floor_dbm": float, "rx_threshold_dbm": float,
        "bandwidth_bps": float, "margin_db": float, "packet_error_rate": float,
        "band_upper_m": _optional(_floats),
    },
    "energy": {
        "e_elec_j_per_bit": float, "eps_fs_j_per_bit_m2": float,
        "eps_mp_j_per_bit_m4": float, "crossover_d_m": _optional(float),
        "e_aggregate_j_per_bit": float,
    },
    "attack": {
        "fraction": float, "single": _bool, "false_advert": _bool, "drop_prob": float,
        "divert": _bool, "activation_s": float, "snr_bonus_db": float,
        "mains_powered": _bool,
    },
    "esrpsdc": {
        "p": float, "c": float, "k": float, "member_id_bytes": int, "epoch_rounds": int,
        "abdicate_fraction": float, "detect_window": int, "detect_fraction": float,
        "detection": _bool, "setup_s": float,
    },
    "leach": {"p": float},
    "timing": {
        "round_period_s": float, "control_bytes": int, "aggregate_bytes": int,
        "jitter_s": float, "advert_level": int,
    },
}

_SECTIONS = {
    "radio": ("radio", lambda n: n),
    "energy": ("energy", lambda n: n),
    "attack": ("attack", lambda n: n),
    "esrpsdc": ("esrpsdc", lambda n: n),
    "timing": ("timing", lambda n: n),
}


def allowed_keys() -> Tuple[str, ...]:
    keys = list(_TOP)
    for sec, table in _SECTION_KEYS.items():
        keys += [f"{sec}.{k}" for k in table]
    return tuple(keys)


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    top: Dict[str, Any] = {}
    sections: Dict[str, Dict[str, Any]] = {s: {} for s in _SECTION_KEYS}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"{source}:{lineno}: parse error: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        section, _, name = key.rpartition(".")
        table = _TOP if not section else _SECTION_KEYS.get(section)
        if table is None or name not in table:
            raise ScenarioError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            parsed = table[name](value)
        except ValueError as exc:
            raise ScenarioError(f"{source}:{lineno}: parse error for {key!r}: {exc}") from None
        (top if not section else sections[section])[name] = parsed
    return _assemble(top, sections)


def _assemble(top: Dict[str, Any], sections: Dict[str, Dict[str, Any]]) -> Scenario:
    def build(cls, kw, section):
        try:
            return cls(**kw)
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"{section}: {exc}") from None

    th = sections["esrpsdc"]
    tparams = {k: th.pop(k) for k in ("p", "c", "k") if k in th}
    esr = build(EsrpsdcParams, dict(th, threshold=build(ThresholdParams, tparams, "esrpsdc")),
                "esrpsdc")
    kwargs = dict(top)
    if "p" in sections["leach"]:
        kwargs["leach_p"] = sections["leach"]["p"]
    kwargs.update(
        radio=build(RadioConfig, sections["radio"], "radio"),
        energy=build(EnergyModel, sections["energy"], "energy"),
        attack=build(AttackConfig, sections["attack"], "attack"),
        esrpsdc=esr,
        timing=build(ProtocolConfig, sections["timing"], "timing"),
    )
    try:
        return Scenario(**kwargs)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from None


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), str(path))


def scenario_fields() -> Tuple[str, ...]:
    return tuple(f.name for f in dataclasses.fields(Scenario))
