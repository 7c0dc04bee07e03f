"""Single runs, sweeps over one axis, summaries and CSV output."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .adversary import Adversary, inject
from .core import BS_ID, SimError, joules_to_mwh
from .engine import Simulator, make_rng
from .metrics import MetricsLedger
from .protocols import Esrpsdc, Leach, Pegasis, make_traffic
from .radio import range_for_power
from .scenario import PROTOCOL_NAMES, Scenario, ScenarioError
from .topology import connected_deployment, source_sink_deployment, uniform_deployment

log = logging.getLogger(__name__)

CSV_HEADER = (
    "protocol", "seed", "n_nodes", "n_clusters", "pct_malicious", "load_packets",
    "payload_bytes", "pdr", "mean_delay_s", "energy_total_mwh", "energy_per_node_mwh",
    "first_node_death_s", "detection_triggered", "detection_latency_s",
    "true_positives", "false_positives", "status",
)

# rng stream ids; the first three are shared by every protocol on the same seed
DEPLOY, MALICIOUS, TRAFFIC, PROTOCOL, ADVERSARY, CHANNEL = range(6)

AXES = {"load": "load_packets", "size": "n_nodes", "malicious": "attack.fraction"}


class InsufficientSeedsError(SimError):
    pass


@dataclass
class RunResult:
    scenario: Scenario
    sim: Simulator
    protocol: object
    ledger: MetricsLedger
    adversary: Adversary
    row: Dict[str, object]


def deploy(scn: Scenario) -> np.ndarray:
    rng = make_rng(scn.seed, DEPLOY)
    if scn.topology == "connected":
        radius = range_for_power(min(scn.radio.tx_power_dbm), scn.radio)
        return connected_deployment(scn.n_nodes, scn.field_m, scn.bs_pos, radius, rng)
    if scn.topology == "source_sink":
        return source_sink_deployment(scn.n_nodes, scn.field_m, scn.bs_pos, rng)
    return uniform_deployment(scn.n_nodes, scn.field_m, scn.bs_pos, rng)


def build(scn: Scenario, trace: Optional[TextIO] = None) -> RunResult:
    """Wire up engine, adversary, traffic and protocol without running."""
    pos = deploy(scn)
    n = scn.n_nodes
    sensors = list(range(1, n + 1))
    if scn.topology == "source_sink":
        candidates, sources = sensors[2:], sensors[:2]
    else:
        candidates, sources = sensors, None
    malicious = inject(candidates, scn.attack, make_rng(scn.seed, MALICIOUS))
    if sources is None:
        sources = [i for i in sensors if i not in malicious]
    traffic = make_traffic(sources, scn.load_packets, scn.send_interval_s, scn.sim_time_s,
                           scn.payload_bytes, make_rng(scn.seed, TRAFFIC))
    energy = np.full(n + 1, scn.init_energy_j)
    sim = Simulator(pos, energy, scn.radio, scn.energy, end_s=scn.sim_time_s,
                    rng=make_rng(scn.seed, CHANNEL),
                    processing_delay_s=scn.processing_delay_s, trace=trace,
                    mains=sorted(malicious) if scn.attack.mains_powered else ())
    ledger = MetricsLedger()
    adv = Adversary(malicious, scn.attack, make_rng(scn.seed, ADVERSARY))
    prng = make_rng(scn.seed, PROTOCOL)
    if scn.protocol == "esrpsdc":
        proto = Esrpsdc(sim, scn.timing, ledger, adv, traffic, prng,
                        n_clusters=scn.n_clusters, params=scn.esrpsdc)
    elif scn.protocol == "leach":
        proto = Leach(sim, scn.timing, ledger, adv, traffic, prng, p=scn.leach_p)
    else:
        proto = Pegasis(sim, scn.timing, ledger, adv, traffic, prng)
    return RunResult(scn, sim, proto, ledger, adv, {})


def pct_malicious(scn: Scenario) -> float:
    if scn.attack.single:
        return 100.0 / scn.n_nodes
    return 100.0 * math.floor(scn.attack.fraction * scn.n_nodes) / scn.n_nodes


def _base_row(scn: Scenario) -> Dict[str, object]:
    lo, hi = scn.payload_bytes
    return {
        "protocol": scn.protocol, "seed": scn.seed, "n_nodes": scn.n_nodes,
        "n_clusters": scn.n_clusters, "pct_malicious": pct_malicious(scn),
        "load_packets": scn.load_packets,
        "payload_bytes": str(lo) if lo == hi else f"{lo}-{hi}",
    }


def run_once(scn: Scenario, trace: Optional[TextIO] = None) -> RunResult:
    res = build(scn, trace)
    res.protocol.start()
    res.sim.run()
    sim, led, proto = res.sim, res.ledger, res.protocol
    honest = ~proto.malicious
    honest[BS_ID] = False
    total_j = proto.honest_energy_j()
    deaths = sim.death_s[1:]
    det = led.detection
    row = _base_row(scn)
    row.update(
        pdr=led.pdr,
        mean_delay_s=led.mean_delay_s,
        energy_total_mwh=joules_to_mwh(total_j),
        energy_per_node_mwh=joules_to_mwh(total_j) / max(1, int(honest.sum())),
        first_node_death_s=float(np.nanmin(deaths)) if np.isfinite(deaths).any() else math.nan,
        detection_triggered=int(det.triggered_at_s is not None),
        detection_latency_s=getattr(proto, "detection_latency_s", math.nan),
        true_positives=det.true_positives,
        false_positives=det.false_positives,
        status="ok",
    )
    res.row = row
    return res


def run_row(scn: Scenario) -> Dict[str, object]:
    """One CSV row; failures become a row whose status names the error."""
    try:
        return run_once(scn).row
    except (SimError, ScenarioError, ValueError, RuntimeError) as exc:
        log.warning("run %s seed %d failed: %s", scn.protocol, scn.seed, exc)
        row = _base_row(scn)
        for k in CSV_HEADER:
            row.setdefault(k, math.nan)
        row.update(detection_triggered=0, true_positives=0, false_positives=0,
                   status=f"error: {type(exc).__name__}: {exc}")
        return row


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    points: Tuple[float, ...]
    seeds_per_point: int = 20
    protocols: Tuple[str, ...] = PROTOCOL_NAMES

    def __post_init__(self):
        if self.axis not in AXES:
            raise ScenarioError(f"axis: {self.axis!r} is not one of {', '.join(AXES)}")
        if not self.points:
            raise ScenarioError("points: empty")
        if any(b <= a for a, b in zip(self.points, self.points[1:])):
            raise ScenarioError("points: must be strictly increasing")
        if self.seeds_per_point < 1:
            raise ScenarioError("seeds: must be >= 1")
        bad = [p for p in self.protocols if p not in PROTOCOL_NAMES]
        if bad or not self.protocols:
            raise ScenarioError(f"protocols: unknown {bad}")


def apply_point(base: Scenario, axis: str, value) -> Scenario:
    key = AXES[axis]
    if key != "attack.fraction":
        value = int(value)
    return base.with_value(key, value)


def sweep_scenarios(spec: SweepSpec, base: Scenario) -> List[Scenario]:
    out = []
    for proto in spec.protocols:
        for point in spec.points:
            at = apply_point(replace(base, protocol=proto), spec.axis, point)
            for i in range(spec.seeds_per_point):
                out.append(replace(at, seed=base.seed + i))
    return out


def run_sweep(spec: SweepSpec, base: Scenario, workers: int = 1) -> List[Dict[str, object]]:
    """Rows ordered by (protocol, point, seed) whatever order runs finish in."""
    scns = sweep_scenarios(spec, base)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(run_row, scns, chunksize=4))
    return [run_row(s) for s in scns]


def _point_of(row: Dict[str, object], axis: str):
    return {"load": row["load_packets"], "size": row["n_nodes"],
            "malicious": row["pct_malicious"]}[axis]


SUMMARY_METRICS = ("pdr", "mean_delay_s", "energy_total_mwh")


def summarize(rows: Iterable[Dict[str, object]], axis: str = "load",
              z: float = 1.959963984540054) -> List[Dict[str, object]]:
    """Mean and normal-approximation 95% half-width per (protocol, point)."""
    groups: Dict[Tuple[str, object], List[Dict[str, object]]] = {}
    for r in rows:
        if r["status"] != "ok":
            continue
        groups.setdefault((r["protocol"], _point_of(r, axis)), []).append(r)
    out = []
    for (proto, point), grp in groups.items():
        if len(grp) < 2:
            raise InsufficientSeedsError(f"{proto} at {point}: {len(grp)} seed(s), need 2")
        s = {"protocol": proto, "point": point, "n": len(grp)}
        for m in SUMMARY_METRICS:
            v = np.array([float(r[m]) for r in grp])
            v = v[np.isfinite(v)]
            if len(v) == 0:
                s[m], s[m + "_ci"] = math.nan, math.nan
                continue
            s[m] = float(v.mean())
            s[m + "_ci"] = float(z * v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan
        out.append(s)
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".10g")
    return str(v)


def write_csv(rows: Sequence[Dict[str, object]], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in CSV_HEADER])


def csv_text(rows: Sequence[Dict[str, object]]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()
