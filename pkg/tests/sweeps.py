"""Cached runs for the acceptance suite.

Rows are cached per scenario in ``tests/.cache/runs-<hash>.jsonl``, where the
hash covers every source file of the package, so a code change invalidates
the cache. Running this file directly warms the cache:

    python tests/sweeps.py
"""
from __future__ import annotations

import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Sequence

import wsnsim
from wsnsim.adversary import AttackConfig
from wsnsim.runner import SweepSpec, run_once, run_row, sweep_scenarios
from wsnsim.scenario import Scenario, load_scenario

ROOT = Path(__file__).resolve().parent.parent
CACHE = Path(__file__).resolve().parent / ".cache"
SEEDS = 20

LOADS = (40, 80, 120, 160, 200)
FRACTIONS = (0.0, 0.1, 0.2, 0.3, 0.4)
SIZES = (100, 200, 300, 400, 500)
SIZE_SEEDS = 5
DETECT_RUNS = 100


def code_hash() -> str:
    h = hashlib.sha256()
    pkg = Path(wsnsim.__file__).parent
    for p in sorted(pkg.rglob("*.py")):
        h.update(p.relative_to(pkg).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


class RunCache:
    def __init__(self):
        CACHE.mkdir(exist_ok=True)
        self.path = CACHE / f"runs-{code_hash()}.jsonl"
        self.rows: Dict[str, dict] = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                rec = json.loads(line)
                self.rows[rec["key"]] = rec

    def get(self, scn: Scenario) -> dict:
        key = repr(scn)
        rec = self.rows.get(key)
        if rec is None:
            t = time.perf_counter()
            try:
                res = run_once(scn)
                row, cons = res.row, res.sim.conservation_error()
            except Exception:
                row, cons = run_row(scn), None
            rec = {"key": key, "row": row, "elapsed_s": time.perf_counter() - t,
                   "conservation": cons}
            self.rows[key] = rec
            with open(self.path, "a") as f:
                f.write(json.dumps(rec) + "\n")
        return rec

    def sweep(self, spec: SweepSpec, base: Scenario) -> List[dict]:
        return [self.get(s) for s in sweep_scenarios(spec, base)]


def attacked_base() -> Scenario:
    return Scenario(attack=AttackConfig(fraction=0.30))


def load_spec(protocols=("esrpsdc", "leach", "pegasis")) -> SweepSpec:
    return SweepSpec("load", LOADS, SEEDS, tuple(protocols))


def fraction_spec() -> SweepSpec:
    return SweepSpec("malicious", FRACTIONS, SEEDS)


def size_spec() -> SweepSpec:
    return SweepSpec("size", SIZES, SIZE_SEEDS)


def detect_base() -> Scenario:
    return load_scenario(ROOT / "scenarios" / "detect50.txt")


def detect_pairs(cache: RunCache) -> List[tuple]:
    """(attacked, benign) records for the single-sinkhole detection check."""
    base = detect_base()
    benign = replace(base, attack=replace(base.attack, single=False, fraction=0.0))
    return [(cache.get(replace(base, seed=s)), cache.get(replace(benign, seed=s)))
            for s in range(1, DETECT_RUNS + 1)]


def warm(which: Sequence[str]) -> None:
    cache = RunCache()
    t = time.perf_counter()
    if "load" in which:
        cache.sweep(load_spec(), attacked_base())
        cache.sweep(load_spec(("esrpsdc",)), Scenario())
    if "malicious" in which:
        cache.sweep(fraction_spec(), Scenario(attack=AttackConfig(fraction=0.0)))
    if "size" in which:
        cache.sweep(size_spec(), Scenario())
    if "detect" in which:
        detect_pairs(cache)
    print(f"warm {','.join(which)}: {time.perf_counter() - t:.1f}s -> {cache.path}")


if __name__ == "__main__":
    warm(sys.argv[1:] or ("load", "malicious", "size", "detect"))
