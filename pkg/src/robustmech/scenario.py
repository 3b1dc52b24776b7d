"""Scenario files: TOML documents naming an experiment, its parameters, trial
count and base seed, and optionally an explicit instance."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dist import JointDist, TypeSpace, loads as loads_dist
from .experiments import REGISTRY
from .mechanism import Objective, Valuations, loads_valuations

BUNDLE_DIRS = ("worked", "suites")


class ScenarioError(ValueError):
    """A scenario failed to parse, resolve or validate."""


@dataclass
class FixedInstance:
    valuations: Valuations
    prior: JointDist
    objective: Objective


@dataclass
class Scenario:
    name: str
    experiment: str
    params: dict
    trials: int
    seed: int
    description: str = ""
    source: Path | None = None
    raw_params: dict = field(default_factory=dict)


def _plain(x: Any) -> Any:
    """Decimals to floats (correctly rounded), recursively."""
    if isinstance(x, Decimal):
        return float(x)
    if isinstance(x, list):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    return x


def _load_instance(sec: dict, base: Path) -> FixedInstance:
    sec = _plain(sec)
    if "values" not in sec:
        raise ScenarioError("instance.values is required (one list of positive values per agent)")
    try:
        space = TypeSpace.from_values(sec["values"])
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"instance.values: {exc}") from exc
    if "valuations" in sec:
        path = (base / sec["valuations"]).resolve()
        if not path.is_file():
            raise ScenarioError(f"valuations file not found: {path}")
        V = loads_valuations(path.read_text(), space)
    else:
        V = Valuations.single_item(space)
    if "prior" in sec and "marginals" in sec:
        raise ScenarioError("give either instance.prior or instance.marginals, not both")
    if "prior" in sec:
        path = (base / sec["prior"]).resolve()
        if not path.is_file():
            raise ScenarioError(f"prior file not found: {path}")
        try:
            D = loads_dist(path.read_text(), space)
        except ValueError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
    elif "marginals" in sec:
        try:
            D = JointDist.product(space, sec["marginals"])
        except ValueError as exc:
            raise ScenarioError(f"instance.marginals: {exc}") from exc
    else:
        raise ScenarioError("instance needs a prior file or marginals")
    kind = sec.get("objective", "revenue")
    if kind not in ("revenue", "welfare"):
        raise ScenarioError("instance.objective must be 'revenue' or 'welfare'")
    O = Objective.revenue(V) if kind == "revenue" else Objective.welfare(V)
    return FixedInstance(V, D, O)


def parse_scenario(text: str, source: Path | None = None) -> Scenario:
    try:
        doc = tomllib.loads(text, parse_float=Decimal)
    except tomllib.TOMLDecodeError as exc:
        where = f"{source}: " if source else ""
        raise ScenarioError(f"{where}{exc}") from exc
    known = {"name", "experiment", "description", "trials", "seed", "params", "instance"}
    extra = sorted(set(doc) - known)
    if extra:
        raise ScenarioError(f"unknown top-level key(s): {', '.join(extra)}")
    name = doc.get("name") or (source.stem if source else "scenario")
    exp = doc.get("experiment")
    if exp not in REGISTRY:
        raise ScenarioError(f"unknown experiment {exp!r}; see 'robustmech list'")
    ex = REGISTRY[exp]
    trials = doc.get("trials", ex.trials)
    seed = doc.get("seed", 0)
    if not isinstance(trials, int) or isinstance(trials, bool) or trials < 0:
        raise ScenarioError("trials must be a nonnegative integer")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ScenarioError("seed must be a nonnegative integer")
    raw = _plain(doc.get("params", {}))
    if not isinstance(raw, dict):
        raise ScenarioError("params must be a table")
    given = dict(raw)
    if "instance" in doc:
        base = source.parent if source else Path.cwd()
        given["instance"] = _load_instance(doc["instance"], base)
    try:
        params = ex.resolve(given)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    return Scenario(name, exp, params, trials, seed, doc.get("description", ""), source, raw)


def bundled_path(name: str) -> Path | None:
    root = resources.files("robustmech") / "scenarios"
    for sub in BUNDLE_DIRS:
        p = Path(str(root / sub / f"{name}.toml"))
        if p.is_file():
            return p
    return None


def bundled_names() -> dict[str, list[str]]:
    root = Path(str(resources.files("robustmech") / "scenarios"))
    return {sub: sorted(p.stem for p in (root / sub).glob("*.toml")) for sub in BUNDLE_DIRS}


def load_scenario(ref: str) -> Scenario:
    """Load a scenario from a path, or by bundled name."""
    path = Path(ref)
    if not path.is_file():
        found = bundled_path(ref)
        if found is None:
            raise ScenarioError(f"no scenario file or bundled scenario named {ref!r}")
        path = found
    return parse_scenario(path.read_text(), path)
