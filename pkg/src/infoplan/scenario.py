"""Scenario definition and strict config-file loading.

A scenario bundles everything a planning run needs: system constants,
boundary states of the observer, the target catalog, priors, actuation and
noise levels, observation windows, and grid/solver settings. Config files
are YAML documents with a fixed schema (see ``docs/scenario_format.md``);
unknown keys are hard errors, SI values are converted to normalized units
once at load time, and epochs may be given either in TU or as multiples of
the reference-orbit period ``P_ref``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .dynamics import SystemParameters, reference_period
from .information import AugmentedPrior, ObservationWindow
from .measurements import MeasurementKind, MeasurementModel

__all__ = [
    "Scenario",
    "ScenarioWindow",
    "ScenarioError",
    "load_scenario",
    "bundled_scenario_path",
]

METERS_PER_KM = 1000.0


class ScenarioError(ValueError):
    """Raised for malformed or inconsistent scenario configurations."""


@dataclass(frozen=True)
class ScenarioWindow:
    """An observation window plus its thrust policy."""

    window: ObservationWindow
    zero_thrust: bool = True


@dataclass
class Scenario:
    """Fully resolved scenario in normalized units, epochs relative to t0 = 0."""

    params: SystemParameters
    observer_initial: np.ndarray
    observer_terminal: np.ndarray
    target_initials: np.ndarray
    prior: AugmentedPrior
    model: MeasurementModel
    a_max: float
    duration: float
    windows: list[ScenarioWindow]
    n_nodes: int
    sigma: float
    p_ref: float | None = None
    alpha_h: float | None = None
    alpha_grid: list[float] | None = None
    scvx_overrides: dict = field(default_factory=dict)

    @property
    def n_targets(self) -> int:
        return self.target_initials.shape[0]

    def observation_windows(self) -> list[ObservationWindow]:
        return [w.window for w in self.windows]


# ---------------------------------------------------------------------------
# Strict mapping helpers


class _Section:
    """Dict wrapper that tracks consumed keys and reports leftovers."""

    def __init__(self, data, name):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ScenarioError(f"section '{name}' must be a mapping")
        self.data = data
        self.name = name
        self.seen = set()

    def get(self, key, default=None, required=False):
        self.seen.add(key)
        if key not in self.data:
            if required:
                raise ScenarioError(f"missing required field '{self.name}.{key}'")
            return default
        return self.data[key]

    def has(self, key):
        return key in self.data

    def section(self, key, required=False):
        return _Section(self.get(key, default={}, required=required),
                        f"{self.name}.{key}")

    def finish(self):
        unknown = set(self.data) - self.seen
        if unknown:
            raise ScenarioError(
                f"unknown field(s) in '{self.name}': {', '.join(sorted(unknown))}"
            )


def _float(value, where):
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"'{where}' must be a number, got {value!r}") from exc


def _positive(value, where):
    out = _float(value, where)
    if out <= 0.0:
        raise ScenarioError(f"'{where}' must be positive, got {out}")
    return out


def _state_vector(value, where):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (6,):
        raise ScenarioError(f"'{where}' must be a 6-vector [DU, DU/TU]")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"'{where}' contains non-finite entries")
    return arr


_PREF_RE = re.compile(r"^\s*(?:([0-9.eE+-]+)\s*\*\s*)?P_ref\s*$")


class _EpochParser:
    """Parses epochs given in TU or as '<factor> * P_ref'; resolves P_ref lazily."""

    def __init__(self, observer_initial, params):
        self._observer_initial = observer_initial
        self._params = params
        self.p_ref: float | None = None

    def _resolve_p_ref(self) -> float:
        if self.p_ref is None:
            try:
                self.p_ref = reference_period(self._observer_initial, self._params)
            except Exception as exc:
                raise ScenarioError(
                    f"unresolvable P_ref from the observer initial state: {exc}"
                ) from exc
        return self.p_ref

    def parse(self, value, where) -> float:
        if isinstance(value, str):
            match = _PREF_RE.match(value)
            if not match:
                raise ScenarioError(
                    f"'{where}' must be a number in TU or '<factor> * P_ref', "
                    f"got {value!r}"
                )
            factor = float(match.group(1)) if match.group(1) else 1.0
            return factor * self._resolve_p_ref()
        return _float(value, where)


def _diag_prior(section: _Section, params: SystemParameters) -> np.ndarray:
    pos_km = _positive(section.get("position_rms_km", required=True),
                       f"{section.name}.position_rms_km")
    vel_kms = _positive(section.get("velocity_rms_km_s", required=True),
                        f"{section.name}.velocity_rms_km_s")
    section.finish()
    pos = float(params.km_to_du(pos_km))
    vel = float(params.kmps_to_vu(vel_kms))
    return np.diag([pos**2] * 3 + [vel**2] * 3)


def _measurement_model(section: _Section, params: SystemParameters) -> MeasurementModel:
    kind_raw = section.get("kind", required=True)
    try:
        kind = MeasurementKind(kind_raw)
    except ValueError as exc:
        valid = ", ".join(k.value for k in MeasurementKind)
        raise ScenarioError(
            f"'{section.name}.kind' must be one of: {valid}, got {kind_raw!r}"
        ) from exc
    if kind is MeasurementKind.RELATIVE_POSITION:
        rms_m = _positive(section.get("position_rms_m", required=True),
                          f"{section.name}.position_rms_m")
        sigma = float(params.km_to_du(rms_m / METERS_PER_KM))
        cov = sigma**2 * np.eye(3)
    else:
        range_m = _positive(section.get("range_rms_m", required=True),
                            f"{section.name}.range_rms_m")
        rate_ms = _positive(section.get("range_rate_rms_m_s", required=True),
                            f"{section.name}.range_rate_rms_m_s")
        sr = float(params.km_to_du(range_m / METERS_PER_KM))
        srr = float(params.kmps_to_vu(rate_ms / METERS_PER_KM))
        cov = np.diag([sr**2, srr**2])
    section.finish()
    return MeasurementModel(kind, cov)


def bundled_scenario_path(name: str) -> Path:
    """Filesystem path of a scenario shipped with the package."""
    candidate = resources.files("infoplan").joinpath(f"scenarios/{name}.yaml")
    with resources.as_file(candidate) as path:
        if not path.exists():
            raise ScenarioError(f"no bundled scenario named {name!r}")
        return path


def load_scenario(path) -> Scenario:
    """Load, validate, and normalize a scenario configuration.

    ``path`` is a YAML file path, or the bare name of a bundled scenario
    (``testcase1``, ``testcase2``).
    """
    path = Path(path)
    if not path.exists() and path.suffix == "" and path.name == str(path):
        path = bundled_scenario_path(path.name)
    if not path.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from exc

    root = _Section(raw, "scenario")

    system = root.section("system")
    params = SystemParameters(
        mu=_float(system.get("mu", SystemParameters.mu), "system.mu"),
        du_km=_positive(system.get("du_km", SystemParameters.du_km), "system.du_km"),
        tu_s=_positive(system.get("tu_s", SystemParameters.tu_s), "system.tu_s"),
    )
    system.finish()

    observer = root.section("observer", required=True)
    observer_initial = _state_vector(observer.get("initial", required=True),
                                     "observer.initial")
    observer_terminal = _state_vector(observer.get("terminal", required=True),
                                      "observer.terminal")
    observer.finish()

    targets_raw = root.get("targets", required=True)
    if not isinstance(targets_raw, list) or not targets_raw:
        raise ScenarioError("'targets' must be a non-empty list")
    target_initials = []
    for i, entry in enumerate(targets_raw):
        sec = _Section(entry, f"targets[{i}]")
        target_initials.append(_state_vector(sec.get("initial", required=True),
                                             f"targets[{i}].initial"))
        sec.finish()
    target_initials = np.asarray(target_initials)

    priors = root.section("priors", required=True)
    observer_cov = _diag_prior(priors.section("observer", required=True), params)
    targets_prior_raw = priors.get("targets", required=True)
    if isinstance(targets_prior_raw, list):
        if len(targets_prior_raw) != len(target_initials):
            raise ScenarioError(
                "'priors.targets' list length must match the number of targets"
            )
        target_covs = tuple(
            _diag_prior(_Section(entry, f"priors.targets[{i}]"), params)
            for i, entry in enumerate(targets_prior_raw)
        )
    else:
        shared = _diag_prior(_Section(targets_prior_raw, "priors.targets"), params)
        target_covs = tuple(shared.copy() for _ in range(len(target_initials)))
    priors.finish()

    a_max_si = _float(root.get("a_max_km_s2", required=True), "a_max_km_s2")
    if a_max_si < 0.0:
        raise ScenarioError("'a_max_km_s2' must be nonnegative")
    a_max = float(params.kmps2_to_au(a_max_si))

    q_si = _float(root.get("q_psd_km2_s3", required=True), "q_psd_km2_s3")
    if q_si < 0.0:
        raise ScenarioError("'q_psd_km2_s3' must be nonnegative")
    q_norm = params.accel_psd_to_norm(q_si)

    prior = AugmentedPrior(observer_cov, target_covs, np.array([q_norm]))
    model = _measurement_model(root.section("measurement", required=True), params)

    epochs = _EpochParser(observer_initial, params)
    duration = epochs.parse(root.get("duration", required=True), "duration")
    if duration <= 0.0:
        raise ScenarioError("'duration' must be positive")

    windows_raw = root.get("windows", required=True)
    if not isinstance(windows_raw, list) or not windows_raw:
        raise ScenarioError("'windows' must be a non-empty list")
    windows = []
    for i, entry in enumerate(windows_raw):
        sec = _Section(entry, f"windows[{i}]")
        start = epochs.parse(sec.get("start", required=True), f"windows[{i}].start")
        end = epochs.parse(sec.get("end", required=True), f"windows[{i}].end")
        cadence = _positive(sec.get("cadence_per_day", required=True),
                            f"windows[{i}].cadence_per_day")
        zero_thrust = bool(sec.get("zero_thrust", default=True))
        sec.finish()
        if not start < end:
            raise ScenarioError(f"'windows[{i}]': start must precede end")
        if start < 0.0 or end > duration + 1e-9:
            raise ScenarioError(f"'windows[{i}]': window must lie inside [t0, tf]")
        windows.append(ScenarioWindow(
            ObservationWindow(t_start=start, t_end=min(end, duration),
                              cadence_per_day=cadence),
            zero_thrust=zero_thrust,
        ))

    grid = root.section("grid")
    sigma = _float(grid.get("sigma", 1.0), "grid.sigma")
    if sigma < 0.0:
        raise ScenarioError("'grid.sigma' must be nonnegative")
    if grid.has("n_nodes") and grid.has("n_nodes_per_period"):
        raise ScenarioError("give only one of 'grid.n_nodes', 'grid.n_nodes_per_period'")
    if grid.has("n_nodes"):
        n_nodes = int(_positive(grid.get("n_nodes"), "grid.n_nodes"))
    else:
        per_period = _positive(grid.get("n_nodes_per_period", 60.0),
                               "grid.n_nodes_per_period")
        n_nodes = max(int(round(per_period * duration / epochs._resolve_p_ref())), 2)
    grid.finish()

    alpha_h = root.get("alpha_h")
    alpha_grid = root.get("alpha_grid")
    if alpha_h is not None and alpha_grid is not None:
        raise ScenarioError("give only one of 'alpha_h' and 'alpha_grid'")
    if alpha_h is not None:
        alpha_h = _float(alpha_h, "alpha_h")
        if not 0.0 <= alpha_h <= 1.0:
            raise ScenarioError("'alpha_h' must lie in [0, 1]")
    if alpha_grid is not None:
        if not isinstance(alpha_grid, list) or not alpha_grid:
            raise ScenarioError("'alpha_grid' must be a non-empty list")
        alpha_grid = [_float(a, f"alpha_grid[{i}]") for i, a in enumerate(alpha_grid)]
        for i, a in enumerate(alpha_grid):
            if not 0.0 <= a <= 1.0:
                raise ScenarioError(f"'alpha_grid[{i}]' must lie in [0, 1]")

    scvx_raw = root.get("scvx", default={})
    if scvx_raw is None:
        scvx_raw = {}
    if not isinstance(scvx_raw, dict):
        raise ScenarioError("'scvx' must be a mapping of setting overrides")

    root.finish()

    return Scenario(
        params=params,
        observer_initial=observer_initial,
        observer_terminal=observer_terminal,
        target_initials=target_initials,
        prior=prior,
        model=model,
        a_max=a_max,
        duration=duration,
        windows=windows,
        n_nodes=n_nodes,
        sigma=sigma,
        p_ref=epochs.p_ref,
        alpha_h=alpha_h,
        alpha_grid=alpha_grid,
        scvx_overrides=dict(scvx_raw),
    )
