"""Strict YAML experiment configuration.

One file with nested sections (experiment, device, drives, schedule,
integrator, ensemble).  Physical parameters have no defaults; only
numerical settings do.  Frequencies and rates are given in the 2pi x MHz
convention and converted to rad/us once here; lifetimes in us become
rates 1/T.  Unknown keys are rejected with file:line locations, and
parse -> serialize -> parse is an identity on the resolved values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import yaml

from .device import DeviceParams, PulseEvent, PulseSchedule
from .errors import ConfigError

TWO_PI = 2.0 * math.pi

EXPERIMENT_KINDS = ("flipflop", "memory", "estimate", "validate")
SWEEP_KINDS = ("point", "photon_number", "kappa", "qubit_t1")
BACKENDS = ("auto", "compiled", "python")


def _mark_lines(node, path=(), out=None):
    """Map of config paths to 1-based source lines, from the YAML node tree."""
    if out is None:
        out = {}
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = str(key_node.value)
            out[path + (key,)] = key_node.start_mark.line + 1
            _mark_lines(value_node, path + (key,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, child in enumerate(node.value):
            _mark_lines(child, path + (i,), out)
    return out


class _Source:
    """Parsed YAML document plus line information for error messages."""

    def __init__(self, text, filename):
        self.filename = filename
        try:
            self.data = yaml.safe_load(text)
            node = yaml.compose(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            loc = f"{filename}:{mark.line + 1}" if mark else filename
            raise ConfigError(f"invalid YAML: {exc}", location=loc) from exc
        if self.data is None:
            raise ConfigError("empty config file", location=filename)
        self.lines = _mark_lines(node) if node is not None else {}

    def where(self, path):
        line = self.lines.get(path)
        return f"{self.filename}:{line}" if line else self.filename


class _Section:
    """Strict accessor for one mapping in the config tree."""

    def __init__(self, source, path, data):
        if not isinstance(data, dict):
            raise ConfigError(
                f"section '{'.'.join(map(str, path))}' must be a mapping",
                location=source.where(path),
            )
        self.source = source
        self.path = path
        self.data = data
        self.seen = set()
        self.record = {}   # values in config units, defaults materialized

    def _fetch(self, key, required, default):
        self.seen.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(
                    f"missing required key '{key}' in section "
                    f"'{'.'.join(map(str, self.path)) or 'top level'}'",
                    location=self.source.where(self.path),
                )
            return default, False
        return self.data[key], True

    def _err(self, key, message):
        return ConfigError(
            f"key '{key}': {message}", location=self.source.where(self.path + (key,))
        )

    def _record(self, key, value):
        if value is not None:
            self.record[key] = value
        return value

    def number(self, key, required=False, default=None, minimum=None,
               allow_inf=False):
        value, present = self._fetch(key, required, default)
        if not present:
            return self._record(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self._err(key, f"expected a number, got {value!r}")
        value = float(value)
        if math.isnan(value):
            raise self._err(key, "must not be NaN")
        if not allow_inf and math.isinf(value):
            raise self._err(key, "must be finite")
        if minimum is not None and value < minimum:
            raise self._err(key, f"must be >= {minimum}, got {value}")
        return self._record(key, value)

    def integer(self, key, required=False, default=None, minimum=None):
        value, present = self._fetch(key, required, default)
        if not present:
            return self._record(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise self._err(key, f"expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise self._err(key, f"must be >= {minimum}, got {value}")
        return self._record(key, value)

    def boolean(self, key, required=False, default=None):
        value, present = self._fetch(key, required, default)
        if not present:
            return self._record(key, default)
        if not isinstance(value, bool):
            raise self._err(key, f"expected true/false, got {value!r}")
        return self._record(key, value)

    def string(self, key, required=False, default=None, choices=None):
        value, present = self._fetch(key, required, default)
        if not present:
            return self._record(key, default)
        if not isinstance(value, str):
            raise self._err(key, f"expected a string, got {value!r}")
        if choices is not None and value not in choices:
            raise self._err(key, f"must be one of {', '.join(choices)}; got {value!r}")
        return self._record(key, value)

    def subsection(self, key, required=False):
        value, present = self._fetch(key, required, None)
        if not present:
            return None
        return _Section(self.source, self.path + (key,), value)

    def raw(self, key, required=False, default=None):
        value, present = self._fetch(key, required, default)
        return value if present else default

    def finish(self):
        unknown = [k for k in self.data if k not in self.seen]
        if unknown:
            k = unknown[0]
            raise ConfigError(
                f"unknown key '{k}' in section "
                f"'{'.'.join(map(str, self.path)) or 'top level'}'",
                location=self.source.where(self.path + (k,)),
            )


def _mhz(value):
    """2pi x MHz -> rad/us."""
    return TWO_PI * value


def _ghz(value):
    """GHz -> rad/us."""
    return TWO_PI * value * 1000.0


def _lifetime_to_rate(t1):
    return 0.0 if math.isinf(t1) else 1.0 / t1


@dataclass
class FitSettings:
    floor: bool = True
    window_start_us: float = 20.0
    bootstrap_samples: int = 200


@dataclass
class SwitchSettings:
    n_ref: float = None
    low_frac: float = 0.25
    high_frac: float = 0.75
    min_dwell_us: float = 5.0


@dataclass
class GridSpec:
    """Sweep grid: either explicit values or a linear/log range."""

    values: list

    @staticmethod
    def parse(section, key, required=False):
        raw = section.raw(key, required=required)
        if raw is None:
            return None
        section.record[key] = raw
        where = section.source.where(section.path + (key,))
        if isinstance(raw, list):
            if not raw or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
            ):
                raise ConfigError(
                    f"key '{key}': grid list must contain numbers", location=where
                )
            return GridSpec(values=[float(v) for v in raw])
        if isinstance(raw, dict):
            sub = _Section(section.source, section.path + (key,), raw)
            start = sub.number("start", required=True)
            stop = sub.number("stop", required=True)
            count = sub.integer("count", required=True, minimum=2)
            log = sub.boolean("log", default=False)
            sub.finish()
            if log and (start <= 0 or stop <= 0):
                raise ConfigError(
                    f"key '{key}': log grid needs positive endpoints", location=where
                )
            if log:
                ratio = (stop / start) ** (1.0 / (count - 1))
                vals = [start * ratio ** i for i in range(count)]
            else:
                step = (stop - start) / (count - 1)
                vals = [start + step * i for i in range(count)]
            vals[-1] = stop
            return GridSpec(values=vals)
        raise ConfigError(
            f"key '{key}': expected a list or a start/stop/count mapping",
            location=where,
        )


@dataclass
class SweepSettings:
    kind: str
    n_max: int = 60
    include_qubit: bool = True
    ratios: list = None            # photon_number: kappa*T_t1/n values
    n_grid: GridSpec = None        # photon_number: target photon numbers
    kappa_grid_mhz: GridSpec = None
    qubit_t1_grid_us: GridSpec = None
    chi_operating_n: float = None  # override |alpha_down|^2 in chi_a


@dataclass
class ValidateSettings:
    n_systems: int = 10
    n_traj: int = 500
    base_seed: int = 20260822


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description."""

    kind: str
    device: DeviceParams
    schedule: PulseSchedule
    dt: float
    sample_interval: float
    t_final: float
    backend: str
    reduce_space: bool
    n_traj: int
    base_seed: int
    workers: int
    fit: FitSettings
    switches: SwitchSettings
    sweep: SweepSettings
    validate: ValidateSettings
    fit_csv: str
    resolved: dict = field(repr=False, default=None)

    def to_dict(self):
        """Nested plain-data view in config units with defaults materialized."""
        return self.resolved


def _parse_device(section):
    if section is None:
        raise ConfigError("missing required section 'device'")
    try:
        p = _build_device(section)
    except ValueError as exc:
        raise ConfigError(str(exc), location=section.source.where(section.path)) from exc
    section.finish()
    return p, section.record


def _build_device(section):
    return DeviceParams(
        chi_a1=_mhz(section.number("chi_a1_mhz", required=True)),
        chi_a2=_mhz(section.number("chi_a2_mhz", required=True)),
        chi_b1=_mhz(section.number("chi_b1_mhz", required=True)),
        chi_b2=_mhz(section.number("chi_b2_mhz", required=True)),
        chi_ab=_mhz(section.number("chi_ab_mhz", required=True)),
        g_ta=_mhz(section.number("g_ta_mhz", required=True)),
        g_tb=_mhz(section.number("g_tb_mhz", required=True)),
        g_res_a=_mhz(section.number("g_res_a_mhz", default=0.0)),
        g_res_b=_mhz(section.number("g_res_b_mhz", default=0.0)),
        kappa_a=_mhz(section.number("kappa_a_mhz", required=True, minimum=0.0)),
        kappa_b=_mhz(section.number("kappa_b_mhz", required=True, minimum=0.0)),
        gamma=_lifetime_to_rate(
            section.number("qubit_t1_us", required=True, minimum=0.0,
                           allow_inf=True)
        ),
        gamma_t=_lifetime_to_rate(
            section.number("transistor_t1_us", required=True, minimum=0.0,
                           allow_inf=True)
        ),
        n_target_a=section.number("n_target_a", required=True, minimum=0.0),
        n_target_b=section.number("n_target_b", required=True, minimum=0.0),
        omega_a=_ghz(section.number("omega_a_ghz", required=True, minimum=0.0)),
        omega_b=_ghz(section.number("omega_b_ghz", required=True, minimum=0.0)),
        truncation_a=section.integer("truncation_a", default=20, minimum=2),
        truncation_b=section.integer("truncation_b", default=20, minimum=2),
        transistor_f_decay=section.boolean("transistor_f_decay", default=False),
    )


def _parse_schedule(source, data, drives_section):
    drive_a_on = 0.0
    drive_b_on = 5.0
    if drives_section is not None:
        drive_a_on = drives_section.number("drive_a_on_us", default=0.0, minimum=0.0)
        drive_b_on = drives_section.number("drive_b_on_us", default=5.0, minimum=0.0)
        drives_section.finish()
    events = []
    if data is not None:
        if not isinstance(data, list):
            raise ConfigError(
                "section 'schedule' must be a list of pulse events",
                location=source.where(("schedule",)),
            )
        for i, entry in enumerate(data):
            sub = _Section(source, ("schedule", i), entry)
            time = sub.number("time_us", required=True, minimum=0.0)
            kind = sub.string("kind", required=True)
            sub.finish()
            kind_l = kind.lower()
            if kind_l not in ("set", "reset"):
                raise ConfigError(
                    f"pulse kind must be 'set' or 'reset', got {kind!r}",
                    location=source.where(("schedule", i, "kind")),
                )
            events.append(PulseEvent(time=time, kind=kind_l))
    try:
        return PulseSchedule(events=tuple(events), drive_a_on=drive_a_on,
                             drive_b_on=drive_b_on)
    except ValueError as exc:
        raise ConfigError(str(exc), location=source.where(("schedule",))) from exc


def _parse_sweep(section):
    if section is None:
        return None, None
    kind = section.string("kind", required=True, choices=SWEEP_KINDS)
    sweep = SweepSettings(
        kind=kind,
        n_max=section.integer("n_max", default=60, minimum=0),
        include_qubit=section.boolean("include_qubit", default=True),
        chi_operating_n=section.number("chi_operating_n"),
    )
    if kind == "photon_number":
        ratios = section.raw("ratios", required=True)
        where = section.source.where(section.path + ("ratios",))
        if not isinstance(ratios, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0
            for v in ratios
        ):
            raise ConfigError(
                "key 'ratios': expected a list of positive numbers", location=where
            )
        section.record["ratios"] = ratios
        sweep.ratios = [float(v) for v in ratios]
        sweep.n_grid = GridSpec.parse(section, "n_grid", required=True)
    elif kind == "kappa":
        sweep.kappa_grid_mhz = GridSpec.parse(section, "kappa_grid_mhz",
                                              required=True)
    elif kind == "qubit_t1":
        sweep.qubit_t1_grid_us = GridSpec.parse(section, "qubit_t1_grid_us",
                                                required=True)
    section.finish()
    return sweep, section.record


def parse_config(text, filename="<config>"):
    """Parse a config document; raises ConfigError with file:line locations."""
    source = _Source(text, filename)
    top = _Section(source, (), source.data)

    experiment = top.subsection("experiment", required=True)
    kind = experiment.string("kind", required=True, choices=EXPERIMENT_KINDS)
    t_final = experiment.number("t_final_us", minimum=0.0)
    fit_csv = experiment.string("fit_csv")

    fit = FitSettings()
    fit_section = experiment.subsection("fit")
    if fit_section is not None:
        fit.floor = fit_section.boolean("floor", default=fit.floor)
        fit.window_start_us = fit_section.number(
            "window_start_us", default=fit.window_start_us, minimum=0.0
        )
        fit.bootstrap_samples = fit_section.integer(
            "bootstrap_samples", default=fit.bootstrap_samples, minimum=0
        )
        fit_section.finish()

    switches = SwitchSettings()
    sw_section = experiment.subsection("switch_detection")
    if sw_section is not None:
        switches.n_ref = sw_section.number("n_ref", minimum=0.0)
        switches.low_frac = sw_section.number(
            "low_frac", default=switches.low_frac, minimum=0.0
        )
        switches.high_frac = sw_section.number(
            "high_frac", default=switches.high_frac, minimum=0.0
        )
        switches.min_dwell_us = sw_section.number(
            "min_dwell_us", default=switches.min_dwell_us, minimum=0.0
        )
        sw_section.finish()

    sweep, experiment_sweep_record = _parse_sweep(experiment.subsection("sweep"))

    validate = ValidateSettings()
    val_section = experiment.subsection("validate")
    if val_section is not None:
        validate.n_systems = val_section.integer(
            "n_systems", default=validate.n_systems, minimum=1
        )
        validate.n_traj = val_section.integer(
            "n_traj", default=validate.n_traj, minimum=2
        )
        validate.base_seed = val_section.integer(
            "base_seed", default=validate.base_seed
        )
        val_section.finish()
    experiment.finish()

    device = None
    device_record = None
    # validate runs on built-in small systems; fit_csv mode runs no simulation
    device_optional = kind == "validate" or (kind == "memory" and fit_csv is not None)
    if device_optional:
        dev_section = top.subsection("device")
        if dev_section is not None:
            device, device_record = _parse_device(dev_section)
    else:
        device, device_record = _parse_device(top.subsection("device", required=True))

    schedule = _parse_schedule(source, top.raw("schedule"),
                               top.subsection("drives"))

    integ = top.subsection("integrator")
    dt = 5e-4
    sample_interval = 0.05
    backend = "auto"
    reduce_space = True
    if integ is not None:
        dt = integ.number("dt_us", default=dt, minimum=0.0)
        sample_interval = integ.number("sample_interval_us",
                                       default=sample_interval, minimum=0.0)
        backend = integ.string("backend", default=backend, choices=BACKENDS)
        reduce_space = integ.boolean("reduce_space", default=reduce_space)
        integ.finish()
    if dt <= 0:
        raise ConfigError("integrator.dt_us must be > 0",
                          location=source.where(("integrator", "dt_us")))
    if sample_interval <= 0:
        raise ConfigError(
            "integrator.sample_interval_us must be > 0",
            location=source.where(("integrator", "sample_interval_us")),
        )

    ens = top.subsection("ensemble")
    n_traj = 1
    base_seed = 0
    workers = 1
    if ens is not None:
        n_traj = ens.integer("n_traj", default=n_traj, minimum=1)
        base_seed = ens.integer("base_seed", default=base_seed)
        workers = ens.integer("workers", default=workers, minimum=1)
        ens.finish()
    top.finish()

    if kind in ("flipflop", "memory") and fit_csv is None and t_final is None:
        raise ConfigError(
            f"experiment kind '{kind}' requires experiment.t_final_us",
            location=source.where(("experiment",)),
        )
    if kind == "estimate" and sweep is None:
        raise ConfigError(
            "experiment kind 'estimate' requires an experiment.sweep section",
            location=source.where(("experiment",)),
        )
    if switches.n_ref is None and device is not None:
        switches.n_ref = device.n_target_a

    exp_record = {"kind": kind}
    if t_final is not None:
        exp_record["t_final_us"] = t_final
    if fit_csv is not None:
        exp_record["fit_csv"] = fit_csv
    exp_record["fit"] = {
        "floor": fit.floor,
        "window_start_us": fit.window_start_us,
        "bootstrap_samples": fit.bootstrap_samples,
    }
    sw_record = {
        "low_frac": switches.low_frac,
        "high_frac": switches.high_frac,
        "min_dwell_us": switches.min_dwell_us,
    }
    if switches.n_ref is not None:
        sw_record = {"n_ref": switches.n_ref, **sw_record}
    exp_record["switch_detection"] = sw_record
    if sweep is not None:
        exp_record["sweep"] = experiment_sweep_record
    if kind == "validate" or val_section is not None:
        exp_record["validate"] = {
            "n_systems": validate.n_systems,
            "n_traj": validate.n_traj,
            "base_seed": validate.base_seed,
        }

    resolved = {"experiment": exp_record}
    if device_record is not None:
        resolved["device"] = device_record
    resolved["drives"] = {
        "drive_a_on_us": schedule.drive_a_on,
        "drive_b_on_us": schedule.drive_b_on,
    }
    resolved["schedule"] = [
        {"time_us": e.time, "kind": e.kind} for e in schedule.events
    ]
    resolved["integrator"] = {
        "dt_us": dt,
        "sample_interval_us": sample_interval,
        "backend": backend,
        "reduce_space": reduce_space,
    }
    resolved["ensemble"] = {
        "n_traj": n_traj,
        "base_seed": base_seed,
        "workers": workers,
    }

    return ExperimentConfig(
        kind=kind, device=device, schedule=schedule, dt=dt,
        sample_interval=sample_interval, t_final=t_final, backend=backend,
        reduce_space=reduce_space, n_traj=n_traj, base_seed=base_seed,
        workers=workers, fit=fit, switches=switches, sweep=sweep,
        validate=validate, fit_csv=fit_csv, resolved=resolved,
    )


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", location=str(path)) from exc
    return parse_config(text, filename=str(path))


def serialize_config(cfg):
    """Render the config back to YAML; parsing the output is an identity."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False,
                          default_flow_style=False)


def default_validate_config():
    """Built-in configuration for the validate subcommand (no file needed)."""
    return parse_config("experiment:\n  kind: validate\n",
                        filename="<builtin-validate>")
