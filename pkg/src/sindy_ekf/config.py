"""Scenario files: INI text that round-trips every field of a :class:`Scenario`.

Layout::

    [system]      name, x0, t0, t_end, dt, warmup
    [library]     descriptor (see ``FeatureLibrary.descriptor``)
    [parameters]  <name> = term=... equation=... reference=... [sign=...]
    [schedules]   <name> = <schedule description>   (omitted: constant reference)
    [mask]        <name> = q=... p0=... [initial=...]   (adaptive parameters only)
    [stlsq]       ridge_strength, threshold, max_iterations
    [filter]      observed, q_states, p0_states, r_diag
    [noise]       snr_db (or "none"), snr_is_linear, seed
    [training]    initial_conditions ("a,b; c,d"), duration, dt, forcing_frequencies
    [frc]         omega_min, omega_max, n_points, duration, dt, settle_fraction,
                  displacement_indices   (optional section)

Vectors are comma separated. Floats are written with ``repr`` so a load of an
exported file reproduces the scenario exactly.
"""
from __future__ import annotations

import configparser
import io
import shlex
from pathlib import Path

from .library import library_from_descriptor
from .scenarios import FrcSpec, Parameter, Scenario, TrainingSpec, parse_schedule
from .training import StlsqSettings


class ConfigError(ValueError):
    pass


def _vec(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def _pairs(**kw) -> str:
    return " ".join(f"{k}={shlex.quote(str(v))}" for k, v in kw.items())


def scenario_to_config(scenario: Scenario) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["system"] = {
        "name": scenario.name, "x0": _vec(scenario.x0), "t0": repr(float(scenario.t0)),
        "t_end": repr(float(scenario.t_end)), "dt": repr(float(scenario.dt)),
        "warmup": repr(float(scenario.warmup)),
    }
    cp["library"] = {"descriptor": scenario.library.descriptor()}
    cp["parameters"] = {
        p.name: _pairs(term=p.term, equation=p.equation, reference=repr(float(p.reference)),
                       sign=repr(float(p.sign)))
        for p in scenario.parameters}
    cp["schedules"] = {p.name: p.schedule.describe()
                       for p in scenario.parameters if p.schedule is not None}
    mask = {}
    for p in scenario.parameters:
        if p.adaptive:
            extra = {} if p.initial is None else {"initial": repr(float(p.initial))}
            mask[p.name] = _pairs(q=repr(float(p.q)), p0=repr(float(p.p0)), **extra)
    cp["mask"] = mask
    st = scenario.stlsq
    cp["stlsq"] = {"ridge_strength": repr(float(st.ridge_strength)),
                   "threshold": repr(float(st.threshold)),
                   "max_iterations": str(st.max_iterations)}
    cp["filter"] = {"observed": ", ".join(scenario.observed),
                    "q_states": _vec(scenario.q_states),
                    "p0_states": _vec(scenario.p0_states),
                    "r_diag": _vec(scenario.r_diag)}
    cp["noise"] = {"snr_db": "none" if scenario.snr_db is None else repr(float(scenario.snr_db)),
                   "snr_is_linear": str(scenario.snr_is_linear).lower(),
                   "seed": str(scenario.seed)}
    tr = scenario.training
    cp["training"] = {
        "initial_conditions": "; ".join(_vec(ic) for ic in tr.initial_conditions),
        "duration": repr(float(tr.duration)), "dt": repr(float(tr.dt)),
        "forcing_frequencies": _vec(tr.forcing_frequencies),
    }
    if scenario.frc is not None:
        f = scenario.frc
        cp["frc"] = {
            "omega_min": repr(float(f.omega_min)), "omega_max": repr(float(f.omega_max)),
            "n_points": str(f.n_points), "duration": repr(float(f.duration)),
            "dt": repr(float(f.dt)), "settle_fraction": repr(float(f.settle_fraction)),
            "displacement_indices": ", ".join(str(i) for i in f.displacement_indices),
        }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def write_scenario_config(scenario: Scenario, path) -> None:
    Path(path).write_text(scenario_to_config(scenario))


def _floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    return tuple(float(v) for v in text.split(",")) if text else ()


def _kv(text: str) -> dict[str, str]:
    out = {}
    for tok in shlex.split(text):
        key, sep, val = tok.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {tok!r}")
        out[key] = val
    return out


def parse_scenario_config(text: str, source: str = "<config>") -> Scenario:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    def get(section, key, default=None):
        if not cp.has_section(section):
            if default is not None:
                return default
            raise ConfigError(f"{source}: missing section [{section}]")
        if key not in cp[section]:
            if default is not None:
                return default
            raise ConfigError(f"{source}: [{section}] missing key {key!r}")
        return cp[section][key]

    section = key = ""
    try:
        section = "parameters"
        schedules = dict(cp["schedules"]) if cp.has_section("schedules") else {}
        mask = dict(cp["mask"]) if cp.has_section("mask") else {}
        if not cp.has_section("parameters"):
            raise ConfigError(f"{source}: missing section [parameters]")
        params = []
        for key, spec in cp["parameters"].items():
            f = _kv(spec)
            section = "parameters"
            sched = parse_schedule(schedules[key]) if key in schedules else None
            m = _kv(mask[key]) if key in mask else None
            params.append(Parameter(
                name=key, term=f["term"], equation=f["equation"],
                reference=float(f["reference"]), schedule=sched,
                sign=float(f.get("sign", 1.0)), adaptive=m is not None,
                initial=float(m["initial"]) if m and "initial" in m else None,
                q=float(m["q"]) if m else 0.0, p0=float(m["p0"]) if m else 0.0))
        for sec, names in (("schedules", schedules), ("mask", mask)):
            unknown = set(names) - {p.name for p in params}
            if unknown:
                raise ConfigError(f"{source}: [{sec}] names unknown parameters {sorted(unknown)}")
        section, key = "training", "initial_conditions"
        ics = tuple(_floats(chunk) for chunk in get("training", key).split(";") if chunk.strip())
        training = TrainingSpec(ics, float(get("training", "duration")),
                                float(get("training", "dt")),
                                _floats(get("training", "forcing_frequencies", "")))
        section, key = "stlsq", ""
        stl = StlsqSettings(float(get("stlsq", "ridge_strength")),
                            float(get("stlsq", "threshold")),
                            int(get("stlsq", "max_iterations", "20")))
        frc = None
        if cp.has_section("frc"):
            section = "frc"
            fs = cp["frc"]
            d = FrcSpec()
            frc = FrcSpec(
                float(fs.get("omega_min", d.omega_min)), float(fs.get("omega_max", d.omega_max)),
                int(fs.get("n_points", d.n_points)), float(fs.get("duration", d.duration)),
                float(fs.get("dt", d.dt)), float(fs.get("settle_fraction", d.settle_fraction)),
                tuple(int(i) for i in fs.get("displacement_indices", "0, 1").split(",")))
        section = "noise"
        snr = get("noise", "snr_db", "none").strip().lower()
        section = "system"
        return Scenario(
            name=get("system", "name"),
            library=library_from_descriptor(get("library", "descriptor")),
            parameters=tuple(params),
            x0=_floats(get("system", "x0")),
            t0=float(get("system", "t0", "0.0")),
            t_end=float(get("system", "t_end")),
            dt=float(get("system", "dt")),
            training=training, stlsq=stl,
            observed=tuple(s.strip() for s in get("filter", "observed").split(",")),
            q_states=_floats(get("filter", "q_states")),
            p0_states=_floats(get("filter", "p0_states")),
            r_diag=_floats(get("filter", "r_diag")),
            snr_db=None if snr == "none" else float(snr),
            snr_is_linear=cp.getboolean("noise", "snr_is_linear", fallback=False),
            seed=int(get("noise", "seed", "0")),
            warmup=float(get("system", "warmup", "0.0")),
            frc=frc,
        )
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        where = f"[{section}] {key}".strip() if section else ""
        raise ConfigError(f"{source}: {where}: {exc}") from None


def load_scenario_config(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scenario config not found: {path}")
    return parse_scenario_config(path.read_text(), str(path))
