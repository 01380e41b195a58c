"""
Experiment configuration: INI files, --set overrides and the typed defaults they refine
"""

import math
import logging
import tempfile
import configparser
from pathlib import Path
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Union, Tuple, List

from ._result import Result, Ok, Err
from ._types import PhysicalParams, Grid1D, ConfigInvalid, QbmError
from ._kernel import Potential, GasParams
from .testing import test, assert_close

logger = logging.getLogger(__name__)

Value = Union[bool, int, float, str]
Section = Dict[str, Value]
Values = Dict[str, Section]

# sections every experiment shares; experiments add one named after themselves
DEFAULTS: Mapping[str, Mapping[str, Value]] = {
    "physics": {
        "M": 1.0,
        "m": 0.01,
        "T": 1.0,
        "Gamma": 10.0,
        "hbar": 1.0,
        "kB": 1.0,
        },
    "grid": {
        "x_min": -16.0,
        "x_max": 16.0,
        "n": 128,
        },
    "potential": {
        "kind": "gaussian",
        "strength": 1.0,
        "range": 1.0,
        },
    "gas": {
        "m": 1.0,
        "beta": 1.0,
        "mu": -0.5,
        "statistics": "bose",
        },
    "run": {
        "seed": 20240601,
        },
    }


def merge_defaults(*layers: Mapping[str, Mapping[str, Value]]) -> Values:
    """
    Later layers override earlier ones key by key
    """
    out: Values = {}
    for layer in layers:
        for section, values in layer.items():
            out.setdefault(section, {}).update(values)
    return out


def _coerce(raw: str, like: Value, where: str) -> Result[Value, ConfigInvalid]:
    text = raw.strip()
    try:
        if isinstance(like, bool):
            lowered = text.lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(text)
            return Ok(configparser.ConfigParser.BOOLEAN_STATES[lowered])
        if isinstance(like, int):
            return Ok(int(text))
        if isinstance(like, float):
            value = float(text)
            if math.isnan(value):
                raise ValueError(text)
            return Ok(value)
    except ValueError:
        return Err(ConfigInvalid(f"{where}: cannot parse {raw!r} as {type(like).__name__}"))
    return Ok(text)


def _apply(values: Values, section: str, key: str, raw: str,
           source: str) -> Optional[ConfigInvalid]:
    if section not in values:
        return ConfigInvalid(f"{source}: unknown section [{section}]")
    if key not in values[section]:
        return ConfigInvalid(f"{source}: unknown key {key!r} in [{section}]")

    coerced = _coerce(raw, values[section][key], f"{source}: {section}.{key}")
    if Err.is_instance(coerced):
        return Err.unwrap(coerced)

    values[section][key] = Ok.unwrap(coerced)
    return None


def parse_override(text: str) -> Result[Tuple[str, str, str], ConfigInvalid]:
    """
    Splits section.key=value
    """
    name, sep, raw = text.partition("=")
    section, dot, key = name.strip().partition(".")
    if not sep or not dot or not section or not key:
        return Err(ConfigInvalid(f"--set expects section.key=value, got {text!r}"))
    return Ok((section, key.strip(), raw))


def _read_file(path: Path) -> Result[configparser.ConfigParser, ConfigInvalid]:
    parser = configparser.ConfigParser(interpolation=None)
    # keys are case sensitive, M and m are different masses
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as err:
        return Err(ConfigInvalid(f"{path}: {err}"))
    return Ok(parser)


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    """
    Fully resolved inputs of one experiment run
    """
    experiment: str
    values: Values
    params: PhysicalParams
    grid: Grid1D
    potential: Potential
    gas: GasParams
    seed: int
    output_dir: Path
    sources: List[str] = field(default_factory=list)

    def section(self, name: Optional[str] = None) -> Section:
        """
        Values of a section, the experiment's own section by default
        """
        return self.values[self.experiment if name is None else name]

    def get_float(self, key: str) -> float:
        """
        Float knob of the experiment section
        """
        return float(self.section()[key])

    def get_int(self, key: str) -> int:
        """
        Integer knob of the experiment section
        """
        return int(self.section()[key])

    def get_str(self, key: str) -> str:
        """
        String knob of the experiment section
        """
        return str(self.section()[key])

    def get_floats(self, key: str) -> Result[List[float], ConfigInvalid]:
        """
        Comma separated floats of the experiment section
        """
        try:
            return Ok([float(i) for i in self.get_str(key).split(",") if i.strip()])
        except ValueError:
            return Err(ConfigInvalid(f"{self.experiment}.{key}: expected comma separated floats"))

    def echo(self) -> Dict[str, Dict[str, Value]]:
        """
        Plain dict of every resolved value, for the run manifest
        """
        return {s: dict(v) for s, v in self.values.items()}


def _resolve(experiment: str, values: Values, output_dir: Path,
             sources: List[str]) -> Result[ExperimentConfig, ConfigInvalid]:
    physics, grid, pot, gas = (values[i] for i in ("physics", "grid", "potential", "gas"))

    def wrap(what: str, err: QbmError) -> ConfigInvalid:
        return ConfigInvalid(f"[{what}] {err}")

    params = PhysicalParams.create(
        M=float(physics["M"]),
        m=float(physics["m"]),
        T=float(physics["T"]),
        Gamma=float(physics["Gamma"]),
        hbar=float(physics["hbar"]),
        kB=float(physics["kB"]),
        )
    if Err.is_instance(params):
        return Err(wrap("physics", Err.unwrap(params)))

    g = Grid1D.create(float(grid["x_min"]), float(grid["x_max"]), int(grid["n"]))
    if Err.is_instance(g):
        return Err(wrap("grid", Err.unwrap(g)))

    p = Potential.create(str(pot["kind"]), float(pot["strength"]), float(pot["range"]))
    if Err.is_instance(p):
        return Err(wrap("potential", Err.unwrap(p)))

    gp = GasParams.create(float(gas["m"]), float(gas["beta"]), float(gas["mu"]),
                          str(gas["statistics"]))
    if Err.is_instance(gp):
        return Err(wrap("gas", Err.unwrap(gp)))

    return Ok(
        ExperimentConfig(
            experiment,
            values,
            Ok.unwrap(params),
            Ok.unwrap(g),
            Ok.unwrap(p),
            Ok.unwrap(gp),
            int(values["run"]["seed"]),
            output_dir,
            sources,
            )
        )


def load_config(
    experiment: str,
    defaults: Mapping[str, Mapping[str, Value]],
    path: Optional[Union[str, Path]] = None,
    overrides: Sequence[str] = (),
    output_dir: Union[str, Path] = ".",
    ) -> Result[ExperimentConfig, ConfigInvalid]:
    """
    Resolves a configuration with precedence overrides > file > defaults

    defaults holds the experiment's own layer on top of DEFAULTS; a section named after
    the experiment is always present, even if empty.
    """
    values = merge_defaults(DEFAULTS, {experiment: {}}, defaults)
    sources: List[str] = ["defaults"]

    if path is not None:
        if Err.is_instance(read := _read_file(Path(path))):
            return read
        parser = Ok.unwrap(read)
        for section in parser.sections():
            for key, raw in parser.items(section):
                if (err := _apply(values, section, key, raw, str(path))) is not None:
                    return Err(err)
        sources.append(str(path))

    for text in overrides:
        if Err.is_instance(parsed := parse_override(text)):
            return parsed
        section, key, raw = Ok.unwrap(parsed)
        if (err := _apply(values, section, key, raw, "--set")) is not None:
            return Err(err)
        sources.append(f"--set {text}")

    logger.debug("resolved config for %s from %s", experiment, ", ".join(sources))
    return _resolve(experiment, values, Path(output_dir), sources)


@test
def test_config_precedence() -> None:
    """
    Tests overrides beat files which beat defaults, with typed values
    """
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "run.ini"
        path.write_text("[physics]\nT = 2.5\nM = 3\n\n[demo]\nsteps = 7\n", encoding="utf-8")

        cfg = Ok.unwrap(
            load_config(
                "demo", {"demo": {"steps": 1, "label": "x"}},
                path,
                ["physics.T=4", "demo.label=y"],
                )
            )

    assert_close(cfg.params.T, 4.0, rel=0)
    assert_close(cfg.params.M, 3.0, rel=0)
    assert_close(cfg.params.m, 0.01, rel=0)
    assert cfg.get_int("steps") == 7
    assert cfg.get_str("label") == "y"
    assert cfg.sources[0] == "defaults" and len(cfg.sources) == 4


@test
def test_config_rejects_invalid() -> None:
    """
    Tests unknown keys, bad values and violated invariants are ConfigInvalid
    """
    for override in ("physics.mass=1", "nosuch.key=1", "grid.n=abc", "grid.n=100", "physics.T=-1",
                     "gas.mu=0.5", "potential.kind=square", "physics.T=nan", "novalue"):
        result = load_config("demo", {}, None, [override])
        assert isinstance(Err.get(result), ConfigInvalid), override

    assert isinstance(Err.get(load_config("demo", {}, "/nonexistent/qbm.ini")), ConfigInvalid)
