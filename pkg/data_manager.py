#!/usr/bin/env python

"""
On-disk artifacts: curve description files, the energy calibration, handshake
scenarios, JSON-lines event logs and golden files.
"""

import json
import logging
import os

import attr
import yaml

from utils.cert import CertMode
from utils.costmodel import EnergyTable
from utils.curve import CURVE_PRESETS, Curve, CurveParams
from utils.errors import UsageError
from utils.netsim import SimConfig

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

# Define data file paths
ROOT = os.path.dirname(os.path.abspath(__file__))
CALIBRATION_PATH = os.path.join(ROOT, "calibration", "energy.yaml")
SCENARIO_PATH = os.path.join(ROOT, "config", "handshake.yaml")
CURVES_DIR = os.path.join(ROOT, "curves")
GOLDEN_DIR = os.path.join(ROOT, "tests", "golden")
WIRE_DIR = os.path.join(ROOT, "tests", "wire")

MAX_INPUT_BYTES = 16 * 1024 * 1024


# -- curves ------------------------------------------------------------

def parse_curve_description(text):
    """
    Parse a key=value curve description.

    Lines are ``key = value``; ``#`` starts a comment and blank lines are
    ignored. Values are big-endian hex except ``form`` and ``name``.
    """
    fields = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"Curve description line {number} is not key=value: {raw.strip()}")
        key, value = key.strip(), value.strip()
        if key in fields:
            raise UsageError(f"Curve description repeats '{key}' on line {number}")
        fields[key] = value
    return fields


def load_curve_file(path):
    with open(path, "r", encoding="utf-8") as handle:
        fields = parse_curve_description(handle.read())
    name = fields.pop("name", os.path.splitext(os.path.basename(path))[0])
    curve = Curve(CurveParams.from_hex_mapping(name, fields))
    logger.info(f"Loaded curve {name} from {path} (t={curve.t})")
    return curve


def resolve_curve(name):
    """A preset name ("P-256"), a path to a .curve file, or the stem of a file in curves/."""
    if name in CURVE_PRESETS:
        return Curve.from_preset(name)
    if os.path.isfile(name):
        return load_curve_file(name)
    candidate = os.path.join(CURVES_DIR, f"{name}.curve")
    if os.path.isfile(candidate):
        return load_curve_file(candidate)
    raise UsageError(f"Unknown curve '{name}' (presets: {', '.join(CURVE_PRESETS)})")


# -- calibration -------------------------------------------------------

def load_calibration(path=None):
    path = path or CALIBRATION_PATH
    try:
        with open(path, "r", encoding="utf-8") as handle:
            mapping = yaml.safe_load(handle) or {}
    except (OSError, yaml.YAMLError) as e:
        raise UsageError(f"Cannot read calibration file {path}: {str(e)}")
    table = EnergyTable.from_mapping(mapping)
    logger.debug(f"Calibration loaded from {path}: {len(table.primitives)} primitives")
    return table


# -- scenarios ---------------------------------------------------------

def _probability(instance, attribute, value):
    if not 0.0 <= value < 1.0:
        raise UsageError(f"{attribute.name} must lie in [0, 1), got {value}")


def _positive(instance, attribute, value):
    if not value > 0:
        raise UsageError(f"{attribute.name} must be positive, got {value}")


def _non_negative(instance, attribute, value):
    if value < 0:
        raise UsageError(f"{attribute.name} must be non-negative, got {value}")


def _tag_len(instance, attribute, value):
    if value not in (4, 8, 12, 16):
        raise UsageError(f"tag_len must be one of 4, 8, 12, 16, got {value}")


@attr.frozen
class ScenarioConfig:
    """One handshake co-simulation: deployment plus channel."""
    curve: str = "P-256"
    mode: CertMode = attr.field(default=CertMode.FULL, converter=CertMode)
    timeout: float = attr.field(default=1.0, converter=float, validator=_positive)
    max_retries: int = attr.field(default=20, converter=int, validator=_non_negative)
    tag_len: int = attr.field(default=16, converter=int, validator=_tag_len)
    drop_prob: float = attr.field(default=0.0, converter=float, validator=_probability)
    duplicate_prob: float = attr.field(default=0.0, converter=float, validator=_probability)
    reorder_prob: float = attr.field(default=0.0, converter=float, validator=_probability)
    latency: float = attr.field(default=0.05, converter=float, validator=_non_negative)
    jitter: float = attr.field(default=0.0, converter=float, validator=_non_negative)
    seed: int = attr.field(default=0, converter=int)
    max_time: float = attr.field(default=300.0, converter=float, validator=_positive)

    def sim_config(self):
        return SimConfig(drop_prob=self.drop_prob, duplicate_prob=self.duplicate_prob,
                         reorder_prob=self.reorder_prob, latency=self.latency, jitter=self.jitter,
                         seed=self.seed, max_time=self.max_time)

    def with_overrides(self, **overrides):
        """Copy with every non-None override applied."""
        changes = {key: value for key, value in overrides.items() if value is not None}
        unknown = set(changes) - {field.name for field in attr.fields(ScenarioConfig)}
        if unknown:
            raise UsageError(f"Unknown scenario settings: {', '.join(sorted(unknown))}")
        return attr.evolve(self, **changes)


def load_scenario(path=None, **overrides):
    """
    Load a scenario YAML file; flag overrides win over file values.

    Args:
        path: Scenario file, defaults to config/handshake.yaml when it exists
        **overrides: Setting values (None means "not given")

    Returns:
        ScenarioConfig
    """
    mapping = {}
    path = path or (SCENARIO_PATH if os.path.isfile(SCENARIO_PATH) else None)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                mapping = yaml.safe_load(handle) or {}
        except (OSError, yaml.YAMLError) as e:
            raise UsageError(f"Cannot read scenario file {path}: {str(e)}")
        mapping = mapping.get("scenario", mapping)
        logger.info(f"Scenario loaded from {path}")
    try:
        base = ScenarioConfig(**mapping)
    except TypeError as e:
        raise UsageError(f"Invalid scenario settings: {str(e)}")
    except ValueError as e:
        raise UsageError(str(e))
    return base.with_overrides(**overrides)


# -- event logs ----------------------------------------------------------

def event_log_lines(events):
    """Canonical JSON lines: sorted keys, compact separators, one event per line."""
    return "".join(json.dumps(event, sort_keys=True, separators=(",", ":")) + "\n" for event in events)


def write_event_log(events, path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(event_log_lines(events))
    logger.info(f"Wrote {len(events)} events to {path}")


def read_input(path=None, hex_value=None):
    """Bytes from a hex string or a whole file (at most 16 MiB)."""
    if (path is None) == (hex_value is None):
        raise UsageError("Give exactly one of a hex value or an input file")
    if hex_value is not None:
        return parse_hex(hex_value)
    size = os.path.getsize(path)
    if size > MAX_INPUT_BYTES:
        raise UsageError(f"Input file {path} exceeds 16 MiB")
    with open(path, "rb") as handle:
        return handle.read()


def parse_hex(value, what="hex value"):
    text = "".join(value.split())
    if text[:2].lower() == "0x":
        text = text[2:]
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise UsageError(f"Invalid {what}: '{value}'")


# -- golden files --------------------------------------------------------

def golden_path(name, directory=None):
    return os.path.join(directory or GOLDEN_DIR, name)


def write_golden(name, text, directory=None):
    path = golden_path(name, directory)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)
    logger.info(f"Golden file written: {path}")
    return path


def check_golden(name, text, directory=None):
    """
    Compare text with a frozen golden file. Only `app.py golden` writes them.

    Returns:
        bool: True when the file exists and matches
    """
    path = golden_path(name, directory)
    if not os.path.exists(path):
        logger.error(f"Golden file missing: {path} (run `python app.py golden`)")
        return False
    with open(path, "r", encoding="utf-8", newline="") as handle:
        frozen = handle.read()
    if frozen != text:
        logger.warning(f"Golden mismatch for {name}")
        return False
    return True
