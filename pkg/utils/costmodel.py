#!/usr/bin/env python

import contextvars
import logging
import math
from collections import Counter
from contextlib import contextmanager

import attr
import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from utils.errors import UsageError

# Configure logging
logger = logging.getLogger(__name__)

# Per-operation cycle figures of the accelerator architecture
AES_CYCLES = 11
GCM_OVERHEAD_CYCLES = 54
GCM_BLOCK_CYCLES = 32
SHA_BLOCK_CYCLES = 65
MOD_ADD_CYCLES = 1
EUCLID_CYCLES_256 = 720

# Symbolic inversion weights, in multiplications
I_EUCLID_IN_M = 3
I_FERMAT_IN_M = 384

# Jacobian doubling (4M + 4S) plus mixed addition (8M + 3S)
PROJECTIVE_DBL_M = 8
PROJECTIVE_ADD_M = 11
PROJECTIVE_TO_AFFINE_M = 4

COMB_ROWS = 4
COMB_TABLE_ADDS = 14


def comb_spacing(t):
    """Tooth spacing d of the 4-row comb for a t-bit scalar."""
    return max(1, math.ceil(t / COMB_ROWS))


def euclid_cycles(t):
    return round(EUCLID_CYCLES_256 * t / 256)


def ecsm_cycles(t):
    """
    Modeled cycles of one comb ECSM on a t-bit curve.

    The first loop iteration starts from the point at infinity and costs
    nothing; every other iteration is one DBL (3M + I) and one ADD (2M + I),
    followed by the even/odd correction (one ADD).
    """
    d = comb_spacing(t)
    m, i = t, euclid_cycles(t)
    return (d - 1) * (5 * m + 2 * i) + (2 * m + i)


def comb_cycles(t):
    """Modeled cycles of one comb table precomputation (3d DBL + 14 ADD)."""
    d = comb_spacing(t)
    m, i = t, euclid_cycles(t)
    return 3 * d * (3 * m + i) + COMB_TABLE_ADDS * (2 * m + i)


@attr.define
class CostLedger:
    """
    Invocation counters for every metered primitive.

    Cycle totals are derived from the counters only. ``field_ops`` selects
    whether ECC cycles come from the field-level counters (bit-serial engine
    metering) or from the modeled ECSM/comb counts.
    """
    field_ops: bool = False
    aes_blocks: int = 0
    gcm_calls: int = 0
    gcm_aad_blocks: int = 0
    gcm_pt_blocks: int = 0
    ghash_cycles: int = 0
    sha_blocks: int = 0
    mod_add: int = 0
    mod_mul: Counter = attr.Factory(Counter)
    inv_euclid_calls: int = 0
    inv_euclid_iters: int = 0
    ecsm: Counter = attr.Factory(Counter)
    comb_precompute: Counter = attr.Factory(Counter)
    drbg_generate: int = 0
    ecdsa_sign: int = 0
    ecdsa_verify: int = 0
    ecdh: int = 0
    idle_periods: int = 0

    def charge(self, name, amount=1, key=None):
        value = getattr(self, name)
        if key is None:
            setattr(self, name, value + amount)
        else:
            value[key] += amount

    # -- cycle formulas -------------------------------------------------

    @property
    def aes_cycles(self):
        return AES_CYCLES * self.aes_blocks

    @property
    def gcm_cycles(self):
        return (GCM_OVERHEAD_CYCLES * self.gcm_calls
                + GCM_BLOCK_CYCLES * (self.gcm_aad_blocks + self.gcm_pt_blocks))

    @property
    def sha_cycles(self):
        return SHA_BLOCK_CYCLES * self.sha_blocks

    @property
    def mul_cycles(self):
        return sum(t * count for t, count in self.mod_mul.items())

    @property
    def field_cycles(self):
        return MOD_ADD_CYCLES * self.mod_add + self.mul_cycles + self.inv_euclid_iters

    @property
    def ecsm_model_cycles(self):
        return sum(ecsm_cycles(t) * count for t, count in self.ecsm.items())

    @property
    def comb_model_cycles(self):
        return sum(comb_cycles(t) * count for t, count in self.comb_precompute.items())

    @property
    def ecc_cycles(self):
        if self.field_ops:
            return self.field_cycles
        return self.ecsm_model_cycles + self.comb_model_cycles

    @property
    def aes_invocations(self):
        """AES core runs: standalone blocks plus, per GCM call, H, E(J0) and the keystream."""
        return self.aes_blocks + 2 * self.gcm_calls + self.gcm_pt_blocks

    @property
    def total_cycles(self):
        return (self.aes_cycles + self.gcm_cycles + self.ghash_cycles
                + self.sha_cycles + self.ecc_cycles)

    def as_dict(self):
        """JSON-serializable counter snapshot."""
        result = {}
        for field in attr.fields(CostLedger):
            value = getattr(self, field.name)
            if isinstance(value, Counter):
                value = {str(key): value[key] for key in sorted(value)}
            result[field.name] = value
        result["total_cycles"] = self.total_cycles
        return result

    def copy(self):
        return attr.evolve(self, mod_mul=Counter(self.mod_mul), ecsm=Counter(self.ecsm),
                           comb_precompute=Counter(self.comb_precompute))


@attr.define
class Meter:
    ledger: CostLedger = None
    trace: object = None
    field_ops: bool = False

    @property
    def detailed(self):
        # Bit-serial field arithmetic only runs when someone is watching it
        return self.field_ops or self.trace is not None


_active_meter = contextvars.ContextVar("active_meter", default=None)


@contextmanager
def metering(ledger=None, trace=None, field_ops=None):
    """
    Bind a ledger and/or operation trace to every primitive call in scope.

    Args:
        ledger: CostLedger receiving the counters (optional)
        trace: OpTrace receiving opcode tags (optional)
        field_ops: Force field-level metering; defaults to the ledger's own flag

    Yields:
        The active Meter
    """
    if field_ops is None:
        field_ops = ledger.field_ops if ledger is not None else False
    meter = Meter(ledger=ledger, trace=trace, field_ops=field_ops)
    token = _active_meter.set(meter)
    try:
        yield meter
    finally:
        _active_meter.reset(token)


def current_meter():
    return _active_meter.get()


def charge(name, amount=1, key=None):
    meter = _active_meter.get()
    if meter is not None and meter.ledger is not None:
        meter.ledger.charge(name, amount, key)


# -- calibration -------------------------------------------------------

_PREFIXES = {"p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6, "m": 1e-3, "": 1.0}


@attr.frozen
class Quantity:
    value: float
    unit: str

    @property
    def per(self):
        """Denominator of the unit ("bit", "B", "op") or None."""
        _, _, per = self.unit.partition("/")
        return per or None

    @property
    def si(self):
        """Value in base units (joules or seconds), per denominator if any."""
        numerator = self.unit.partition("/")[0].strip()
        if numerator in ("x", "cycles"):
            return float(self.value)
        base = numerator[-1:]
        prefix = numerator[:-1]
        if base not in ("J", "s") or prefix not in _PREFIXES:
            raise UsageError(f"Unknown unit '{self.unit}'")
        return float(self.value) * _PREFIXES[prefix]


REQUIRED_PRIMITIVES = ("aes_block", "aes_gcm", "sha256", "mod_add", "mod_mul",
                       "inv_euclid", "inv_fermat", "ecsm_256", "comb_256")
REQUIRED_CYCLES = ("ecsm_256", "comb_256", "inv_euclid_256", "inv_fermat_256", "aes_a1_block")


@attr.frozen
class EnergyTable:
    """Calibration constants, loaded from the unit-annotated calibration file."""
    primitives: dict
    cycles: dict
    targets: dict = attr.Factory(dict)
    reference: dict = attr.Factory(dict)

    @classmethod
    def from_mapping(cls, mapping):
        def quantities(section):
            return {name: Quantity(float(entry["value"]), str(entry["unit"]))
                    for name, entry in (mapping.get(section) or {}).items()}

        primitives = quantities("primitives")
        cycles = {name: int(value) for name, value in (mapping.get("cycles") or {}).items()}
        missing = [name for name in REQUIRED_PRIMITIVES if name not in primitives]
        missing += [f"cycles.{name}" for name in REQUIRED_CYCLES if name not in cycles]
        if missing:
            raise UsageError(f"Calibration is missing entries: {', '.join(missing)}")
        return cls(primitives=primitives, cycles=cycles,
                   targets=quantities("targets"), reference=quantities("reference"))

    def joules(self, name):
        return self.primitives[name].si

    # energy per cycle, back-derived from per-operation energies
    @property
    def aes_per_cycle(self):
        return self.joules("aes_block") * 128 / AES_CYCLES

    @property
    def gcm_per_cycle(self):
        return self.joules("aes_gcm") * 128 / GCM_BLOCK_CYCLES

    @property
    def sha_per_cycle(self):
        return self.joules("sha256") * 512 / SHA_BLOCK_CYCLES

    @property
    def ecsm_per_cycle(self):
        return self.joules("ecsm_256") / self.cycles["ecsm_256"]

    @property
    def comb_per_cycle(self):
        return self.joules("comb_256") / self.cycles["comb_256"]

    @property
    def mul_per_cycle(self):
        return self.joules("mod_mul") / 256

    @property
    def euclid_per_cycle(self):
        return self.joules("inv_euclid") / self.cycles["inv_euclid_256"]


def _uj(joules):
    return joules * 1e6


def ledger_energy(ledger, table):
    """Energy estimate per primitive family, in joules."""
    if ledger.field_ops:
        ecsm_j = (ledger.mod_add * table.joules("mod_add")
                  + ledger.mul_cycles * table.mul_per_cycle
                  + ledger.inv_euclid_iters * table.euclid_per_cycle)
        comb_j = 0.0
    else:
        ecsm_j = ledger.ecsm_model_cycles * table.ecsm_per_cycle
        comb_j = ledger.comb_model_cycles * table.comb_per_cycle
    return {
        "aes": ledger.aes_cycles * table.aes_per_cycle,
        "gcm": (ledger.gcm_cycles + ledger.ghash_cycles) * table.gcm_per_cycle,
        "sha": ledger.sha_cycles * table.sha_per_cycle,
        "ecsm": ecsm_j,
        "comb": comb_j,
    }


def _dominant_width(ledger):
    widths = Counter(ledger.ecsm) + Counter(ledger.comb_precompute)
    return max(widths, key=lambda t: (widths[t], t)) if widths else None


def ledger_report(ledger, table, baseline=None, target=None):
    """
    Summarize a ledger: cycles per module, energy estimate and an optional comparison.

    Args:
        ledger: CostLedger to report on
        table: EnergyTable with the calibration constants
        baseline: Optional second CostLedger (e.g. a full-mode handshake) to compare against
        target: Optional calibrated target name (e.g. "handshake_full") for the unattributed residual

    Returns:
        dict: JSON-serializable report
    """
    cycles = {
        "aes": ledger.aes_cycles,
        "gcm": ledger.gcm_cycles + ledger.ghash_cycles,
        "sha": ledger.sha_cycles,
        "ecc": ledger.ecc_cycles,
    }
    cycles["total"] = sum(cycles.values())
    energy = {name: _uj(value) for name, value in ledger_energy(ledger, table).items()}
    energy["total"] = sum(energy.values())

    width = _dominant_width(ledger)
    report = {
        "cycles": cycles,
        "energy_uj": energy,
        "counts": ledger.as_dict(),
        "aes_invocations": ledger.aes_invocations,
        "comb_table_uj": _uj(comb_cycles(width) * table.comb_per_cycle) if width else 0.0,
        # same AES work on the 8-bit serial core
        "aes_a1": {
            "cycles": table.cycles["aes_a1_block"] * ledger.aes_invocations,
            "baseline_cycles": AES_CYCLES * ledger.aes_invocations,
        },
    }
    if target is not None:
        if target not in table.targets:
            raise UsageError(f"Unknown calibration target '{target}'")
        target_uj = _uj(table.targets[target].si)
        report["target_uj"] = target_uj
        report["unattributed_uj"] = target_uj - energy["total"]
    if baseline is not None:
        base = ledger_report(baseline, table)
        cycle_ratio = cycles["total"] / base["cycles"]["total"] if base["cycles"]["total"] else None
        energy_ratio = energy["total"] / base["energy_uj"]["total"] if base["energy_uj"]["total"] else None
        report["comparison"] = {
            "baseline_cycles": base["cycles"]["total"],
            "baseline_energy_uj": base["energy_uj"]["total"],
            "cycle_ratio": cycle_ratio,
            "energy_ratio": energy_ratio,
            "cycle_reduction": None if cycle_ratio is None else 1 - cycle_ratio,
            "energy_reduction": None if energy_ratio is None else 1 - energy_ratio,
        }
    logger.debug(f"Ledger report: {cycles['total']} cycles, {energy['total']:.3f} uJ")
    return report


def report_frame(report):
    """Tabular view of a ledger report, one row per primitive family."""
    rows = []
    for name in ("aes", "gcm", "sha", "ecc"):
        rows.append({
            "module": name,
            "cycles": report["cycles"][name],
            "energy_uj": (report["energy_uj"]["ecsm"] + report["energy_uj"]["comb"]
                          if name == "ecc" else report["energy_uj"][name]),
        })
    rows.append({"module": "total", "cycles": report["cycles"]["total"],
                 "energy_uj": report["energy_uj"]["total"]})
    return pd.DataFrame(rows)


PINNED_TABLES = 3


def comb_amortization(report):
    """
    Compare handshake ECC energy with a warm comb cache against a cold one.

    With a warm cache the G, Q_CA and Q_SRV tables are already installed, so
    only the ECSM loops remain; a cold cache has to precompute all three first.
    """
    warm = report["energy_uj"]["ecsm"]
    if warm <= 0:
        return {"warm_uj": 0.0, "cold_uj": 0.0, "saved_uj": 0.0, "ratio": 1.0}
    saved = PINNED_TABLES * report["comb_table_uj"]
    cold = warm + saved
    return {"warm_uj": warm, "cold_uj": cold, "saved_uj": saved, "ratio": cold / warm}


# -- symbolic costs ----------------------------------------------------

@attr.frozen
class OpCost:
    """Field-operation cost of one point operation."""
    m: int
    i: int


def affine_ecsm_cost(add, dbl, iterations=64, i_in_m=I_EUCLID_IN_M):
    """Main-loop cost in multiplications: iterations × (ADD + DBL) with I weighted."""
    return iterations * ((add.m + dbl.m) + (add.i + dbl.i) * i_in_m)


def projective_ecsm_cost(iterations=64, i_in_m=I_FERMAT_IN_M):
    """Same loop in Jacobian coordinates plus the final conversion to affine."""
    return iterations * (PROJECTIVE_DBL_M + PROJECTIVE_ADD_M) + PROJECTIVE_TO_AFFINE_M + i_in_m


def fermat_vs_euclid_ratio(table):
    return {
        "energy": table.joules("inv_fermat") / table.joules("inv_euclid"),
        "cycles": table.cycles["inv_fermat_256"] / table.cycles["inv_euclid_256"],
        "symbolic": I_FERMAT_IN_M / I_EUCLID_IN_M,
    }


# -- session energy analysis -------------------------------------------

def _positive(instance, attribute, value):
    if not value > 0:
        raise UsageError(f"{attribute.name} must be positive, got {value}")


def _non_negative(instance, attribute, value):
    if value < 0:
        raise UsageError(f"{attribute.name} must be non-negative, got {value}")


@attr.frozen
class AnalysisParams:
    e_handshake: float = attr.field(converter=float, validator=_positive)
    e_appdata: float = attr.field(converter=float, validator=_positive)
    n_bytes: float = attr.field(converter=float, validator=_non_negative)
    t_session: float = attr.field(converter=float, validator=_positive)
    t_appdata: float = attr.field(converter=float, validator=_positive)

    def __attrs_post_init__(self):
        if self.t_appdata > self.t_session:
            raise UsageError("t_appdata must not exceed t_session")


def e_total(params):
    """
    Total compute energy of a session and the share spent in the handshake.

    Returns:
        tuple: (E_total in joules, handshake fraction)
    """
    data = params.n_bytes * (params.t_session / params.t_appdata) * params.e_appdata
    total = params.e_handshake + data
    return total, params.e_handshake / total


DAY = 86400.0
WEEK = 7 * DAY


def contour_sweep(e_handshake, e_appdata, t_sessions=(DAY, WEEK), n_values=None, t_appdata_values=None):
    """
    Evaluate the handshake share of session energy over a grid.

    Returns:
        pd.DataFrame: columns t_session, n_bytes, t_appdata, e_total, handshake_fraction;
        grid points with t_appdata > t_session are omitted
    """
    if n_values is None:
        n_values = np.unique(np.round(np.logspace(0, 3, 16)))
    if t_appdata_values is None:
        t_appdata_values = np.logspace(0, np.log10(DAY), 25)
    rows = []
    for t_session in t_sessions:
        n_grid, t_grid = np.meshgrid(np.asarray(n_values, dtype=float),
                                     np.asarray(t_appdata_values, dtype=float), indexing="ij")
        for n_bytes, t_appdata in zip(n_grid.ravel(), t_grid.ravel()):
            if t_appdata > t_session:
                continue
            total, fraction = e_total(AnalysisParams(e_handshake, e_appdata, n_bytes, t_session, t_appdata))
            rows.append({"t_session": float(t_session), "n_bytes": float(n_bytes),
                         "t_appdata": float(t_appdata), "e_total": total,
                         "handshake_fraction": fraction})
    return pd.DataFrame(rows, columns=["t_session", "n_bytes", "t_appdata", "e_total", "handshake_fraction"])


def contour_figure(frame):
    """Plotly contour panels of the handshake percentage, one per session length."""
    sessions = sorted(frame["t_session"].unique())
    fig = make_subplots(rows=1, cols=len(sessions),
                        subplot_titles=[f"t_session = {s / DAY:g} day(s)" for s in sessions])
    for col, t_session in enumerate(sessions, start=1):
        sheet = frame[frame["t_session"] == t_session].pivot(
            index="n_bytes", columns="t_appdata", values="handshake_fraction")
        fig.add_trace(
            go.Contour(x=sheet.columns.values, y=sheet.index.values, z=sheet.values * 100,
                       colorbar=dict(title="% in handshake"), showscale=(col == 1)),
            row=1, col=col)
        fig.update_xaxes(type="log", title_text="t_appdata (s)", row=1, col=col)
        fig.update_yaxes(type="log", title_text="N (bytes)", row=1, col=col)
    fig.update_layout(title="Share of session compute energy spent in the handshake", height=450)
    return fig
