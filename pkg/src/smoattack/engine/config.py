"""Strict scenario configuration.

A scenario is an INI file with one section per concern::

    [scenario]     name, description
    [plant]        type = wecc | linear-custom | nl-catalog, plus type-specific keys
    [attack]       dx1 = ..., dy5 = ..., gate_dx, gate_dy
    [observer]     primary, blocks
    [smo] [stw] [nl] [sparse]   observer parameters
    [integration]  dt, horizon, seed, noise_std
    [outputs]      trace, plots, plot_dir, decimation
    [metrics]      window, band_factor, support_threshold

Unknown sections or keys, and malformed values, raise
:class:`~smoattack.errors.ConfigError` naming the dotted key.  Value
grammar: numbers; lists ``1, 2, 3``; matrices with rows separated by
``;`` (``1, 0; 0, 1``); booleans ``true``/``false``; identifiers.  Attack
channels are sums of terms ``sin(A, w[, phase[, t0]])``,
``cos(A, w[, phase[, t0]])``, ``step(t0[, A])``, ``const(c[, t0])`` and
``fb(state, gain)`` (1-based state index); arguments may use ``pi`` and
arithmetic.
"""

from __future__ import annotations

import ast
import configparser
import math
import operator
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np

from ..errors import ConfigError
from ..model import AttackSignal, Constant, Sine, StateFeedback, Step

__all__ = ["ScenarioConfig", "load_config", "parse_config", "parse_attack_expr", "SCHEMA"]


# ---------------------------------------------------------------------------
# value parsers
# ---------------------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_NAMES = {"pi": math.pi, "e": math.e, "inf": math.inf}


def _eval_num(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval_num(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_num(node.left), _eval_num(node.right))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id == "sqrt" \
            and len(node.args) == 1:
        return math.sqrt(_eval_num(node.args[0]))
    raise ValueError("not a numeric expression")


def _number(text):
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    return _eval_num(ast.parse(text, mode="eval").body)


def p_float(text):
    return _number(text)


def p_pos(text):
    v = _number(text)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def p_nonneg(text):
    v = _number(text)
    if v < 0:
        raise ValueError("must be nonnegative")
    return v


def p_int(text):
    v = _number(text)
    if v != int(v):
        raise ValueError("must be an integer")
    return int(v)


def p_posint(text):
    v = p_int(text)
    if v < 1:
        raise ValueError("must be at least 1")
    return v


def p_bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError("must be true or false")


def p_list(text):
    t = text.strip()
    if not t:
        return np.zeros(0)
    return np.array([_number(s) for s in t.split(",")])


def p_matrix(text):
    rows = [r for r in text.strip().split(";")]
    data = [[_number(s) for s in r.split(",")] for r in rows if r.strip()]
    if not data:
        return np.zeros((0, 0))
    if len({len(r) for r in data}) != 1:
        raise ValueError("matrix rows have different lengths")
    return np.array(data)


def p_str(text):
    return text.strip()


def p_ident(text):
    t = text.strip()
    if not re.fullmatch(r"[A-Za-z][A-Za-z0-9_\-]*", t):
        raise ValueError(f"{t!r} is not an identifier")
    return t


def p_idlist(text):
    return tuple(p_ident(s) for s in text.split(",") if s.strip())


def p_choice(*options):
    def parse(text):
        t = p_ident(text)
        if t not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return t
    return parse


def p_optional(parse):
    def inner(text):
        if text.strip().lower() in ("none", "auto", ""):
            return None
        return parse(text)
    return inner


def p_window(text):
    v = p_list(text)
    if v.size != 2 or not v[0] < v[1]:
        raise ValueError("window must be 'start, end' with start < end")
    return (float(v[0]), float(v[1]))


# ---------------------------------------------------------------------------
# attack expressions
# ---------------------------------------------------------------------------

def _term_from_call(call, sign):
    if not isinstance(call.func, ast.Name):
        raise ValueError("attack terms must be simple calls")
    name = call.func.id
    args = [_eval_num(a) for a in call.args]
    if call.keywords:
        raise ValueError("keyword arguments are not supported in attack terms")

    def need(lo, hi):
        if not lo <= len(args) <= hi:
            raise ValueError(f"{name}() takes {lo} to {hi} arguments")

    if name in ("sin", "cos"):
        need(2, 4)
        amp, w = args[0], args[1]
        phase = args[2] if len(args) > 2 else 0.0
        t0 = args[3] if len(args) > 3 else 0.0
        if name == "cos":
            phase += math.pi / 2
        return Sine(sign * amp, w, phase, t0)
    if name == "step":
        need(1, 2)
        return Step(args[0], sign * (args[1] if len(args) > 1 else 1.0))
    if name == "const":
        need(1, 2)
        return Constant(sign * args[0], args[1] if len(args) > 1 else 0.0)
    if name == "fb":
        need(2, 2)
        idx = args[0]
        if idx != int(idx) or idx < 1:
            raise ValueError("fb() state index is 1-based")
        return StateFeedback(int(idx) - 1, sign * args[1])
    raise ValueError(f"unknown attack term {name}()")


def _collect_terms(node, sign, out):
    if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub)):
        _collect_terms(node.left, sign, out)
        _collect_terms(node.right, sign if isinstance(node.op, ast.Add) else -sign, out)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        _collect_terms(node.operand, -sign if isinstance(node.op, ast.USub) else sign, out)
    elif isinstance(node, ast.Call):
        out.append(_term_from_call(node, sign))
    elif isinstance(node, ast.Constant) and node.value == 0:
        pass
    else:
        raise ValueError("attack expressions are sums of sin/cos/step/const/fb terms")


def parse_attack_expr(text):
    """Terms of one attack channel; ``0`` or empty gives no terms."""
    text = text.strip()
    if not text:
        return ()
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse {text!r}") from exc
    terms = []
    _collect_terms(tree.body, 1.0, terms)
    return tuple(terms)


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

_MISSING = object()

SCHEMA: Dict[str, Dict[str, tuple]] = {
    "scenario": {
        "name": (p_ident, "scenario"),
        "description": (p_str, ""),
    },
    "plant": {
        "type": (p_choice("wecc", "linear-custom", "nl-catalog"), "wecc"),
        # wecc
        "plant_attack": (p_bool, True),
        "sensor_attack": (p_choice("d_omega", "identity", "none"), "d_omega"),
        "P_omega": (p_list, None),
        "P_theta": (p_list, None),
        "speed_feedback": (p_float, 0.0),
        # linear-custom
        "A": (p_matrix, None),
        "B1": (p_matrix, None),
        "C": (p_matrix, None),
        "D1": (p_matrix, None),
        "bias": (p_list, None),
        "open_loop_unstable": (p_bool, False),
        "sparse_d1": (p_bool, False),
        # nl-catalog
        "model": (p_choice("scalar-chain", "cubic-output"), "scalar-chain"),
        "u0": (p_float, 0.0),
        # any
        "x0": (p_list, None),
    },
    "attack": {
        "gate_dx": (p_optional(p_float), None),
        "gate_dy": (p_optional(p_float), None),
    },
    "observer": {
        "primary": (p_choice("stw", "smo", "nl", "none"), "stw"),
        "blocks": (p_idlist, None),
    },
    "smo": {
        "rho": (p_nonneg, 5.0),
        "eta": (p_pos, 0.1),
        "adaptive": (p_bool, False),
        "alpha": (p_pos, 0.9),
        "epsilon": (p_pos, 1.0),
        "sigma0": (p_pos, 0.1),
        "gamma": (p_pos, 20.0),
        "ell0": (p_pos, 100.0),
        "rho_init": (p_nonneg, 1.0),
        "r_init": (p_optional(p_pos), None),
        "a1": (p_optional(p_nonneg), None),
        "q": (p_pos, 1.1),
        "tau_f": (p_pos, 0.01),
        "filter_order": (p_posint, 1),
        "delta_reg": (p_pos, 1e-6),
        "A22s": (p_optional(p_matrix), None),
        "A33s": (p_optional(p_matrix), None),
        "poles": (p_optional(p_list), None),
    },
    "stw": {
        "rho_c": (p_pos, 50.0),
        "lipschitz": (p_list, np.array([10.0])),
        "poles": (p_optional(p_list), None),
        "tau_f": (p_pos, 0.01),
        "filter_order": (p_posint, 1),
        "delta_reg": (p_pos, 1e-6),
        "epsilon_act": (p_pos, 1e-3),
    },
    "nl": {
        "model": (p_choice("linear-wrap", "catalog"), "linear-wrap"),
        "lipschitz": (p_list, np.array([10.0])),
        "tau_f": (p_optional(p_pos), None),
        "filter_order": (p_posint, 1),
        "gamma0": (p_optional(p_list), None),
    },
    "sparse": {
        "source": (p_choice("stw", "nl"), "stw"),
        "lam": (p_optional(p_pos), None),
        "mu": (p_pos, 0.01),
        "beta": (p_pos, 0.5),
        "deadband": (p_optional(p_nonneg), None),
        "normalize": (p_bool, True),
    },
    "integration": {
        "dt": (p_pos, 1e-4),
        "horizon": (p_pos, 20.0),
        "seed": (p_int, 0),
        "noise_std": (p_nonneg, 0.0),
    },
    "outputs": {
        "trace": (p_optional(p_str), None),
        "plots": (p_bool, False),
        "plot_dir": (p_optional(p_str), None),
        "decimation": (p_posint, 100),
    },
    "metrics": {
        "window": (p_optional(p_window), None),
        "band_factor": (p_pos, 10.0),
        "support_threshold": (p_pos, 0.05),
    },
}

_ATTACK_KEY = re.compile(r"(dx|dy)([1-9][0-9]*)$")


@dataclass
class ScenarioConfig:
    """Parsed scenario: one dict of typed values per section plus the attacks."""

    sections: Dict[str, Dict[str, Any]]
    dx: AttackSignal
    dy: AttackSignal
    source: Optional[str] = None
    dx_declared: int = 0
    dy_declared: int = 0

    def __getitem__(self, section):
        return self.sections[section]

    @property
    def name(self):
        return self.sections["scenario"]["name"]

    @property
    def dt(self):
        return self.sections["integration"]["dt"]

    @property
    def horizon(self):
        return self.sections["integration"]["horizon"]

    @property
    def steps(self):
        return int(round(self.horizon / self.dt))

    @property
    def window(self):
        w = self.sections["metrics"]["window"]
        return (0.0, self.horizon) if w is None else w

    @property
    def blocks(self):
        obs = self.sections["observer"]
        b = obs["blocks"]
        if b is None:
            return () if obs["primary"] == "none" else (obs["primary"],)
        return b

    def with_overrides(self, **sections):
        """Copy with some keys replaced, e.g. ``with_overrides(outputs={"trace": p})``.

        ``attack`` accepts ``gate_dx``/``gate_dy`` (number or None) and
        ``dx<i>``/``dy<i>`` expressions in the attack grammar.
        """
        new = {k: dict(v) for k, v in self.sections.items()}
        signals = {"dx": [self.dx, self.dx_declared], "dy": [self.dy, self.dy_declared]}
        for sec, vals in sections.items():
            if sec not in new:
                raise ConfigError("unknown section", key=sec)
            for k, v in vals.items():
                if sec == "attack":
                    _override_attack(signals, new["attack"], k, v)
                    continue
                if k not in SCHEMA[sec]:
                    raise ConfigError("unknown key", key=f"{sec}.{k}")
                new[sec][k] = v
        cfg = ScenarioConfig(new, signals["dx"][0], signals["dy"][0], self.source,
                             signals["dx"][1], signals["dy"][1])
        _validate(cfg)
        return cfg


def _override_attack(signals, section, key, value):
    if key in ("gate_dx", "gate_dy"):
        kind = key[-2:]
        gate = None if value is None else float(value)
        signals[kind][0] = replace(signals[kind][0], gate=gate)
        section[key] = gate
        return
    mt = _ATTACK_KEY.match(key)
    if not mt:
        raise ConfigError("unknown key (use dx<i>, dy<i>, gate_dx, gate_dy)", key=f"attack.{key}")
    try:
        terms = parse_attack_expr(str(value))
    except ValueError as exc:
        raise ConfigError(str(exc), key=f"attack.{key}") from exc
    kind, idx = mt.group(1), int(mt.group(2))
    sig, declared = signals[kind]
    chans = list(sig.channels) + [()] * max(0, idx - len(sig.channels))
    chans[idx - 1] = terms
    signals[kind] = [replace(sig, channels=tuple(chans)), max(declared, idx)]


def _parse_attacks(raw):
    dx, dy = {}, {}
    gates = {"gate_dx": None, "gate_dy": None}
    for key, text in raw.items():
        if key in gates:
            try:
                gates[key] = SCHEMA["attack"][key][0](text)
            except ValueError as exc:
                raise ConfigError(str(exc), key=f"attack.{key}") from exc
            continue
        mt = _ATTACK_KEY.match(key)
        if not mt:
            raise ConfigError("unknown key (use dx<i>, dy<i>, gate_dx, gate_dy)", key=f"attack.{key}")
        try:
            terms = parse_attack_expr(text)
        except ValueError as exc:
            raise ConfigError(str(exc), key=f"attack.{key}") from exc
        (dx if mt.group(1) == "dx" else dy)[int(mt.group(2))] = terms

    def build(chans, gate):
        size = max(chans, default=0)
        return AttackSignal(tuple(chans.get(i + 1, ()) for i in range(size)), gate=gate), size

    sx, nx = build(dx, gates["gate_dx"])
    sy, ny = build(dy, gates["gate_dy"])
    return sx, sy, nx, ny


def parse_config(text, source=None) -> ScenarioConfig:
    """Parse scenario text (see module docstring for the grammar)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                   strict=True, empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<string>")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    sections = {}
    attack_raw = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError("unknown section", key=sec)
        if sec == "attack":
            attack_raw = dict(cp.items(sec))
    for sec, keys in SCHEMA.items():
        vals = {k: default for k, (_, default) in keys.items()}
        if sec != "attack" and cp.has_section(sec):
            for k, text_v in cp.items(sec):
                if k not in keys:
                    raise ConfigError("unknown key", key=f"{sec}.{k}")
                try:
                    vals[k] = keys[k][0](text_v)
                except (ValueError, SyntaxError, ZeroDivisionError) as exc:
                    raise ConfigError(str(exc) or "invalid value", key=f"{sec}.{k}") from exc
        sections[sec] = vals
    dx, dy, nx, ny = _parse_attacks(attack_raw)
    sections["attack"] = {"gate_dx": dx.gate, "gate_dy": dy.gate}
    cfg = ScenarioConfig(sections, dx, dy, source, nx, ny)
    _validate(cfg)
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    cfg = parse_config(text, source=str(path))
    return cfg


def _validate(cfg: ScenarioConfig):
    s = cfg.sections
    dt, horizon = s["integration"]["dt"], s["integration"]["horizon"]
    if horizon < dt:
        raise ConfigError("horizon must be at least dt", key="integration.horizon")
    w = s["metrics"]["window"]
    if w is not None and (w[0] < 0 or w[1] > horizon + 1e-12):
        raise ConfigError("window must lie within [0, horizon]", key="metrics.window")
    obs = s["observer"]
    blocks = cfg.blocks
    for b in blocks:
        if b not in ("stw", "smo", "nl", "sparse"):
            raise ConfigError(f"unknown observer block {b!r}", key="observer.blocks")
    if obs["primary"] != "none" and obs["primary"] not in blocks:
        raise ConfigError("primary observer must be one of the blocks", key="observer.primary")
    if "sparse" in blocks and s["sparse"]["source"] not in blocks:
        raise ConfigError("sparse source block is not enabled", key="sparse.source")
    if not 0 < s["sparse"]["beta"] <= 1:
        raise ConfigError("beta must lie in (0, 1]", key="sparse.beta")
    p = s["plant"]
    if p["type"] == "linear-custom":
        for k in ("A", "B1", "C"):
            if p[k] is None:
                raise ConfigError("required for linear-custom plants", key=f"plant.{k}")
    if s["smo"]["adaptive"] and not 0 < s["smo"]["alpha"] < 1:
        raise ConfigError("alpha must lie in (0, 1)", key="smo.alpha")
