"""Versioned model configuration: loading, validation, normalisation.

Schema ``lob-tactics/model-v1``.  Three sections: ``intensity`` (constant,
table, or queue-reactive-ratio rates), ``regeneration`` (outcome tables,
mirrored onto the ask side unless both sides are given), and ``model``
(scalars).  Validation collects every error before reporting.
"""

from __future__ import annotations

import difflib
import json
import math
from pathlib import Path

import numpy as np

from .model import (IntensityModel, ModelConfig, ModelError, PayoffSpec,
                    RegenerationLaw, default_price_window)

SCHEMA = "lob-tactics/model-v1"


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


_TOP_KEYS = {"schema", "intensity", "regeneration", "model"}
_INTENSITY_KEYS = {"kind", "lam_plus", "lam_minus", "lam_minus_cancel",
                   "lam_minus_market", "market_fraction", "qmax", "n_max",
                   "base_plus", "base_minus", "decay_plus", "growth_minus",
                   "table_bid_plus", "table_bid_cancel", "table_bid_market"}
_REGEN_KEYS = {"kind", "bid", "ask", "bid_conditional"}
_MODEL_KEYS = {"tick", "spread", "impact_alpha", "wait_cost", "order_size",
               "horizon", "decision_dt", "payoff", "price_window"}


def _suggest(key, valid):
    close = difflib.get_close_matches(key, sorted(valid), n=1)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return f"unknown field {key!r}{hint}"


def load_config(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        import tomllib
        return tomllib.loads(text)
    return json.loads(text)


def validate_config(cfg: dict) -> dict:
    """Check the whole document and return a normalised copy; raises
    :class:`ConfigError` carrying every problem found."""
    errors = []
    if not isinstance(cfg, dict):
        raise ConfigError(["configuration must be a mapping"])
    if cfg.get("schema") != SCHEMA:
        errors.append(f"schema must be {SCHEMA!r}, got {cfg.get('schema')!r}")
    for key in cfg:
        if key not in _TOP_KEYS:
            errors.append(_suggest(key, _TOP_KEYS))

    intensity = cfg.get("intensity")
    if not isinstance(intensity, dict):
        errors.append("missing 'intensity' section")
        intensity = {}
    for key in intensity:
        if key not in _INTENSITY_KEYS:
            errors.append("intensity: " + _suggest(key, _INTENSITY_KEYS))
    kind = intensity.get("kind")
    if kind not in ("constant", "table", "queue-reactive-ratio"):
        errors.append(f"intensity.kind must be constant|table|queue-reactive-ratio, got {kind!r}")
    qmax = intensity.get("qmax")
    if not isinstance(qmax, int) or qmax < 1:
        errors.append("intensity.qmax must be a positive integer")
        qmax = 1
    if kind == "constant":
        if "lam_plus" not in intensity:
            errors.append("intensity.lam_plus is required for constant rates")
        has_split = "lam_minus_cancel" in intensity and "lam_minus_market" in intensity
        if "lam_minus" not in intensity and not has_split:
            errors.append("intensity needs lam_minus or the cancel/market split")
    elif kind == "queue-reactive-ratio":
        for need in ("base_plus", "base_minus"):
            if need not in intensity:
                errors.append(f"intensity.{need} is required for queue-reactive-ratio")
    elif kind == "table":
        for need in ("table_bid_plus", "table_bid_cancel", "table_bid_market"):
            if need not in intensity:
                errors.append(f"intensity.{need} is required for table rates")

    regen = cfg.get("regeneration")
    if not isinstance(regen, dict):
        errors.append("missing 'regeneration' section")
        regen = {}
    for key in regen:
        if key not in _REGEN_KEYS:
            errors.append("regeneration: " + _suggest(key, _REGEN_KEYS))
    if not isinstance(regen.get("bid"), list) or not regen.get("bid"):
        errors.append("regeneration.bid must be a non-empty outcome list")
    else:
        for j, row in enumerate(regen["bid"]):
            if not (isinstance(row, dict) and {"q1", "q2", "dp", "prob"} <= set(row)):
                errors.append(f"regeneration.bid[{j}] needs q1, q2, dp, prob")

    model = cfg.get("model")
    if not isinstance(model, dict):
        errors.append("missing 'model' section")
        model = {}
    for key in model:
        if key not in _MODEL_KEYS:
            errors.append("model: " + _suggest(key, _MODEL_KEYS))
    tick = model.get("tick", 1.0)
    for name in ("tick", "spread", "horizon", "decision_dt", "wait_cost", "impact_alpha"):
        v = model.get(name)
        if v is not None and (not isinstance(v, (int, float)) or not math.isfinite(v)):
            errors.append(f"model.{name} must be a finite number")
    try:
        _build_model_config(model)
    except ModelError as exc:
        errors.append(f"model: {exc}")
    except (TypeError, ValueError) as exc:
        errors.append(f"model: {exc}")

    if errors:
        raise ConfigError(errors)

    norm = {"schema": SCHEMA,
            "intensity": dict(intensity),
            "regeneration": {"kind": regen.get("kind", "table"),
                             "bid": [dict(r) for r in regen["bid"]]},
            "model": dict(model)}
    if "ask" in regen:
        norm["regeneration"]["ask"] = [dict(r) for r in regen["ask"]]
    if "bid_conditional" in regen:
        norm["regeneration"]["bid_conditional"] = regen["bid_conditional"]
    return norm


def _build_model_config(model: dict) -> ModelConfig:
    payoff = model.get("payoff", {"kind": "identity"})
    if isinstance(payoff, str):
        payoff = {"kind": payoff}
    spec = PayoffSpec(kind=payoff.get("kind", "identity"),
                      lo=float(payoff.get("lo", -math.inf)),
                      hi=float(payoff.get("hi", math.inf)))
    return ModelConfig(tick=float(model.get("tick", 1.0)),
                       spread=float(model.get("spread", 1.0)),
                       impact_alpha=float(model.get("impact_alpha", 0.0)),
                       wait_cost=float(model.get("wait_cost", 0.0)),
                       order_size=int(model.get("order_size", 1)),
                       horizon=float(model.get("horizon", 10.0)),
                       decision_dt=float(model.get("decision_dt", 1.0)),
                       payoff=spec)


def build_objects(cfg: dict):
    """Materialise (IntensityModel, RegenerationLaw, ModelConfig) from a
    validated configuration."""
    cfg = validate_config(cfg)
    it = cfg["intensity"]
    qmax = it["qmax"]
    kind = it["kind"]
    if kind == "constant":
        model = IntensityModel.constant(
            it["lam_plus"], it.get("lam_minus"),
            lam_minus_cancel=it.get("lam_minus_cancel"),
            lam_minus_market=it.get("lam_minus_market"),
            market_fraction=it.get("market_fraction", 0.5),
            qmax=qmax, n_max=it.get("n_max", 1))
    elif kind == "queue-reactive-ratio":
        model = IntensityModel.queue_reactive_ratio(
            base_plus=it["base_plus"], base_minus=it["base_minus"],
            decay_plus=it.get("decay_plus", 0.85),
            growth_minus=it.get("growth_minus", 1.05),
            market_fraction=it.get("market_fraction", 0.5), qmax=qmax)
    else:
        model = IntensityModel.from_tables(
            np.asarray(it["table_bid_plus"], dtype=float),
            np.asarray(it["table_bid_cancel"], dtype=float),
            np.asarray(it["table_bid_market"], dtype=float),
            qmax=qmax, n_max=it.get("n_max", 1))

    rg = cfg["regeneration"]
    bid = [(r["q1"], r["q2"], r["dp"], r["prob"]) for r in rg["bid"]]
    ask = None
    if rg.get("ask"):
        ask = [(r["q1"], r["q2"], r["dp"], r["prob"]) for r in rg["ask"]]
    cond = None
    if rg.get("bid_conditional"):
        cond = {tuple(json.loads(k) if isinstance(k, str) else k):
                [(r["q1"], r["q2"], r["dp"], r["prob"]) for r in v]
                for k, v in rg["bid_conditional"].items()}
    regen = RegenerationLaw.from_outcomes(bid_outcomes=bid, ask_outcomes=ask,
                                          bid_conditional=cond, qmax=qmax)
    mc = _build_model_config(cfg["model"])
    return model, regen, mc


def price_window_for(cfg: dict, model, regen, mc) -> int:
    explicit = cfg.get("model", {}).get("price_window")
    if explicit is not None:
        return int(explicit)
    return default_price_window(model, regen, mc.horizon)


# ---------------------------------------------------------------------------
# built-in experiment setups


def builtin_config(name: str) -> dict:
    """Shipped setups.  Cash is measured in ticks (tick = 1) so the printed
    values read directly as tick fractions; the real-world tick size of the
    reference market is recorded alongside for conversion."""
    if name == "fig5":
        return {
            "schema": SCHEMA,
            "intensity": {"kind": "constant", "lam_plus": 0.06, "lam_minus": 0.12,
                          "market_fraction": 0.5, "qmax": 11},
            "regeneration": {"kind": "table",
                             "bid": [{"q1": 5, "q2": 3, "dp": -1, "prob": 1.0}]},
            "model": {"tick": 1.0, "spread": 1.0, "impact_alpha": 0.0,
                      "wait_cost": 0.0085, "order_size": 1, "horizon": 10.0,
                      "decision_dt": 1.0, "payoff": {"kind": "identity"},
                      "price_window": 12},
        }
    if name in ("fig4-synthetic", "fig4"):
        return {
            "schema": SCHEMA,
            "intensity": {"kind": "queue-reactive-ratio", "base_plus": 0.10,
                          "base_minus": 0.08, "decay_plus": 0.85,
                          "growth_minus": 1.10, "market_fraction": 0.5, "qmax": 8},
            "regeneration": {"kind": "table",
                             "bid": [{"q1": 4, "q2": 2, "dp": -1, "prob": 0.7},
                                     {"q1": 3, "q2": 3, "dp": -1, "prob": 0.3}]},
            "model": {"tick": 1.0, "spread": 1.0, "impact_alpha": 0.5,
                      "wait_cost": 0.0, "order_size": 1, "horizon": 100.0,
                      "decision_dt": 10.0, "payoff": {"kind": "identity"},
                      "price_window": 16},
        }
    raise ModelError(f"unknown builtin configuration {name!r}")
