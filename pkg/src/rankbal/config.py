"""Experiment configuration: parsing, validation and resolved defaults.

Configs are YAML (or JSON) mappings.  A manifest written by ``run`` is also
accepted; its ``config`` section is used.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .model import (
    DiffusionParams,
    InitialConditionSpec,
    ModelParams,
    ServiceLaw,
    ValidationError,
    diffusion_params,
    poc_probabilities,
)
from .rng import check_seed
from .sde import TieRule

KINDS = ("queue", "sde", "convergence", "uniqueness", "occupation", "idle")
NEEDS_MODEL = ("queue", "convergence", "idle")
NEEDS_N = ("queue", "convergence", "idle")
NEEDS_DT = ("sde", "convergence", "uniqueness", "occupation", "idle")

DEFAULT_THRESHOLDS = {
    "ks": 0.061,
    "gap": 0.05,
    "occupation_fraction": 0.01,
    "idle": 0.05,
    "martingale_se": 3.0,
}


class ConfigParseError(ValueError):
    """The config file could not be read or is not a mapping."""


def load_raw(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigParseError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigParseError(f"{path}: top level must be a mapping")
    if "config" in doc and "outputs" in doc:
        doc = doc["config"]
        if not isinstance(doc, dict):
            raise ConfigParseError(f"{path}: manifest config must be a mapping")
    return doc


def _number(raw, key, where, kind=float, required=True, default=None):
    if key not in raw or raw[key] is None:
        if required:
            raise ValidationError(f"{where}{key}", "missing")
        return default
    val = raw[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ValidationError(f"{where}{key}", f"expected a number, got {val!r}")
    if kind is int and int(val) != val:
        raise ValidationError(f"{where}{key}", "expected an integer")
    return kind(val)


def _vector(raw, key, where, required=True, default=None):
    if key not in raw or raw[key] is None:
        if required:
            raise ValidationError(f"{where}{key}", "missing")
        return default
    val = raw[key]
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return [float(val)]
    if not isinstance(val, list):
        raise ValidationError(f"{where}{key}", "expected a list of numbers")
    out = []
    for k, v in enumerate(val):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValidationError(f"{where}{key}[{k}]", f"expected a finite number, got {v!r}")
        out.append(float(v))
    return out


def _section(raw, key):
    val = raw.get(key)
    if val is None:
        return {}
    if not isinstance(val, dict):
        raise ValidationError(key, "expected a mapping")
    return val


def _resolve_model(raw: dict) -> dict:
    w = "model."
    lam = _vector(raw, "lam", w)
    N = len(lam)
    mu = _vector(raw, "mu", w, required=False, default=lam)
    lam_hat = _vector(raw, "lam_hat", w, required=False, default=[0.0] * N)
    mu_hat = _vector(raw, "mu_hat", w, required=False, default=[0.0] * N)
    for name, vec in (("mu", mu), ("lam_hat", lam_hat), ("mu_hat", mu_hat)):
        if len(vec) != N:
            raise ValidationError(f"{w}{name}", f"expected length {N}")
    lam0 = _number(raw, "lam0", w)
    routing = raw.get("routing")
    if routing is None:
        raise ValidationError(f"{w}routing", "missing (give p or ell)")
    if not isinstance(routing, dict):
        raise ValidationError(f"{w}routing", "expected a mapping")
    if "p" in routing:
        p = _vector(routing, "p", f"{w}routing.")
        routing_out = {"p": p}
    else:
        ell = _number(routing, "ell", f"{w}routing.", kind=int)
        repl = routing.get("with_replacement", True)
        if not isinstance(repl, bool):
            raise ValidationError(f"{w}routing.with_replacement", "expected true/false")
        p = poc_probabilities(N, ell, repl).tolist()
        routing_out = {"ell": ell, "with_replacement": repl}
    service = raw.get("service", {"family": "exponential"})
    laws_raw = service if isinstance(service, list) else [service] * N
    if len(laws_raw) != N:
        raise ValidationError(f"{w}service", f"expected {N} laws")
    laws = []
    for k, law in enumerate(laws_raw):
        where = f"{w}service" + (f"[{k}]" if isinstance(service, list) else "")
        if not isinstance(law, dict) or "family" not in law:
            raise ValidationError(where, "expected a mapping with a family")
        family = law["family"]
        default_shape = {"exponential": 1.0, "erlang": 2.0}.get(family)
        shape = _number(law, "shape", f"{where}.", required=default_shape is None, default=default_shape)
        try:
            laws.append(ServiceLaw(family, shape).to_dict())
        except ValidationError as exc:
            raise ValidationError(where, str(exc)) from None
    ic = _section(raw, "ic")
    ic_out = {
        "regime": ic.get("regime", "IC0"),
        "x0": _vector(ic, "x0", f"{w}ic.", required=False, default=[0.0] * N),
        "alpha_exponent": _number(ic, "alpha_exponent", f"{w}ic.", required=False, default=0.75),
        "counts": _vector(ic, "counts", f"{w}ic.", required=False),
        "z0": _vector(ic, "z0", f"{w}ic.", required=False),
    }
    if ic_out["counts"] is not None:
        ic_out["counts"] = [int(c) if c == int(c) else c for c in ic_out["counts"]]
    return {
        "lam": lam,
        "mu": mu,
        "lam_hat": lam_hat,
        "mu_hat": mu_hat,
        "lam0": lam0,
        "routing": routing_out,
        "p": p,
        "service": laws,
        "ic": ic_out,
    }


def _build_model(model: dict, n: int) -> ModelParams:
    try:
        ic = InitialConditionSpec(**model["ic"])
        return ModelParams(
            n,
            model["lam"],
            model["mu"],
            model["lam0"],
            model["p"],
            model["lam_hat"],
            model["mu_hat"],
            tuple(ServiceLaw(**law) for law in model["service"]),
            ic,
        )
    except ValidationError as exc:
        raise ValidationError(f"model.{exc.field}", str(exc).split(": ", 1)[-1]) from None


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    replications: int
    horizon: float
    n_ladder: tuple
    dt_ladder: tuple
    model: dict | None
    diffusion: dict | None
    sde: dict
    coupling: dict
    occupation: dict
    thresholds: dict
    output: str | None = None

    def model_params(self, n: int) -> ModelParams:
        if self.model is None:
            raise ValidationError("model", "this experiment needs a model section")
        return _build_model(self.model, n)

    def diffusion_params(self) -> DiffusionParams:
        d = self.diffusion
        return DiffusionParams(d["b"], d["m"], d["sigma"], d["x0"])

    @property
    def tie_rule(self) -> TieRule:
        return TieRule.parse(self.sde["tie_rule"])

    def to_dict(self) -> dict:
        """Fully resolved config; excludes the output location."""
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "replications": self.replications,
            "horizon": self.horizon,
            "n_ladder": list(self.n_ladder),
            "dt_ladder": list(self.dt_ladder),
            "model": self.model,
            "diffusion": self.diffusion,
            "sde": self.sde,
            "coupling": self.coupling,
            "occupation": self.occupation,
            "thresholds": self.thresholds,
        }


def validate(raw: dict, seed_override=None) -> ExperimentConfig:
    """Check a raw config and fill in every default."""
    kind = raw.get("experiment")
    if kind not in KINDS:
        raise ValidationError("experiment", f"expected one of {', '.join(KINDS)}, got {kind!r}")
    seed = seed_override if seed_override is not None else raw.get("seed")
    if seed is None:
        raise ValidationError("seed", "missing")
    try:
        seed = check_seed(seed)
    except (TypeError, ValueError) as exc:
        raise ValidationError("seed", str(exc)) from None
    reps = raw.get("replications")
    if reps is None or isinstance(reps, bool) or not isinstance(reps, int) or reps < 1:
        raise ValidationError("replications", f"expected a positive integer, got {reps!r}")
    horizon = _number(raw, "horizon", "", required=False, default=1.0)
    if not horizon > 0 or not math.isfinite(horizon):
        raise ValidationError("horizon", "must be positive and finite")

    n_ladder = _vector(raw, "n_ladder", "", required=kind in NEEDS_N, default=[])
    for k, n in enumerate(n_ladder):
        if n != int(n) or n < 1:
            raise ValidationError(f"n_ladder[{k}]", "expected a positive integer")
    n_ladder = [int(n) for n in n_ladder]
    if kind in NEEDS_N and not n_ladder:
        raise ValidationError("n_ladder", "must be nonempty")
    if any(b <= a for a, b in zip(n_ladder, n_ladder[1:])):
        raise ValidationError("n_ladder", "must be strictly increasing")
    dt_ladder = _vector(raw, "dt_ladder", "", required=kind in NEEDS_DT, default=[])
    if kind in NEEDS_DT and not dt_ladder:
        raise ValidationError("dt_ladder", "must be nonempty")
    for k, dt in enumerate(dt_ladder):
        if not dt > 0:
            raise ValidationError(f"dt_ladder[{k}]", "must be positive")
        steps = round(horizon / dt)
        if steps < 1 or abs(steps * dt - horizon) > 1e-9 * horizon:
            raise ValidationError(f"dt_ladder[{k}]", f"does not divide horizon {horizon}")
    if any(b >= a for a, b in zip(dt_ladder, dt_ladder[1:])):
        raise ValidationError("dt_ladder", "must be strictly decreasing (increasingly fine)")

    model = None
    if raw.get("model") is not None:
        model = _resolve_model(_section(raw, "model"))
        _build_model(model, n_ladder[0] if n_ladder else 1)
    elif kind in NEEDS_MODEL:
        raise ValidationError("model", "missing")
    if model is not None:
        regime = model["ic"]["regime"]
        if kind == "convergence" and regime != "IC0":
            raise ValidationError("model.ic.regime", "convergence runs need IC0")
        if kind == "idle" and regime != "ICalpha":
            raise ValidationError("model.ic.regime", "idle runs need ICalpha")

    diff_raw = raw.get("diffusion")
    if diff_raw is not None:
        diff_raw = _section(raw, "diffusion")
        b = _vector(diff_raw, "b", "diffusion.")
        N = len(b)
        diffusion = {
            "b": b,
            "m": _vector(diff_raw, "m", "diffusion.", required=False, default=[0.0] * N),
            "sigma": _vector(diff_raw, "sigma", "diffusion.", required=False, default=[1.0] * N),
            "x0": _vector(diff_raw, "x0", "diffusion.", required=False, default=[0.0] * N),
        }
    elif model is not None:
        dp = diffusion_params(_build_model(model, 1))
        diffusion = {k: (None if v is None else list(map(float, v))) for k, v in dp.to_dict().items()}
    else:
        raise ValidationError("diffusion", "missing (give diffusion or model)")
    try:
        dp = DiffusionParams(diffusion["b"], diffusion["m"], diffusion["sigma"], diffusion["x0"])
        if any(y > x for x, y in zip(dp.b, dp.b[1:])):
            raise ValidationError("b", "must be nonincreasing")
    except ValidationError as exc:
        raise ValidationError(f"diffusion.{exc.field}", str(exc).split(": ", 1)[-1]) from None

    sde_raw = _section(raw, "sde")
    default_reflected = not (model is not None and model["ic"]["regime"] == "ICalpha")
    sde = {
        "tie_rule": str(sde_raw.get("tie_rule", "block-average")),
        "reflected": sde_raw.get("reflected", default_reflected),
    }
    if not isinstance(sde["reflected"], bool):
        raise ValidationError("sde.reflected", "expected true/false")
    try:
        TieRule.parse(sde["tie_rule"])
    except (ValidationError, ValueError) as exc:
        raise ValidationError("sde.tie_rule", str(exc)) from None
    if sde["reflected"] and any(x < 0 for x in diffusion["x0"]):
        raise ValidationError("diffusion.x0", "reflected runs need x0 >= 0")

    cp_raw = _section(raw, "coupling")
    coupling = {
        "rule_a": str(cp_raw.get("rule_a", "index-tiebreak")),
        "rule_b": str(cp_raw.get("rule_b", "block-average")),
    }
    for key in ("rule_a", "rule_b"):
        try:
            TieRule.parse(coupling[key])
        except (ValidationError, ValueError) as exc:
            raise ValidationError(f"coupling.{key}", str(exc)) from None

    occ_raw = _section(raw, "occupation")
    eps = _vector(occ_raw, "eps", "occupation.", required=False, default=[0.1, 0.03, 0.01, 0.003])
    if not eps or any(e <= 0 for e in eps):
        raise ValidationError("occupation.eps", "must be a nonempty list of positive numbers")
    pair = occ_raw.get("pair", [1, 2])
    N = len(diffusion["b"])
    if (
        not isinstance(pair, list)
        or len(pair) != 2
        or pair[0] == pair[1]
        or any(not isinstance(q, int) or not 1 <= q <= N for q in pair)
    ):
        raise ValidationError("occupation.pair", f"expected two distinct server labels in 1..{N}")
    occupation = {"eps": eps, "pair": list(pair)}

    thr_raw = _section(raw, "thresholds")
    thresholds = dict(DEFAULT_THRESHOLDS)
    for key in thr_raw:
        if key not in thresholds:
            raise ValidationError(f"thresholds.{key}", "unknown threshold")
        thresholds[key] = _number(thr_raw, key, "thresholds.")

    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ValidationError("output", "expected a path string")

    return ExperimentConfig(
        kind, seed, reps, horizon, tuple(n_ladder), tuple(dt_ladder),
        model, diffusion, sde, coupling, occupation, thresholds, output,
    )


def load(path, seed_override=None) -> ExperimentConfig:
    return validate(load_raw(path), seed_override)
