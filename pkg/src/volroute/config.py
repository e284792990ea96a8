"""Flat key-value run configuration: parsing, defaults, validation, hashing.

Format: one `key = value` per line, `#` comments, blank lines ignored.
Unknown keys are rejected at startup. Two dynamic families exist:
`bindings.<model>` (native | ewma | ewma:<lambda> | external:<path>) and
`gate.weight.<feature>` (signed stress weight, default +1). Environment
variables named VOLROUTE_<KEY> with dots replaced by underscores override
static keys. The canonical echo of every effective entry (defaults
included) is hashed and embedded in all outputs.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

from .backtest import AblationFlags, PipelineParams, WalkForwardConfig
from .combiner import GateParams, SpecialistPools
from .errors import ConfigError
from .routing import ThresholdParams
from .scoring import KernelParams, LossParams
from .specialists import ModelBinding, parse_binding
from .synthetic import SyntheticParams

_DEFAULTS: dict[str, str] = {
    "assets": "",
    "data.ohlc_dir": "",
    "data.macro_file": "",
    "data.vix_column": "vix_like",
    "data.state_features": "",
    "data.log_features": "",
    "variance_floor": "1e-12",
    "models": "FIGARCH,GARCH-t,GRU,HAR-RV,XGBoost",
    "loss.lambda_under": "1.0",
    "kernel.gamma_time": "0.015873015873015872",  # 1/63
    "kernel.gamma_reg": "2.0",
    "kernel.history_len": "252",
    "routing.alpha": "0.10",
    "routing.eta_cap": "0.80",
    "routing.n0": "63.0",
    "routing.window": "252",
    "routing.min_observations": "20",
    "gate.c0": "0.0",
    "gate.rho": "0.5",
    "gate.kappa": "0.25",
    "gate.c": "0.5",
    "gate.b": "0.1",
    "gate.p_floor": "0.65",
    "gate.d_floor": "0.20",
    "gate.epsilon": "1e-12",
    "gate.winsor_low": "0.10",
    "gate.winsor_high": "0.90",
    "gate.stress_quantile": "0.75",
    "pool.calm": "GRU,HAR-RV,XGBoost",
    "pool.stress": "GARCH-t,FIGARCH,HAR-RV",
    "walk.min_history": "504",
    "walk.train_window": "504",
    "walk.slow_retrain_every": "21",
    "walk.score_window": "252",
    "walk.benchmark_window": "252",
    "walk.static_selection_window": "252",
    "walk.vix_threshold": "20.0",
    "walk.vix_low_model": "GRU",
    "figarch.truncation_lags": "1000",
    "ablation.no_risk_sensitive": "false",
    "ablation.no_high_tilt": "false",
    "ablation.no_har_floor": "false",
    "seed": "0",
    "runtime.workers": "0",
    "sim.days": "2600",
    "sim.assets": "6",
    "sim.p_calm_stay": "0.99",
    "sim.p_stress_stay": "0.97",
    "sim.calm_vol": "0.10",
    "sim.stress_vol": "0.40",
    "sim.nu": "8.0",
}

_DYNAMIC_PREFIXES = ("bindings.", "gate.weight.")

_ENV_PREFIX = "VOLROUTE_"


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc


def _parse_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


@dataclass
class RunConfig:
    """Validated run configuration plus its canonical echo."""

    entries: dict[str, str] = field(default_factory=dict)

    # -- raw access -----------------------------------------------------
    def get(self, key: str) -> str:
        return self.entries[key]

    def get_float(self, key: str) -> float:
        return _parse_float(key, self.entries[key])

    def get_int(self, key: str) -> int:
        return _parse_int(key, self.entries[key])

    def get_bool(self, key: str) -> bool:
        return _parse_bool(key, self.entries[key])

    def get_list(self, key: str) -> list[str]:
        return _parse_list(self.entries[key])

    # -- typed views ----------------------------------------------------
    @property
    def assets(self) -> list[str]:
        return self.get_list("assets")

    @property
    def models(self) -> list[str]:
        return sorted(set(self.get_list("models")))

    @property
    def seed(self) -> int:
        return self.get_int("seed")

    @property
    def workers(self) -> int:
        return self.get_int("runtime.workers")

    @property
    def variance_floor(self) -> float:
        return self.get_float("variance_floor")

    def loss_params(self) -> LossParams:
        return LossParams(lambda_under=self.get_float("loss.lambda_under"))

    def effective_loss_params(self) -> LossParams:
        """Loss parameters as the run applies them (ablation-aware)."""
        if self.ablation().no_risk_sensitive:
            return LossParams(lambda_under=0.0)
        return self.loss_params()

    def kernel_params(self) -> KernelParams:
        return KernelParams(
            gamma_time=self.get_float("kernel.gamma_time"),
            gamma_reg=self.get_float("kernel.gamma_reg"),
            history_len=self.get_int("kernel.history_len"),
        )

    def threshold_params(self) -> ThresholdParams:
        return ThresholdParams(
            alpha=self.get_float("routing.alpha"),
            eta_cap=self.get_float("routing.eta_cap"),
            n0=self.get_float("routing.n0"),
            window=self.get_int("routing.window"),
            min_observations=self.get_int("routing.min_observations"),
        )

    def walk_config(self) -> WalkForwardConfig:
        return WalkForwardConfig(
            min_history=self.get_int("walk.min_history"),
            train_window=self.get_int("walk.train_window"),
            slow_retrain_every=self.get_int("walk.slow_retrain_every"),
            score_window=self.get_int("walk.score_window"),
            benchmark_window=self.get_int("walk.benchmark_window"),
            static_selection_window=self.get_int("walk.static_selection_window"),
            vix_threshold=self.get_float("walk.vix_threshold"),
            vix_low_model=self.get("walk.vix_low_model"),
        )

    def pools(self) -> SpecialistPools:
        return SpecialistPools(
            calm=tuple(self.get_list("pool.calm")),
            stress=tuple(self.get_list("pool.stress")),
        )

    def ablation(self) -> AblationFlags:
        return AblationFlags(
            no_risk_sensitive=self.get_bool("ablation.no_risk_sensitive"),
            no_high_tilt=self.get_bool("ablation.no_high_tilt"),
            no_har_floor=self.get_bool("ablation.no_har_floor"),
        )

    def gate_params(self, state_names: list[str]) -> GateParams:
        weights = tuple(
            self.get_float(f"gate.weight.{name}")
            if f"gate.weight.{name}" in self.entries
            else 1.0
            for name in state_names
        )
        return GateParams(
            alpha_weights=weights,
            c0=self.get_float("gate.c0"),
            rho=self.get_float("gate.rho"),
            kappa=self.get_float("gate.kappa"),
            c=self.get_float("gate.c"),
            b=self.get_float("gate.b"),
            p_floor=self.get_float("gate.p_floor"),
            d_floor=self.get_float("gate.d_floor"),
            epsilon=self.get_float("gate.epsilon"),
            winsor_low=self.get_float("gate.winsor_low"),
            winsor_high=self.get_float("gate.winsor_high"),
            stress_quantile=self.get_float("gate.stress_quantile"),
        )

    def bindings(self) -> dict[str, ModelBinding]:
        out = {}
        for name in self.models:
            key = f"bindings.{name}"
            if key in self.entries:
                out[name] = parse_binding(name, self.entries[key])
            elif name in ("HAR-RV", "GARCH-t", "FIGARCH", "EWMA"):
                out[name] = parse_binding(name, "native")
            else:
                out[name] = parse_binding(name, "ewma")
        return out

    def synthetic_params(self) -> SyntheticParams:
        return SyntheticParams(
            days=self.get_int("sim.days"),
            p_calm_stay=self.get_float("sim.p_calm_stay"),
            p_stress_stay=self.get_float("sim.p_stress_stay"),
            calm_ann_vol=self.get_float("sim.calm_vol"),
            stress_ann_vol=self.get_float("sim.stress_vol"),
            nu=self.get_float("sim.nu"),
        )

    def pipeline_params(self, state_names: list[str], external_streams=None) -> PipelineParams:
        return PipelineParams(
            bindings=self.bindings(),
            pools=self.pools(),
            walk=self.walk_config(),
            loss=self.loss_params(),
            kernel=self.kernel_params(),
            threshold=self.threshold_params(),
            gate=self.gate_params(state_names),
            ablation=self.ablation(),
            variance_floor=self.variance_floor,
            figarch_truncation=self.get_int("figarch.truncation_lags"),
            external_streams=external_streams or {},
        )

    # -- provenance -----------------------------------------------------
    def canonical_echo(self) -> str:
        return "\n".join(f"{k} = {self.entries[k]}" for k in sorted(self.entries))

    def config_hash(self) -> str:
        # runtime.* keys (worker counts etc.) cannot change results, so they
        # stay out of the hash: identical science -> identical outputs
        hashed = "\n".join(
            f"{k} = {self.entries[k]}"
            for k in sorted(self.entries)
            if not k.startswith("runtime.")
        )
        return hashlib.sha256(hashed.encode()).hexdigest()[:16]

    # -- validation -----------------------------------------------------
    def validate(self) -> None:
        def require(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        require(0.0 < self.get_float("routing.alpha") < 1.0,
                f"routing.alpha must be in (0,1), got {self.get('routing.alpha')}")
        require(0.0 <= self.get_float("routing.eta_cap") <= 1.0,
                "routing.eta_cap must be in [0,1]")
        require(self.get_float("routing.n0") > 0, "routing.n0 must be positive")
        require(self.get_float("loss.lambda_under") > 0,
                "loss.lambda_under must be positive (use ablation.no_risk_sensitive to drop it)")
        require(self.get_float("kernel.gamma_time") > 0, "kernel.gamma_time must be positive")
        require(self.get_float("kernel.gamma_reg") > 0, "kernel.gamma_reg must be positive")
        require(self.get_float("variance_floor") > 0, "variance_floor must be positive")
        require(self.get_float("gate.b") > 0, "gate.b must be positive")
        for key in ("gate.rho", "gate.kappa"):
            require(0.0 <= self.get_float(key) <= 1.0, f"{key} must be in [0,1]")
        lo, hi = self.get_float("gate.winsor_low"), self.get_float("gate.winsor_high")
        require(0.0 < lo < hi < 1.0, "winsor bounds must satisfy 0 < low < high < 1")
        require(0.0 < self.get_float("gate.stress_quantile") < 1.0,
                "gate.stress_quantile must be in (0,1)")
        require(self.get_int("figarch.truncation_lags") >= 1,
                "figarch.truncation_lags must be >= 1")

        models = self.models
        require(bool(models), "models must be nonempty")
        require("HAR-RV" in models, "models must include HAR-RV")
        for pool_key in ("pool.calm", "pool.stress"):
            for name in self.get_list(pool_key):
                require(name in models, f"{pool_key} references unknown model {name!r}")
        require(self.get("walk.vix_low_model") in models,
                f"walk.vix_low_model {self.get('walk.vix_low_model')!r} not in models")
        self.walk_config().validate()
        for name in models:
            binding = self.bindings()[name]
            if binding.kind == "har":
                require(name == "HAR-RV", f"{name}: only HAR-RV may bind to the HAR model")

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        merged = dict(self.entries)
        for key, value in overrides.items():
            _check_known(key)
            merged[key] = value
        cfg = RunConfig(entries=merged)
        cfg.validate()
        return cfg


def _check_known(key: str) -> None:
    if key in _DEFAULTS or any(key.startswith(p) and len(key) > len(p) for p in _DYNAMIC_PREFIXES):
        return
    raise ConfigError(f"unknown config key {key!r}")


def _apply_env(entries: dict[str, str], env: dict[str, str]) -> None:
    lookup = {k.replace(".", "_").upper(): k for k in _DEFAULTS}
    for name, value in env.items():
        if not name.startswith(_ENV_PREFIX):
            continue
        key = lookup.get(name[len(_ENV_PREFIX):])
        if key is not None:
            entries[key] = value


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        _check_known(key)
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(
    path: str | os.PathLike | None = None,
    overrides: dict[str, str] | None = None,
    env: dict[str, str] | None = None,
) -> RunConfig:
    """Defaults -> file -> environment -> explicit overrides, then validate."""
    entries = dict(_DEFAULTS)
    if path is not None:
        with open(path, encoding="utf-8") as handle:
            entries.update(parse_config_text(handle.read()))
    _apply_env(entries, dict(os.environ) if env is None else env)
    for key, value in (overrides or {}).items():
        _check_known(key)
        entries[key] = value
    cfg = RunConfig(entries=entries)
    cfg.validate()
    return cfg
