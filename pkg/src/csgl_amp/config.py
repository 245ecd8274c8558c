"""Experiment configuration: flat key = value files.

One `key = value` per line, `#` starts a comment, lists are
comma-separated. Keys are fail-closed: anything unrecognized is an
error, so a typo cannot silently fall back to a default. Per-solver
settings use a dotted prefix matching an entry of `solvers`, e.g.
`csgl.alpha1 = 1.1`.
"""

import hashlib
import math
from dataclasses import dataclass

from .otfs import ChannelProfile, DdGrid, VEH_A_DELAY_BINS, VEH_A_POWERS_DB
from .solvers import OstConfig, SolverConfig

__all__ = [
    "ExperimentConfig",
    "FistaSettings",
    "parse_config",
    "parse_config_text",
    "serialize_config",
    "config_digest",
]

AMP_SOLVERS = ("csgl", "cl", "cgl")
KNOWN_SOLVERS = AMP_SOLVERS + ("ost", "fista")


@dataclass(frozen=True)
class FistaSettings:
    """Penalty weights for the FISTA reference, in noise-scaled units:
    lambda1 = lambda1_scale * sigma_n, lambda2 = lambda2_scale * sigma_n * sqrt(p).
    """

    lambda1_scale: float = 1.4
    lambda2_scale: float = 0.8
    iters: int = 500


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int
    trials: int
    snr_db: tuple
    solver_names: tuple
    solver_cfgs: dict
    num_groups: int
    num_active: int
    chunk: int = 50
    grid: DdGrid = None
    profile: ChannelProfile = None
    n_rows: int = None
    group_size: int = None
    nonzeros_per_group: int = 3
    target_pmd: float = 0.01
    delta_grid: tuple = None
    rho_grid: tuple = None

    def __post_init__(self):
        if self.scenario not in ("otfs", "gaussian"):
            raise ValueError(f"scenario must be otfs or gaussian, got {self.scenario!r}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not self.snr_db:
            raise ValueError("snr_db must be nonempty")
        if not self.solver_names:
            raise ValueError("solvers must be nonempty")
        if not 0 <= self.num_active <= self.num_groups:
            raise ValueError(
                f"need 0 <= k <= g, got k={self.num_active}, g={self.num_groups}"
            )
        if self.scenario == "otfs":
            if self.grid is None:
                raise ValueError("otfs scenario requires grid parameters")
            self.group_size = self.grid.size
            self.n_rows = self.grid.length
        else:
            if self.n_rows is None or self.group_size is None:
                raise ValueError("gaussian scenario requires n and p")
            if not 1 <= self.nonzeros_per_group <= self.group_size:
                raise ValueError("nonzeros_per_group must be in [1, p]")

    @property
    def total_cols(self):
        return self.num_groups * self.group_size

    @property
    def measurement_ratio(self):
        return self.n_rows / self.total_cols

    @property
    def rho_g(self):
        return self.num_active / self.num_groups


_TOP_KEYS = {
    "scenario": str,
    "seed": int,
    "trials": int,
    "chunk": int,
    "snr_db": "float_list",
    "solvers": "str_list",
    "g": int,
    "k": int,
    "m_dd": int,
    "n_dd": int,
    "k_tau": int,
    "k_nu": int,
    "n": int,
    "p": int,
    "nonzeros_per_group": int,
    "target_pmd": float,
    "delta_grid": "float_list",
    "rho_grid": "float_list",
    "profile.fading": str,
    "profile.powers_db": "float_list",
    "profile.delay_bins": "int_list",
}

_SOLVER_KEYS = {
    "alpha1": float,
    "alpha2": float,
    "max_iters": int,
    "stop_tol": float,
    "onsager_form": str,
    # ost
    "mode": str,
    "p_fa": float,
    "calibration_draws": int,
    "top_k": int,
    # fista
    "lambda1_scale": float,
    "lambda2_scale": float,
    "iters": int,
}

_AMP_FIELDS = ("alpha1", "alpha2", "max_iters", "stop_tol", "onsager_form")
_OST_FIELDS = ("mode", "p_fa", "calibration_draws", "top_k")
_FISTA_FIELDS = ("lambda1_scale", "lambda2_scale", "iters")


def _convert(key, kind, raw):
    try:
        if kind is str:
            return raw
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "float_list":
            return tuple(float(v) for v in raw.split(",") if v.strip() != "")
        if kind == "int_list":
            return tuple(int(v) for v in raw.split(",") if v.strip() != "")
        if kind == "str_list":
            return tuple(v.strip() for v in raw.split(",") if v.strip() != "")
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r}") from exc
    raise AssertionError(kind)


def parse_config_text(text):
    """Parse config text into an ExperimentConfig (see parse_config)."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in raw:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    solvers = _convert("solvers", "str_list", raw.get("solvers", ""))
    values = {}
    solver_raw = {name: {} for name in solvers}
    for key, value in raw.items():
        if key in _TOP_KEYS:
            values[key] = _convert(key, _TOP_KEYS[key], value)
            continue
        prefix, _, sub = key.partition(".")
        if prefix in solver_raw and sub in _SOLVER_KEYS:
            solver_raw[prefix][sub] = _convert(key, _SOLVER_KEYS[sub], value)
            continue
        if prefix in KNOWN_SOLVERS and sub in _SOLVER_KEYS:
            raise ValueError(
                f"key {key!r} configures solver {prefix!r} which is not in solvers"
            )
        raise ValueError(f"unknown config key {key!r}")

    for req in ("scenario", "seed", "trials", "snr_db", "solvers", "g", "k"):
        if req not in raw:
            raise ValueError(f"missing required config key {req!r}")

    for name in solvers:
        if name not in KNOWN_SOLVERS:
            raise ValueError(f"unknown solver {name!r}; known: {KNOWN_SOLVERS}")

    scenario = values["scenario"]
    grid = None
    profile = None
    if scenario == "otfs":
        grid = DdGrid(
            m_dd=values.get("m_dd", 31),
            n_dd=values.get("n_dd", 37),
            k_tau=values.get("k_tau", 3),
            k_nu=values.get("k_nu", 2),
        )
        powers_db = values.get("profile.powers_db", VEH_A_POWERS_DB)
        delay_bins = values.get("profile.delay_bins", VEH_A_DELAY_BINS)
        profile = ChannelProfile(
            tap_count=len(powers_db),
            relative_powers=tuple(10.0 ** (db / 10.0) for db in powers_db),
            delay_bin_assignment=delay_bins,
            fading=values.get("profile.fading", "constant"),
        )

    solver_cfgs = {}
    for name in solvers:
        params = solver_raw[name]
        if name in AMP_SOLVERS:
            bad = set(params) - set(_AMP_FIELDS)
            if bad:
                raise ValueError(f"keys {sorted(bad)} not valid for solver {name!r}")
            solver_cfgs[name] = SolverConfig(variant=name, **params)
        elif name == "ost":
            bad = set(params) - set(_OST_FIELDS)
            if bad:
                raise ValueError(f"keys {sorted(bad)} not valid for solver 'ost'")
            solver_cfgs[name] = OstConfig(**params)
        else:
            bad = set(params) - set(_FISTA_FIELDS)
            if bad:
                raise ValueError(f"keys {sorted(bad)} not valid for solver 'fista'")
            solver_cfgs[name] = FistaSettings(**params)

    return ExperimentConfig(
        scenario=scenario,
        seed=values["seed"],
        trials=values["trials"],
        chunk=values.get("chunk", 50),
        snr_db=values["snr_db"],
        solver_names=solvers,
        solver_cfgs=solver_cfgs,
        num_groups=values["g"],
        num_active=values["k"],
        grid=grid,
        profile=profile,
        n_rows=values.get("n"),
        group_size=values.get("p"),
        nonzeros_per_group=values.get("nonzeros_per_group", 3),
        target_pmd=values.get("target_pmd", 0.01),
        delta_grid=values.get("delta_grid"),
        rho_grid=values.get("rho_grid"),
    )


def parse_config(path):
    """Load and validate an experiment config file."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def serialize_config(config):
    """Canonical text form; parse(serialize(c)) == c."""
    lines = [
        f"scenario = {config.scenario}",
        f"seed = {config.seed}",
        f"trials = {config.trials}",
        f"chunk = {config.chunk}",
        f"snr_db = {','.join(_fmt(v) for v in config.snr_db)}",
        f"solvers = {','.join(config.solver_names)}",
        f"g = {config.num_groups}",
        f"k = {config.num_active}",
    ]
    if config.scenario == "otfs":
        g = config.grid
        lines += [
            f"m_dd = {g.m_dd}",
            f"n_dd = {g.n_dd}",
            f"k_tau = {g.k_tau}",
            f"k_nu = {g.k_nu}",
            f"profile.fading = {config.profile.fading}",
        ]
        powers_db = tuple(10.0 * math.log10(p) for p in config.profile.relative_powers)
        # powers are stored normalized; re-normalization on parse is idempotent
        lines.append("profile.powers_db = " + ",".join(_fmt(v) for v in powers_db))
        lines.append(
            "profile.delay_bins = "
            + ",".join(str(b) for b in config.profile.delay_bin_assignment)
        )
    else:
        lines += [
            f"n = {config.n_rows}",
            f"p = {config.group_size}",
            f"nonzeros_per_group = {config.nonzeros_per_group}",
        ]
    lines.append(f"target_pmd = {_fmt(config.target_pmd)}")
    if config.delta_grid:
        lines.append("delta_grid = " + ",".join(_fmt(v) for v in config.delta_grid))
    if config.rho_grid:
        lines.append("rho_grid = " + ",".join(_fmt(v) for v in config.rho_grid))
    for name in config.solver_names:
        cfg = config.solver_cfgs[name]
        if name in AMP_SOLVERS:
            lines += [
                f"{name}.alpha1 = {_fmt(cfg.alpha1)}",
                f"{name}.alpha2 = {_fmt(cfg.alpha2)}",
                f"{name}.max_iters = {cfg.max_iters}",
                f"{name}.stop_tol = {_fmt(cfg.stop_tol)}",
                f"{name}.onsager_form = {cfg.onsager_form}",
            ]
        elif name == "ost":
            lines += [
                f"ost.mode = {cfg.mode}",
                f"ost.p_fa = {_fmt(cfg.p_fa)}",
                f"ost.calibration_draws = {cfg.calibration_draws}",
            ]
            if cfg.top_k is not None:
                lines.append(f"ost.top_k = {cfg.top_k}")
        else:
            lines += [
                f"fista.lambda1_scale = {_fmt(cfg.lambda1_scale)}",
                f"fista.lambda2_scale = {_fmt(cfg.lambda2_scale)}",
                f"fista.iters = {cfg.iters}",
            ]
    return "\n".join(lines) + "\n"


def config_digest(config):
    """sha256 of the canonical serialization; changes iff any resolved
    config value changes."""
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()
