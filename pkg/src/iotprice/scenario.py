"""Network scenario: topology, SCMA codebook maps, channels and economic constants.

All per-entity arrays use *global* indices: BSs are numbered ``0..B-1`` across
InPs (InP 0 owns the first ``B_0`` of them), sensors ``0..S-1`` across BSs and
users ``0..U-1``.  Codebook and subcarrier axes are padded to the largest InP;
padded entries carry zero incidence.
"""
from __future__ import annotations

import configparser
import itertools
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class CodebookCapacityError(ValueError):
    pass


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Topology:
    num_inps: int
    bs_per_inp: tuple[int, ...]
    sensors_per_bs: tuple[int, ...]          # one entry per global BS
    isp_users: tuple[tuple[int, ...], ...]   # K_v, one tuple per ISP
    dl_subcarriers: tuple[int, ...]          # N_i
    ul_subcarriers: tuple[int, ...]          # M_i
    dl_codebooks: tuple[int, ...]            # C_i
    ul_codebooks: tuple[int, ...]            # C'_i
    reuse_limit: int                         # K
    num_users: int

    @property
    def num_isps(self) -> int:
        return len(self.isp_users)

    @property
    def users_per_isp(self) -> tuple[int, ...]:
        return tuple(len(k) for k in self.isp_users)

    @property
    def num_bs(self) -> int:
        return int(sum(self.bs_per_inp))

    @property
    def num_sensors(self) -> int:
        return int(sum(self.sensors_per_bs))

    @property
    def bs_inp(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_inps), self.bs_per_inp)

    @property
    def sensor_bs(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_bs), self.sensors_per_bs)

    @property
    def sensor_inp(self) -> np.ndarray:
        return self.bs_inp[self.sensor_bs]

    @property
    def user_isp(self) -> np.ndarray:
        """ISP of every user (first match; see validate_scenario for overlaps)."""
        out = np.full(self.num_users, -1, dtype=int)
        for v, members in enumerate(self.isp_users):
            for u in members:
                if out[u] < 0:
                    out[u] = v
        return out

    @property
    def max_dl_codebooks(self) -> int:
        return max(self.dl_codebooks)

    @property
    def max_ul_codebooks(self) -> int:
        return max(self.ul_codebooks)

    @property
    def max_dl_subcarriers(self) -> int:
        return max(self.dl_subcarriers)

    @property
    def max_ul_subcarriers(self) -> int:
        return max(self.ul_subcarriers)

    def bs_of_inp(self, i: int) -> range:
        start = sum(self.bs_per_inp[:i])
        return range(start, start + self.bs_per_inp[i])

    def dl_valid(self) -> np.ndarray:
        """(B, Cmax) mask of codebooks that exist for each BS's InP."""
        c = np.arange(self.max_dl_codebooks)
        return c[None, :] < np.asarray(self.dl_codebooks)[self.bs_inp][:, None]

    def ul_valid(self) -> np.ndarray:
        """(S, C'max) mask of uplink codebooks available to each sensor."""
        c = np.arange(self.max_ul_codebooks)
        return c[None, :] < np.asarray(self.ul_codebooks)[self.sensor_inp][:, None]


@dataclass(frozen=True)
class CodebookLayout:
    """Single-InP, single-direction codebook table."""
    incidence: np.ndarray   # (C, N) binary
    split: np.ndarray       # (B, N, C), λ fractions


@dataclass(frozen=True)
class CodebookMap:
    dl_incidence: np.ndarray   # q[i, c, n]
    ul_incidence: np.ndarray   # q'[i, c', m]
    dl_split: np.ndarray       # λ[b, n, c]
    ul_split: np.ndarray       # λ'[b, m, c']


@dataclass(frozen=True)
class ChannelState:
    dl_gain: np.ndarray        # h[b, u, n], linear power gain
    ul_gain: np.ndarray        # h'[b, s, m], gain from sensor s to BS b
    noise_dl: np.ndarray       # σ²[b, u, c]
    noise_ul: np.ndarray       # σ'²[s, c'] at the sensor's serving BS
    dl_distance: np.ndarray    # D[b, u] in meters
    ul_distance: np.ndarray    # D[b, s] in meters
    path_loss_exp: float = -3.0


@dataclass(frozen=True)
class Weights:
    isp: np.ndarray    # (V,)
    user: np.ndarray   # (U,)
    inp: np.ndarray    # (I,)
    sens: np.ndarray   # (S,)


@dataclass(frozen=True)
class EconomicConstants:
    power_supplier_price: float          # C^Power,Sup  [money / W]
    regulator_bw_price: np.ndarray       # C^BW_i       [money / Hz], (I,)
    sensor_reservation: np.ndarray       # C^Sens,Reserv_s, (S,)
    user_reservation: np.ndarray         # C^Reserv,User_u, (U,)
    sensing_quality_gain: float          # q in Q_u
    subcarrier_bandwidth: float          # W_S [Hz]
    dl_band: np.ndarray                  # W^Dn_i = N_i W_S
    ul_band: np.ndarray                  # W^Up_i = M_i W_S
    price_scale: float                   # SF
    price_cap: float                     # L_max
    power_caps: np.ndarray               # P^max_b, (B,)
    battery_caps: np.ndarray             # P^Bat_s, (S,)
    min_dl_rate: np.ndarray              # R^min_Dn,v, (V,)
    min_ul_rate: np.ndarray              # R^min_Up,s, (S,)
    weights: Weights


@dataclass(frozen=True)
class Scenario:
    topology: Topology
    codebooks: CodebookMap
    channels: ChannelState
    economics: EconomicConstants
    seed: int = 0

    def with_price_cap(self, l_max: float) -> "Scenario":
        return replace(self, economics=replace(self.economics, price_cap=float(l_max)))

    def with_weights(self, isp=None, user=None, inp=None, sens=None) -> "Scenario":
        w = self.economics.weights
        t = self.topology

        def pick(new, old, n):
            return old if new is None else _frozen(np.broadcast_to(np.asarray(new, float), (n,)))

        w = Weights(isp=pick(isp, w.isp, t.num_isps), user=pick(user, w.user, t.num_users),
                    inp=pick(inp, w.inp, t.num_inps), sens=pick(sens, w.sens, t.num_sensors))
        return replace(self, economics=replace(self.economics, weights=w))


# ---------------------------------------------------------------------------
# codebooks
# ---------------------------------------------------------------------------

def build_codebook_map(N: int, C: int, d_f: int, B: int = 1) -> CodebookLayout:
    """First ``C`` lexicographic ``d_f``-subsets of the ``N`` subcarriers.

    Power is split uniformly (1/d_f) over each codebook's subcarriers and the
    same split is used by all ``B`` BSs.
    """
    if not 1 <= d_f <= N:
        raise ValueError(f"spread d_f={d_f} must satisfy 1 <= d_f <= N={N}")
    if C < 1 or B < 1:
        raise ValueError("C and B must be >= 1")
    capacity = math.comb(N, d_f)
    if C > capacity:
        raise CodebookCapacityError(
            f"{C} codebooks requested but only C({N},{d_f}) = {capacity} distinct subsets exist")
    q = np.zeros((C, N))
    for c, subset in enumerate(itertools.islice(itertools.combinations(range(N), d_f), C)):
        q[c, list(subset)] = 1.0
    lam = np.repeat((q.T / d_f)[None, :, :], B, axis=0)
    return CodebookLayout(incidence=_frozen(q), split=_frozen(lam))


def assemble_codebook_map(topo: Topology, dl_spread, ul_spread) -> CodebookMap:
    """Per-InP layouts padded into one CodebookMap."""
    I = topo.num_inps
    dl_spread = _per(dl_spread, I, "codebooks.dl_spread")
    ul_spread = _per(ul_spread, I, "codebooks.ul_spread")
    Cm, Nm = topo.max_dl_codebooks, topo.max_dl_subcarriers
    Cu, Mm = topo.max_ul_codebooks, topo.max_ul_subcarriers
    q = np.zeros((I, Cm, Nm))
    qu = np.zeros((I, Cu, Mm))
    lam = np.zeros((topo.num_bs, Nm, Cm))
    lamu = np.zeros((topo.num_bs, Mm, Cu))
    for i in range(I):
        bs = list(topo.bs_of_inp(i))
        dl = build_codebook_map(topo.dl_subcarriers[i], topo.dl_codebooks[i], int(dl_spread[i]), len(bs))
        ul = build_codebook_map(topo.ul_subcarriers[i], topo.ul_codebooks[i], int(ul_spread[i]), len(bs))
        C, N = dl.incidence.shape
        q[i, :C, :N] = dl.incidence
        lam[bs, :N, :C] = dl.split
        C, M = ul.incidence.shape
        qu[i, :C, :M] = ul.incidence
        lamu[bs, :M, :C] = ul.split
    return CodebookMap(_frozen(q), _frozen(qu), _frozen(lam), _frozen(lamu))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _per(value, n, name, cast=float):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, n)
    if arr.size != n:
        raise ConfigError(name, f"expected 1 or {n} values, got {arr.size}")
    return arr.astype(cast) if cast is int else arr


@dataclass
class ScenarioConfig:
    """Generator parameters; defaults give two InPs of one macro and one femto BS, three sensors per BS and two ISPs of four users."""

    # [topology]
    num_inps: int = 2
    bs_per_inp: int | list = 2
    sensors_per_bs: int | list = 3
    num_isps: int = 2
    users_per_isp: int | list = 4
    dl_subcarriers: int | list = 4
    ul_subcarriers: int | list = 4
    dl_codebooks: int | list = 6
    ul_codebooks: int | list = 6
    reuse_limit: int = 4
    # [codebooks]
    dl_spread: int | list = 2
    ul_spread: int | list = 2
    # [channels]
    path_loss_exp: float = -3.0
    noise_dl: float = 1e-9
    noise_ul: float = 1e-9
    macro_radius: float = 500.0
    femto_radius: float = 50.0
    inp_spacing: float = 200.0
    femto_offset: float = 250.0
    min_distance: float = 1.0
    # [economics]
    power_supplier_price: float = 1000.0
    regulator_bw_price: float | list = 0.01
    sensor_reservation: float | list = 2000.0
    user_reservation: float | list = 1.0e5
    sensing_quality_gain: float = 1.0
    subcarrier_bandwidth: float = 1.0e5
    price_scale: float = 1.0e5
    price_cap: float = 1.0
    macro_power_cap: float = 50.0
    femto_power_cap: float = 1.0
    battery_cap: float | list = 0.1
    min_dl_rate: float | list = 0.1
    min_ul_rate: float | list = 0.01
    weight_isp: float | list = 1.0
    weight_user: float | list = 1.0
    weight_inp: float | list = 1.0
    weight_sens: float | list = 1.0

    SECTIONS = {
        "topology": ("num_inps", "bs_per_inp", "sensors_per_bs", "num_isps", "users_per_isp",
                     "dl_subcarriers", "ul_subcarriers", "dl_codebooks", "ul_codebooks",
                     "reuse_limit"),
        "codebooks": ("dl_spread", "ul_spread"),
        "channels": ("path_loss_exp", "noise_dl", "noise_ul", "macro_radius", "femto_radius",
                     "inp_spacing", "femto_offset", "min_distance"),
        "economics": ("power_supplier_price", "regulator_bw_price", "sensor_reservation",
                      "user_reservation", "sensing_quality_gain", "subcarrier_bandwidth",
                      "price_scale", "price_cap", "macro_power_cap", "femto_power_cap",
                      "battery_cap", "min_dl_rate", "min_ul_rate", "weight_isp", "weight_user",
                      "weight_inp", "weight_sens"),
    }

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(str(path), f"unparseable config: {exc}") from exc
        return cls.from_parser(parser)

    @classmethod
    def from_string(cls, text: str) -> "ScenarioConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.read_string(text)
        return cls.from_parser(parser)

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> "ScenarioConfig":
        cfg = cls()
        types = {f.name: f.type for f in fields(cls)}
        for section in parser.sections():
            if section not in cls.SECTIONS:
                raise ConfigError(section, "unknown section")
            for key, raw in parser.items(section):
                if key not in cls.SECTIONS[section]:
                    raise ConfigError(f"{section}.{key}", "unknown key")
                setattr(cfg, key, _parse_value(raw, types[key], f"{section}.{key}"))
        cfg.validate()
        return cfg

    def to_string(self) -> str:
        lines = []
        for section, keys in self.SECTIONS.items():
            lines.append(f"[{section}]")
            for k in keys:
                v = getattr(self, k)
                if isinstance(v, (list, tuple, np.ndarray)):
                    v = ", ".join(repr(x) for x in v)
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)

    def section_of(self, key: str) -> str:
        for section, keys in self.SECTIONS.items():
            if key in keys:
                return section
        return "?"

    def validate(self) -> None:
        def name(k):
            return f"{self.section_of(k)}.{k}"

        for k in ("num_inps", "num_isps", "reuse_limit"):
            v = getattr(self, k)
            if int(v) != v or v < 1:
                raise ConfigError(name(k), f"must be an integer >= 1, got {v!r}")
        counts = {
            "bs_per_inp": self.num_inps, "dl_subcarriers": self.num_inps,
            "ul_subcarriers": self.num_inps, "dl_codebooks": self.num_inps,
            "ul_codebooks": self.num_inps, "dl_spread": self.num_inps,
            "ul_spread": self.num_inps, "users_per_isp": self.num_isps,
        }
        for k, n in counts.items():
            arr = _per(getattr(self, k), n, name(k))
            if np.any(arr < 1) or np.any(arr != np.round(arr)):
                raise ConfigError(name(k), "counts must be integers >= 1")
        nb = int(_per(self.bs_per_inp, self.num_inps, name("bs_per_inp")).sum())
        arr = _per(self.sensors_per_bs, nb, name("sensors_per_bs"))
        if np.any(arr < 1) or np.any(arr != np.round(arr)):
            raise ConfigError(name("sensors_per_bs"), "counts must be integers >= 1")
        spread = _per(self.dl_spread, self.num_inps, name("dl_spread"))
        if np.any(spread > _per(self.dl_subcarriers, self.num_inps, "")):
            raise ConfigError(name("dl_spread"), "spread exceeds the number of subcarriers")
        spread = _per(self.ul_spread, self.num_inps, name("ul_spread"))
        if np.any(spread > _per(self.ul_subcarriers, self.num_inps, "")):
            raise ConfigError(name("ul_spread"), "spread exceeds the number of subcarriers")
        for k in ("noise_dl", "noise_ul", "macro_radius", "femto_radius", "min_distance",
                  "macro_power_cap", "femto_power_cap", "battery_cap", "subcarrier_bandwidth",
                  "price_scale"):
            if np.any(np.asarray(getattr(self, k), float) <= 0):
                raise ConfigError(name(k), "must be > 0")
        for k in ("power_supplier_price", "regulator_bw_price", "sensor_reservation",
                  "user_reservation", "sensing_quality_gain", "price_cap", "min_dl_rate",
                  "min_ul_rate", "weight_isp", "weight_user", "weight_inp", "weight_sens",
                  "inp_spacing", "femto_offset"):
            if np.any(np.asarray(getattr(self, k), float) < 0):
                raise ConfigError(name(k), "must be >= 0")
        if not self.path_loss_exp < 0:
            raise ConfigError(name("path_loss_exp"), "path loss exponent must be negative")


def _parse_value(raw: str, typ, name: str):
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(name, "empty value")
    as_int = typ in ("int", "int | list")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(name, f"not a number: {raw!r}") from exc
    if as_int:
        if any(v != int(v) for v in vals):
            raise ConfigError(name, f"expected integer(s), got {raw!r}")
        vals = [int(v) for v in vals]
    if len(vals) == 1:
        return vals[0]
    if "list" not in str(typ):
        raise ConfigError(name, "expects a single value")
    return vals


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _bs_positions(cfg: ScenarioConfig, bs_per_inp) -> tuple[np.ndarray, np.ndarray]:
    """BS coordinates and radii: macro first in each InP, femtos on a ring."""
    pos, radius = [], []
    for i, nb in enumerate(bs_per_inp):
        centre = np.array([i * cfg.inp_spacing, 0.0])
        pos.append(centre)
        radius.append(cfg.macro_radius)
        for k in range(nb - 1):
            ang = 2 * np.pi * k / (nb - 1) + i * np.pi / 4
            pos.append(centre + cfg.femto_offset * np.array([np.cos(ang), np.sin(ang)]))
            radius.append(cfg.femto_radius)
    return np.array(pos), np.array(radius)


def _uniform_disc(rng, centre, radius, n):
    r = radius * np.sqrt(rng.random(n))
    th = 2 * np.pi * rng.random(n)
    return centre + np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


def generate_scenario(config: ScenarioConfig | None = None, seed: int = 0) -> Scenario:
    """Deterministic scenario for ``(config, seed)``.

    Users are homed round-robin over all BSs and dropped uniformly in the home
    cell; sensors are dropped in their serving cell.  Gains are Rayleigh power
    fading times ``D ** path_loss_exp``.
    """
    cfg = config or ScenarioConfig()
    cfg.validate()
    I = int(cfg.num_inps)
    bs_per_inp = tuple(int(x) for x in _per(cfg.bs_per_inp, I, "topology.bs_per_inp", int))
    B = sum(bs_per_inp)
    upi = _per(cfg.users_per_isp, cfg.num_isps, "topology.users_per_isp", int)
    isp_users, start = [], 0
    for n in upi:
        isp_users.append(tuple(range(start, start + int(n))))
        start += int(n)
    U = start
    topo = Topology(
        num_inps=I,
        bs_per_inp=bs_per_inp,
        sensors_per_bs=tuple(int(x) for x in _per(cfg.sensors_per_bs, B, "topology.sensors_per_bs", int)),
        isp_users=tuple(isp_users),
        dl_subcarriers=tuple(int(x) for x in _per(cfg.dl_subcarriers, I, "", int)),
        ul_subcarriers=tuple(int(x) for x in _per(cfg.ul_subcarriers, I, "", int)),
        dl_codebooks=tuple(int(x) for x in _per(cfg.dl_codebooks, I, "", int)),
        ul_codebooks=tuple(int(x) for x in _per(cfg.ul_codebooks, I, "", int)),
        reuse_limit=int(cfg.reuse_limit),
        num_users=U,
    )
    try:
        books = assemble_codebook_map(topo, cfg.dl_spread, cfg.ul_spread)
    except CodebookCapacityError as exc:
        raise ConfigError("topology.dl_codebooks", str(exc)) from exc

    rng = np.random.default_rng(seed)
    S = topo.num_sensors
    bs_pos, bs_rad = _bs_positions(cfg, bs_per_inp)
    home = np.arange(U) % B
    user_pos = np.zeros((U, 2))
    for u in range(U):
        user_pos[u] = _uniform_disc(rng, bs_pos[home[u]], bs_rad[home[u]], 1)[0]
    sensor_pos = np.zeros((S, 2))
    sb = topo.sensor_bs
    for s in range(S):
        sensor_pos[s] = _uniform_disc(rng, bs_pos[sb[s]], bs_rad[sb[s]], 1)[0]
    d_dl = np.linalg.norm(bs_pos[:, None, :] - user_pos[None, :, :], axis=2)
    d_ul = np.linalg.norm(bs_pos[:, None, :] - sensor_pos[None, :, :], axis=2)
    d_dl = np.maximum(d_dl, cfg.min_distance)
    d_ul = np.maximum(d_ul, cfg.min_distance)
    Nm, Mm = topo.max_dl_subcarriers, topo.max_ul_subcarriers
    fade_dl = rng.exponential(1.0, size=(B, U, Nm))
    fade_ul = rng.exponential(1.0, size=(B, S, Mm))
    xi = float(cfg.path_loss_exp)
    chan = ChannelState(
        dl_gain=_frozen(fade_dl * d_dl[:, :, None] ** xi),
        ul_gain=_frozen(fade_ul * d_ul[:, :, None] ** xi),
        noise_dl=_frozen(np.full((B, U, topo.max_dl_codebooks), cfg.noise_dl)),
        noise_ul=_frozen(np.full((S, topo.max_ul_codebooks), cfg.noise_ul)),
        dl_distance=_frozen(d_dl),
        ul_distance=_frozen(d_ul),
        path_loss_exp=xi,
    )

    V = topo.num_isps
    caps = np.full(B, float(cfg.femto_power_cap))
    for i in range(I):
        caps[topo.bs_of_inp(i).start] = cfg.macro_power_cap
    W_S = float(cfg.subcarrier_bandwidth)
    econ = EconomicConstants(
        power_supplier_price=float(cfg.power_supplier_price),
        regulator_bw_price=_frozen(_per(cfg.regulator_bw_price, I, "economics.regulator_bw_price")),
        sensor_reservation=_frozen(_per(cfg.sensor_reservation, S, "economics.sensor_reservation")),
        user_reservation=_frozen(_per(cfg.user_reservation, U, "economics.user_reservation")),
        sensing_quality_gain=float(cfg.sensing_quality_gain),
        subcarrier_bandwidth=W_S,
        dl_band=_frozen(np.asarray(topo.dl_subcarriers, float) * W_S),
        ul_band=_frozen(np.asarray(topo.ul_subcarriers, float) * W_S),
        price_scale=float(cfg.price_scale),
        price_cap=float(cfg.price_cap),
        power_caps=_frozen(caps),
        battery_caps=_frozen(_per(cfg.battery_cap, S, "economics.battery_cap")),
        min_dl_rate=_frozen(_per(cfg.min_dl_rate, V, "economics.min_dl_rate")),
        min_ul_rate=_frozen(_per(cfg.min_ul_rate, S, "economics.min_ul_rate")),
        weights=Weights(
            isp=_frozen(_per(cfg.weight_isp, V, "economics.weight_isp")),
            user=_frozen(_per(cfg.weight_user, U, "economics.weight_user")),
            inp=_frozen(_per(cfg.weight_inp, I, "economics.weight_inp")),
            sens=_frozen(_per(cfg.weight_sens, S, "economics.weight_sens")),
        ),
    )
    return Scenario(topology=topo, codebooks=books, channels=chan, economics=econ, seed=int(seed))


def load_scenario(path=None, seed: int = 0) -> Scenario:
    cfg = ScenarioConfig.from_file(path) if path is not None else ScenarioConfig()
    return generate_scenario(cfg, seed)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)   # (path, message)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, path: str, message: str) -> None:
        self.issues.append((path, message))

    def __str__(self) -> str:
        if self.ok:
            return "scenario valid"
        return "\n".join(f"{p}: {m}" for p, m in self.issues)


def validate_scenario(s: Scenario, atol: float = 1e-12) -> ValidationReport:
    rep = ValidationReport()
    t, cb, ch, ec = s.topology, s.codebooks, s.channels, s.economics
    I, B, S, U, V = t.num_inps, t.num_bs, t.num_sensors, t.num_users, t.num_isps

    for name in ("num_inps", "reuse_limit", "num_users"):
        if getattr(t, name) < 1:
            rep.add(f"topology.{name}", "count must be >= 1")
    for name in ("bs_per_inp", "dl_subcarriers", "ul_subcarriers", "dl_codebooks", "ul_codebooks"):
        vals = getattr(t, name)
        if len(vals) != I:
            rep.add(f"topology.{name}", f"expected {I} entries")
        if any(v < 1 for v in vals):
            rep.add(f"topology.{name}", "count must be >= 1")
    if len(t.sensors_per_bs) != B or any(v < 1 for v in t.sensors_per_bs):
        rep.add("topology.sensors_per_bs", "one count >= 1 per BS required")
    if V < 1 or any(len(k) < 1 for k in t.isp_users):
        rep.add("topology.isp_users", "every ISP needs at least one user")

    owners: dict[int, list[int]] = {}
    for v, members in enumerate(t.isp_users):
        for u in members:
            owners.setdefault(int(u), []).append(v)
    for u, vs in sorted(owners.items()):
        if len(vs) > 1:
            rep.add(f"topology.isp_users[user {u}]",
                    f"user belongs to ISPs {vs}; the sets K_v must be disjoint")
        if not 0 <= u < U:
            rep.add(f"topology.isp_users[user {u}]", "user index out of range")
    missing = sorted(set(range(U)) - set(owners))
    if missing:
        rep.add("topology.isp_users", f"users {missing} have no ISP; union of K_v must be U")

    # codebooks
    for i in range(I):
        C, N = t.dl_codebooks[i], t.dl_subcarriers[i]
        Cu, M = t.ul_codebooks[i], t.ul_subcarriers[i]
        _check_books(rep, f"codebooks.dl[inp {i}]", cb.dl_incidence[i, :C, :N],
                     cb.dl_split[list(t.bs_of_inp(i))][:, :N, :C], atol)
        _check_books(rep, f"codebooks.ul[inp {i}]", cb.ul_incidence[i, :Cu, :M],
                     cb.ul_split[list(t.bs_of_inp(i))][:, :M, :Cu], atol)

    # channels
    inp = t.bs_inp
    for b in range(B):
        N = t.dl_subcarriers[inp[b]]
        M = t.ul_subcarriers[inp[b]]
        g = ch.dl_gain[b, :, :N]
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            rep.add(f"channels.dl_gain[bs {b}]", "gains must be finite and > 0")
        g = ch.ul_gain[b, :, :M]
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            rep.add(f"channels.ul_gain[bs {b}]", "gains must be finite and > 0")
    if np.any(ch.noise_dl[t.dl_valid()[:, None, :].repeat(U, 1)] <= 0):
        rep.add("channels.noise_dl", "noise power must be > 0")
    if np.any(ch.noise_ul[t.ul_valid()] <= 0):
        rep.add("channels.noise_ul", "noise power must be > 0")

    # economics
    for name in ("regulator_bw_price", "sensor_reservation", "user_reservation", "power_caps",
                 "battery_caps", "min_dl_rate", "min_ul_rate"):
        if np.any(np.asarray(getattr(ec, name)) < 0):
            rep.add(f"economics.{name}", "must be >= 0")
    for name in ("power_supplier_price", "price_scale", "price_cap", "sensing_quality_gain",
                 "subcarrier_bandwidth"):
        if getattr(ec, name) < 0:
            rep.add(f"economics.{name}", "must be >= 0")
    for name in ("isp", "user", "inp", "sens"):
        if np.any(getattr(ec.weights, name) < 0):
            rep.add(f"economics.weights.{name}", "weights must be >= 0")
    if not np.allclose(ec.dl_band, np.asarray(t.dl_subcarriers) * ec.subcarrier_bandwidth):
        rep.add("economics.dl_band", "W^Dn_i must equal N_i * W_S")
    if not np.allclose(ec.ul_band, np.asarray(t.ul_subcarriers) * ec.subcarrier_bandwidth):
        rep.add("economics.ul_band", "W^Up_i must equal M_i * W_S")
    shapes = {"power_caps": B, "battery_caps": S, "sensor_reservation": S,
              "user_reservation": U, "min_dl_rate": V, "min_ul_rate": S, "regulator_bw_price": I}
    for name, n in shapes.items():
        if np.asarray(getattr(ec, name)).shape != (n,):
            rep.add(f"economics.{name}", f"expected shape ({n},)")
    return rep


def _check_books(rep, path, q, lam, atol):
    if not np.all((q == 0) | (q == 1)):
        rep.add(f"{path}.incidence", "incidence must be binary")
    empty = np.where(q.sum(axis=1) < 1)[0]
    for c in empty:
        rep.add(f"{path}.incidence[codebook {c}]", "codebook uses no subcarrier")
    if np.any(lam < 0) or np.any(lam > 1):
        rep.add(f"{path}.split", "λ must lie in [0, 1]")
    off = lam * (1 - q.T)[None]
    if np.any(np.abs(off) > 0):
        rep.add(f"{path}.split", "λ must be 0 on subcarriers outside the codebook")
    sums = lam.sum(axis=1)   # (B, C)
    for b, c in zip(*np.where(np.abs(sums - 1.0) > atol)):
        rep.add(f"{path}.split[bs {b}, codebook {c}]",
                f"Σλ over the codebook's subcarriers is {sums[b, c]:.6g}, must equal 1")
