"""On-disk formats: volumes, dataset bundles, run configuration, reports.

Volume file ("CLVX"): 22-byte header = magic, version u8, dtype u8
(1 real / 2 complex), dims 3 x u32, pad factor as u16 numerator/denominator;
then the payload as little-endian f32 (complex interleaved), row-major.
Stored at f32; compute stays f64 in memory.

Config files are a plain-text dialect shared by run configs and bundle
manifests: "[section]" headers, "key = value" lines, "#" starts a comment,
unknown sections or keys and duplicate keys are errors with line numbers.
Every key has a default, so the empty file is a valid full configuration.
"""

from __future__ import annotations

import shlex
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .engine import EngineConfig, TraceRow
from .fidelity import EmParams
from .forward import ForwardOperator
from .metrics import GeometryParams, PointCloud, rayleigh_cutoff
from .priors import PriorConfig
from .simulate import PHANTOM_KINDS, Phantom, SimParams
from .volume import ApertureMask, Dims, as_pad_factor

VOL_MAGIC = b"CLVX"
VOL_VERSION = 1
_VOL_HEADER = struct.Struct("<4sBB3I2H")
_DTYPE_REAL = 1
_DTYPE_COMPLEX = 2


class VolumeFormatError(ValueError):
    """Header or payload of a volume file is not as declared."""


class ConfigError(ValueError):
    """Config text violates the dialect or a value is out of range."""


def write_volume(path, v: np.ndarray, q: Fraction = Fraction(1)) -> None:
    """Write one volume; rejects non-finite values and non-3D arrays."""
    v = np.asarray(v)
    if v.ndim != 3:
        raise ValueError(f"expected a 3-axis volume, got shape {v.shape}")
    q = Fraction(q)
    if q <= 0 or q.numerator > 0xFFFF or q.denominator > 0xFFFF:
        raise ValueError(f"pad factor {q} does not fit the header")
    if not np.isfinite(v).all():
        raise ValueError("refusing to write non-finite values")
    if np.iscomplexobj(v):
        code, payload = _DTYPE_COMPLEX, np.ascontiguousarray(v, dtype="<c8")
    else:
        code, payload = _DTYPE_REAL, np.ascontiguousarray(v, dtype="<f4")
    header = _VOL_HEADER.pack(
        VOL_MAGIC, VOL_VERSION, code, *v.shape, q.numerator, q.denominator
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def read_volume(path, expect: str | None = None):
    """Read a volume; returns (array, pad factor).

    ``expect`` of "real" or "complex" turns a stored-kind mismatch into an
    error instead of handing back the unexpected kind.
    """
    if expect not in (None, "real", "complex"):
        raise ValueError(f"expect must be 'real' or 'complex', got {expect!r}")
    raw = Path(path).read_bytes()
    if len(raw) < _VOL_HEADER.size:
        raise VolumeFormatError(
            f"{path}: truncated header ({len(raw)} of {_VOL_HEADER.size} bytes)"
        )
    magic, version, code, nx, ny, nt, q_num, q_den = _VOL_HEADER.unpack_from(raw)
    if magic != VOL_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {magic!r}")
    if version != VOL_VERSION:
        raise VolumeFormatError(f"{path}: unsupported version {version}")
    if code not in (_DTYPE_REAL, _DTYPE_COMPLEX):
        raise VolumeFormatError(f"{path}: unknown dtype code {code}")
    if min(nx, ny, nt) == 0 or q_num == 0 or q_den == 0:
        raise VolumeFormatError(f"{path}: zero dimension or pad factor in header")
    n = nx * ny * nt
    itemsize = 4 if code == _DTYPE_REAL else 8
    body = raw[_VOL_HEADER.size :]
    if len(body) != n * itemsize:
        raise VolumeFormatError(
            f"{path}: payload holds {len(body)} bytes but dims ({nx}, {ny}, {nt}) "
            f"require {n * itemsize}"
        )
    if expect == "real" and code != _DTYPE_REAL:
        raise VolumeFormatError(f"{path}: expected real data, file holds complex")
    if expect == "complex" and code != _DTYPE_COMPLEX:
        raise VolumeFormatError(f"{path}: expected complex data, file holds real")
    if code == _DTYPE_REAL:
        arr = np.frombuffer(body, dtype="<f4").astype(np.float64)
    else:
        arr = np.frombuffer(body, dtype="<c8").astype(np.complex128)
    return arr.reshape(nx, ny, nt), Fraction(q_num, q_den)


# --- config dialect -------------------------------------------------------

def _parse_fraction(text: str) -> Fraction:
    return as_pad_factor(Fraction(text))


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _parse_floats3(text: str):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _parse_float_or_auto(text: str):
    return "auto" if text == "auto" else float(text)


def _parse_choice(options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text

    return parse


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        return str(value.numerator) if value.denominator == 1 else str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(x)) for x in value)
    return str(value)


# key -> (parser, default); dump order follows insertion order
_RUN_SCHEMA = {
    "sim": {
        "nx": (int, 16),
        "ny": (int, 16),
        "nt": (int, 16),
        "q": (_parse_fraction, Fraction(2)),
        "looks": (int, 4),
        "noise_var": (float, 1e-3),
        "seed": (int, 0),
        "diameter_fraction": (float, 0.5),
        "phantom": (_parse_choice(PHANTOM_KINDS), "stepped-block"),
        "phantom_size": (float, 10.0),
        "phantom_center": (_parse_floats3, (0.0, 0.0, 0.0)),
    },
    "forward": {
        "sigma_w2": (_parse_float_or_auto, "auto"),
        "threads": (int, 1),
    },
    "em": {
        "sigma2": (float, 0.1),
        "prox": (_parse_choice(("quadratic", "cubic")), "quadratic"),
        "beta_floor": (float, 1.01),
        "r_floor": (float, 1e-12),
    },
    "prior": {
        "kind": (_parse_choice(("tv", "l21", "gaussian", "external", "identity")), "tv"),
        "strength": (float, 0.05),
        "inner_iters": (int, 20),
        "command": (str, ""),
        "timeout": (float, 60.0),
    },
    "engine": {
        "rho": (float, 0.5),
        "max_iters": (int, 250),
        "tol": (float, 1e-3),
        "clamp_negative": (_parse_bool, True),
        "early_stop": (_parse_bool, False),
    },
    "metrics": {
        "threshold": (_parse_float_or_auto, "auto"),
        "cutoff": (_parse_float_or_auto, "auto"),
        "wavelength": (float, 1.55e-6),
        "range": (float, 52.9),
        "diameter": (float, 6.4e-3),
        "bandwidth": (float, 9.6e9),
        "pitch": (_parse_floats3, GeometryParams().pitch_m),
    },
}

_MANIFEST_SCHEMA = {
    "bundle": {
        "looks": (int, 1),
        "seed": (int, 0),
        "noise_var": (float, 1e-3),
        "diameter_fraction": (float, 0.5),
        "q": (_parse_fraction, Fraction(1)),
        "nx": (int, 0),
        "ny": (int, 0),
        "nt": (int, 0),
        "has_truth": (_parse_bool, False),
    },
    "geometry": {
        "wavelength": (float, 1.55e-6),
        "range": (float, 52.9),
        "diameter": (float, 6.4e-3),
        "bandwidth": (float, 9.6e9),
        "pitch": (_parse_floats3, GeometryParams().pitch_m),
    },
}


def _parse_sections(text: str, schema: dict, origin: str) -> dict:
    values = {section: {} for section in schema}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in schema:
                raise ConfigError(f"{origin}:{lineno}: unknown section [{name}]")
            section = name
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"{origin}:{lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in schema[section]:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r} in [{section}]")
        if key in values[section]:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r} in [{section}]")
        parser, _ = schema[section][key]
        try:
            values[section][key] = parser(value)
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"{origin}:{lineno}: bad value for {key!r}: {e}") from e
    return {
        sec: {k: values[sec].get(k, default) for k, (_, default) in keys.items()}
        for sec, keys in schema.items()
    }


def _dump_sections(values: dict, schema: dict) -> str:
    lines = []
    for section, keys in schema.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {_fmt(values[section][key])}")
        lines.append("")
    return "\n".join(lines)


@dataclass(frozen=True)
class RunConfig:
    """Parsed run configuration; every key present with its default."""

    sections: dict

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def sim_params(self) -> SimParams:
        s = self.sections["sim"]
        dims = Dims.from_unpadded(s["nx"], s["ny"], s["nt"], s["q"])
        return SimParams(
            dims=dims,
            looks=s["looks"],
            noise_var=s["noise_var"],
            seed=s["seed"],
            diameter_fraction=s["diameter_fraction"],
        )

    def phantom(self, dims: Dims | None = None) -> Phantom:
        s = self.sections["sim"]
        if dims is None:
            dims = self.sim_params().dims
        return Phantom(s["phantom"], dims, s["phantom_size"], s["phantom_center"])

    def sigma_w2(self) -> float:
        v = self.sections["forward"]["sigma_w2"]
        return self.sections["sim"]["noise_var"] if v == "auto" else v

    def em_params(self, alpha: float = 1.0) -> EmParams:
        e = self.sections["em"]
        return EmParams(
            sigma_w2=self.sigma_w2(),
            sigma2=e["sigma2"],
            beta_floor=e["beta_floor"],
            alpha=alpha,
            prox_kind=e["prox"],
            r_floor=e["r_floor"],
        )

    def prior_config(self) -> PriorConfig:
        p = self.sections["prior"]
        return PriorConfig(
            kind=p["kind"],
            strength=p["strength"],
            inner_iters=p["inner_iters"],
            command=tuple(shlex.split(p["command"])),
            timeout=p["timeout"],
        )

    def engine_config(self) -> EngineConfig:
        e = self.sections["engine"]
        return EngineConfig(
            rho=e["rho"],
            max_iters=e["max_iters"],
            tol=e["tol"],
            clamp_negative=e["clamp_negative"],
            early_stop=e["early_stop"],
        )

    def geometry(self) -> GeometryParams:
        m = self.sections["metrics"]
        return GeometryParams(
            wavelength_m=m["wavelength"],
            range_m=m["range"],
            aperture_m=m["diameter"],
            bandwidth_hz=m["bandwidth"],
            pitch_m=m["pitch"],
        )

    def cloud_threshold(self, alpha: float) -> float:
        v = self.sections["metrics"]["threshold"]
        return self.sigma_w2() / alpha if v == "auto" else v

    def cloud_cutoff(self) -> float:
        v = self.sections["metrics"]["cutoff"]
        return rayleigh_cutoff(self.geometry()) if v == "auto" else v


def parse_config(text: str, origin: str = "<config>") -> RunConfig:
    cfg = RunConfig(_parse_sections(text, _RUN_SCHEMA, origin))
    _validate_run_config(cfg, origin)
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(), origin=str(path))


def dump_config(cfg: RunConfig) -> str:
    return _dump_sections(cfg.sections, _RUN_SCHEMA)


def _validate_run_config(cfg: RunConfig, origin: str) -> None:
    """Range-check by constructing every typed parameter block."""
    try:
        sim = cfg.sim_params()
        cfg.phantom(sim.dims)
        cfg.em_params()
        if cfg.sections["prior"]["kind"] != "external":
            cfg.prior_config()
        cfg.engine_config()
        cfg.geometry()
        if cfg.sigma_w2() <= 0:
            raise ValueError("sigma_w2 must be > 0")
        if cfg.sections["forward"]["threads"] < 1:
            raise ValueError("threads must be >= 1")
        t = cfg.sections["metrics"]["threshold"]
        if t != "auto" and t < 0:
            raise ValueError("threshold must be >= 0")
        c = cfg.sections["metrics"]["cutoff"]
        if c != "auto" and c <= 0:
            raise ValueError("cutoff must be > 0")
    except ValueError as e:
        raise ConfigError(f"{origin}: {e}") from e


# --- dataset bundles ------------------------------------------------------

@dataclass
class DatasetBundle:
    directory: Path
    sim: SimParams
    ys: list
    mask: ApertureMask
    truth: np.ndarray | None
    geometry: GeometryParams

    @property
    def dims(self) -> Dims:
        return self.sim.dims

    def operator(self, sigma_w2: float | None = None) -> ForwardOperator:
        return ForwardOperator(
            self.mask, self.sim.noise_var if sigma_w2 is None else sigma_w2
        )


def _look_name(index: int) -> str:
    return f"look_{index:03d}.vol"


def save_bundle(
    directory,
    sim: SimParams,
    ys,
    mask: ApertureMask,
    truth: np.ndarray | None = None,
    geometry: GeometryParams | None = None,
) -> Path:
    """Write looks, mask, optional truth, and the manifest to a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if len(ys) != sim.looks:
        raise ValueError(f"{len(ys)} looks passed but params declare {sim.looks}")
    geometry = geometry or GeometryParams()
    q = sim.dims.q
    for i, y in enumerate(ys):
        write_volume(directory / _look_name(i), y, q)
    write_volume(directory / "mask.vol", mask.mask.astype(np.float64), q)
    if truth is not None:
        write_volume(directory / "truth.vol", truth, q)
    manifest = {
        "bundle": {
            "looks": sim.looks,
            "seed": sim.seed,
            "noise_var": sim.noise_var,
            "diameter_fraction": sim.diameter_fraction,
            "q": q,
            "nx": sim.dims.nx,
            "ny": sim.dims.ny,
            "nt": sim.dims.nt,
            "has_truth": truth is not None,
        },
        "geometry": {
            "wavelength": geometry.wavelength_m,
            "range": geometry.range_m,
            "diameter": geometry.aperture_m,
            "bandwidth": geometry.bandwidth_hz,
            "pitch": tuple(geometry.pitch_m),
        },
    }
    (directory / "manifest.cfg").write_text(_dump_sections(manifest, _MANIFEST_SCHEMA))
    return directory


def load_bundle(directory) -> DatasetBundle:
    directory = Path(directory)
    manifest_path = directory / "manifest.cfg"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest.cfg in {directory}")
    m = _parse_sections(manifest_path.read_text(), _MANIFEST_SCHEMA, str(manifest_path))
    b = m["bundle"]
    dims = Dims(b["nx"], b["ny"], b["nt"], b["q"])
    sim = SimParams(
        dims=dims,
        looks=b["looks"],
        noise_var=b["noise_var"],
        seed=b["seed"],
        diameter_fraction=b["diameter_fraction"],
    )
    on_disk = sorted(p.name for p in directory.glob("look_*.vol"))
    expected = [_look_name(i) for i in range(sim.looks)]
    if on_disk != expected:
        raise ValueError(
            f"{directory}: manifest declares {sim.looks} looks but found {on_disk}"
        )
    ys = []
    for name in expected:
        y, q = read_volume(directory / name, expect="complex")
        if y.shape != dims.shape or q != dims.q:
            raise ValueError(f"{name}: volume header disagrees with the manifest")
        ys.append(y)
    mask_arr, _ = read_volume(directory / "mask.vol", expect="real")
    if mask_arr.shape != dims.shape:
        raise ValueError("mask.vol: volume header disagrees with the manifest")
    binary = mask_arr > 0.5
    if not np.array_equal(mask_arr, binary.astype(np.float64)):
        raise ValueError("mask.vol: aperture mask must be binary")
    alpha = float(binary.sum()) / dims.n
    mask = ApertureMask(dims, binary.astype(np.float64), alpha)
    truth = None
    if b["has_truth"]:
        truth, _ = read_volume(directory / "truth.vol", expect="real")
        if truth.shape != dims.shape:
            raise ValueError("truth.vol: volume header disagrees with the manifest")
    g = m["geometry"]
    geometry = GeometryParams(
        wavelength_m=g["wavelength"],
        range_m=g["range"],
        aperture_m=g["diameter"],
        bandwidth_hz=g["bandwidth"],
        pitch_m=g["pitch"],
    )
    return DatasetBundle(directory, sim, ys, mask, truth, geometry)


# --- reports --------------------------------------------------------------

_TRACE_HEADER = "iteration\tconvergence_error\tmean_residual\twall_s"


def write_trace(path, trace) -> None:
    lines = [_TRACE_HEADER]
    for row in trace:
        lines.append(
            f"{row.iteration}\t{row.convergence_error:.17g}"
            f"\t{row.mean_residual:.17g}\t{row.wall_s:.17g}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path):
    text = Path(path).read_text().splitlines()
    if not text or text[0] != _TRACE_HEADER:
        raise ValueError(f"{path}: missing trace header")
    rows = []
    for line in text[1:]:
        it, conv, resid, wall = line.split("\t")
        rows.append(TraceRow(int(it), float(conv), float(resid), float(wall)))
    return rows


def write_point_cloud(path, cloud: PointCloud) -> None:
    """One point per line: x y z value, 9 significant digits."""
    lines = [
        f"{x:.9g} {y:.9g} {z:.9g} {r:.9g}"
        for (x, y, z), r in zip(cloud.coords, cloud.values)
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_point_cloud(path) -> PointCloud:
    coords, values = [], []
    for line in Path(path).read_text().splitlines():
        x, y, z, r = line.split()
        coords.append((float(x), float(y), float(z)))
        values.append(float(r))
    return PointCloud(np.array(coords).reshape(-1, 3), np.array(values))
