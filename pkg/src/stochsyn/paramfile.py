"""Bit-exact binary persistence of all fitted model parameters.

Layout (little-endian throughout)::

    magic   'SSYN' (4 bytes)
    version u16
    sections, each:  tag u32, payload-length u64, payload
    crc32   u32 over every preceding byte

Section payloads hold counts ahead of their float64 data, so the file is
self-describing; unknown tags are skipped on load for forward compatibility.
The autoregression section may repeat, one entry per stored model order.
"""

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .array import ReadoutConfig
from .conduction import ConductionModel
from .svar import SvarModel, spectral_radius
from .transform import NormalizingMap, _check_monotone

MAGIC = b"SSYN"
VERSION = 1

SEC_CONDUCTION = 1
SEC_GAMMA = 2
SEC_SIGMA = 3
SEC_DEFAULTS = 4
SEC_SVAR = 5


class FormatError(ValueError):
    """Base class for parameter-file problems."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


@dataclass(frozen=True)
class SimDefaults:
    """Array-level defaults carried with the fitted parameters."""

    u_max: float = 1.5
    dtd_scale: float = 0.0
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)


@dataclass
class ParameterBundle:
    conduction: ConductionModel
    gamma: NormalizingMap
    sigma: np.ndarray                 # (4, 4) covariance of the normalized data
    svar: dict                        # order -> SvarModel
    defaults: SimDefaults = field(default_factory=SimDefaults)

    def model(self, p: int | None = None) -> SvarModel:
        if p is None:
            if len(self.svar) == 1:
                return next(iter(self.svar.values()))
            p = 10
        try:
            return self.svar[p]
        except KeyError:
            raise KeyError(f"no order-{p} model (available: {sorted(self.svar)})") from None

    def validate(self) -> None:
        """Cross-checks beyond what the member constructors enforce."""
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != (4, 4) or np.max(np.abs(sigma - sigma.T)) > 1e-12:
            raise FormatError("sigma must be a symmetric 4x4 matrix")
        _check_monotone(self.gamma.coeffs, self.gamma.z_range, self.gamma.feature_names)
        for p, model in self.svar.items():
            if p != model.p:
                raise FormatError(f"model order mismatch: key {p} vs model {model.p}")
            radius = spectral_radius(model)
            if radius >= 1.0:
                raise FormatError(f"order-{p} model unstable (spectral radius {radius:.4f})")


def _pack_f64(*values) -> bytes:
    return struct.pack(f"<{len(values)}d", *[float(v) for v in values])


def _pack_arr(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _section(tag: int, payload: bytes) -> bytes:
    return struct.pack("<IQ", tag, len(payload)) + payload


def _encode(bundle: ParameterBundle) -> bytes:
    cm = bundle.conduction
    cond = struct.pack("<I", cm.hhrs.size) + _pack_arr(cm.hhrs) \
        + struct.pack("<I", cm.llrs.size) + _pack_arr(cm.llrs) + _pack_f64(cm.u0)

    g = bundle.gamma
    gamma = struct.pack("<II", *g.coeffs.shape) + _pack_arr(g.coeffs) \
        + _pack_f64(g.z_range[0], g.z_range[1])

    sigma = _pack_arr(np.asarray(bundle.sigma, dtype=np.float64))

    d = bundle.defaults
    ro = d.readout
    defaults = _pack_f64(d.u_max, d.dtd_scale, ro.u_read, ro.delta_f, ro.temperature) \
        + struct.pack("<I", ro.n_bits) + _pack_f64(ro.i_min, ro.i_max) \
        + struct.pack("<B", 1 if ro.noise_enabled else 0)

    blob = MAGIC + struct.pack("<H", VERSION)
    blob += _section(SEC_CONDUCTION, cond)
    blob += _section(SEC_GAMMA, gamma)
    blob += _section(SEC_SIGMA, sigma)
    blob += _section(SEC_DEFAULTS, defaults)
    for p in sorted(bundle.svar):
        m = bundle.svar[p]
        payload = struct.pack("<I", m.p) + _pack_arr(m.a) + _pack_arr(m.b) \
            + _pack_arr(m.c) + _pack_arr(m.phi) + _pack_arr(m.intercept) \
            + _pack_arr(m.sigma_u) + _pack_arr(m.chol_u)
        blob += _section(SEC_SVAR, payload)
    return blob + struct.pack("<I", zlib.crc32(blob))


def save(bundle: ParameterBundle, path) -> None:
    bundle.validate()
    with open(path, "wb") as fh:
        fh.write(_encode(bundle))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("section payload truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self, n: int = 1):
        vals = struct.unpack(f"<{n}d", self.take(8 * n))
        return vals[0] if n == 1 else vals

    def arr(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).copy()


def load(path, validate: bool = True) -> ParameterBundle:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise BadMagicError(f"not a parameter file: magic {blob[:4]!r}")
    (version,) = struct.unpack("<H", blob[4:6])
    if version != VERSION:
        raise UnsupportedVersionError(f"file version {version}, supported: {VERSION}")
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc_stored:
        raise ChecksumError("crc mismatch; file is corrupt or truncated")

    body = blob[6:-4]
    pos = 0
    conduction = gamma = sigma = defaults = None
    svar: dict[int, SvarModel] = {}
    while pos < len(body):
        if pos + 12 > len(body):
            raise FormatError("dangling section header")
        tag, length = struct.unpack("<IQ", body[pos : pos + 12])
        pos += 12
        if pos + length > len(body):
            raise FormatError(f"section {tag} overruns the file")
        r = _Reader(body[pos : pos + length])
        pos += length
        if tag == SEC_CONDUCTION:
            hhrs = r.arr(r.u32())
            llrs = r.arr(r.u32())
            conduction = ConductionModel(hhrs=hhrs, llrs=llrs, u0=r.f64())
        elif tag == SEC_GAMMA:
            rows, cols = r.u32(), r.u32()
            coeffs = r.arr((rows, cols))
            gamma = NormalizingMap(coeffs=coeffs, z_range=(r.f64(), r.f64()))
        elif tag == SEC_SIGMA:
            sigma = r.arr((4, 4))
        elif tag == SEC_DEFAULTS:
            u_max, a, u_read, delta_f, temp = r.f64(5)
            n_bits = r.u32()
            i_min, i_max = r.f64(2)
            noise = bool(r.take(1)[0])
            defaults = SimDefaults(
                u_max=u_max, dtd_scale=a,
                readout=ReadoutConfig(u_read=u_read, delta_f=delta_f,
                                      temperature=temp, n_bits=n_bits,
                                      i_min=i_min, i_max=i_max,
                                      noise_enabled=noise),
            )
        elif tag == SEC_SVAR:
            p = r.u32()
            svar[p] = SvarModel(
                p=p,
                a=r.arr((4, 4)), b=r.arr((4, 4)), c=r.arr((p, 4, 4)),
                phi=r.arr((p, 4, 4)), intercept=r.arr(4),
                sigma_u=r.arr((4, 4)), chol_u=r.arr((4, 4)),
            )
        # unknown tags are skipped for forward compatibility

    missing = [name for name, val in
               (("conduction", conduction), ("gamma", gamma), ("sigma", sigma),
                ("defaults", defaults)) if val is None]
    if missing or not svar:
        raise FormatError(f"incomplete file, missing sections: {missing or ['svar']}")
    bundle = ParameterBundle(conduction=conduction, gamma=gamma, sigma=sigma,
                             svar=svar, defaults=defaults)
    if validate:
        bundle.validate()
    return bundle


def bundle_to_json(bundle: ParameterBundle) -> dict:
    """Plain-python rendering of every section, for inspection/debugging."""
    d = bundle.defaults
    return {
        "format_version": VERSION,
        "conduction": {
            "hhrs": bundle.conduction.hhrs.tolist(),
            "llrs": bundle.conduction.llrs.tolist(),
            "u0": bundle.conduction.u0,
        },
        "gamma": {
            "coeffs": bundle.gamma.coeffs.tolist(),
            "z_range": list(bundle.gamma.z_range),
            "features": list(bundle.gamma.feature_names),
        },
        "sigma": np.asarray(bundle.sigma).tolist(),
        "defaults": {
            "u_max": d.u_max,
            "dtd_scale": d.dtd_scale,
            "readout": {
                "u_read": d.readout.u_read, "delta_f": d.readout.delta_f,
                "temperature": d.readout.temperature, "n_bits": d.readout.n_bits,
                "i_min": d.readout.i_min, "i_max": d.readout.i_max,
                "noise_enabled": d.readout.noise_enabled,
            },
        },
        "svar": {
            str(p): {
                "p": m.p,
                "a": m.a.tolist(), "b": m.b.tolist(), "c": m.c.tolist(),
                "phi": m.phi.tolist(), "intercept": m.intercept.tolist(),
                "sigma_u": m.sigma_u.tolist(), "chol_u": m.chol_u.tolist(),
            }
            for p, m in sorted(bundle.svar.items())
        },
    }


def write_json(bundle: ParameterBundle, path) -> None:
    with open(path, "w") as fh:
        json.dump(bundle_to_json(bundle), fh, indent=2)
