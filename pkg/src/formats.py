"""
File formats.

Matrices: binary ``SBMM`` (magic, u32 n, n(n+1)/2 little-endian f64 lower
triangle in row order) or CSV lower triangle, one row per line. Params: JSON
with either {n, k, p_s, p_d} or {n, k, p_a, gamma}. Spectra: one eigenvalue
per line, descending. Reports: JSON with every float written to 17
significant digits (non-finite values become null) plus flat CSV tables.
"""

import io
import json
import math
import struct
from pathlib import Path
from typing import Any, BinaryIO, Dict, Iterable, List, Mapping, Optional, TextIO, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from .chebstats import ChebCoeffs
from .config import config
from .errors import MatrixFormatError, ProbabilityOutOfRange
from .model import SbmParams, SymMatrix, validate_params
from .spectral import ResolventProbe, Spectrum

logger = structlog.get_logger()

MAGIC = b"SBMM"
_HEADER = struct.Struct("<4sI")
FLOAT_FORMAT = "%.17g"


# ============================================================================
# Matrices
# ============================================================================


def _lower_to_full(n: int, lower: np.ndarray) -> SymMatrix:
    full = np.zeros((n, n), dtype=np.float64)
    rows, cols = np.tril_indices(n)
    full[rows, cols] = lower
    full[cols, rows] = lower
    return SymMatrix(full)


def write_matrix_binary(matrix: SymMatrix, stream: BinaryIO) -> None:
    rows, cols = np.tril_indices(matrix.n)
    stream.write(_HEADER.pack(MAGIC, matrix.n))
    stream.write(matrix.values[rows, cols].astype("<f8").tobytes())


def read_matrix_binary(stream: BinaryIO) -> SymMatrix:
    header = stream.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise MatrixFormatError("Truncated matrix header", got=len(header))
    magic, n = _HEADER.unpack(header)
    if magic != MAGIC:
        raise MatrixFormatError("Bad matrix magic", magic=magic.decode("latin-1"))

    count = n * (n + 1) // 2
    payload = stream.read(8 * count)
    if len(payload) != 8 * count:
        raise MatrixFormatError("Truncated matrix payload", n=n, expected=count, got=len(payload) // 8)
    return _lower_to_full(n, np.frombuffer(payload, dtype="<f8").astype(np.float64))


def write_matrix_csv(matrix: SymMatrix, stream: TextIO) -> None:
    for i in range(matrix.n):
        stream.write(",".join(FLOAT_FORMAT % v for v in matrix.values[i, : i + 1]))
        stream.write("\n")


def read_matrix_csv(stream: TextIO) -> SymMatrix:
    rows: List[List[float]] = []
    for line_number, line in enumerate(stream):
        line = line.strip()
        if not line:
            continue
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise MatrixFormatError("Non-numeric matrix entry", line=line_number + 1)
        if len(row) != len(rows) + 1:
            raise MatrixFormatError(
                "Lower-triangle row has wrong length",
                line=line_number + 1,
                expected=len(rows) + 1,
                got=len(row),
            )
        rows.append(row)
    if not rows:
        raise MatrixFormatError("Empty matrix file")
    return _lower_to_full(len(rows), np.concatenate([np.asarray(r) for r in rows]))


def read_matrix(source: Union[str, Path, BinaryIO]) -> SymMatrix:
    """Read a matrix from a path or binary stream, detecting the format."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as handle:
            return read_matrix(handle)

    data = source.read()
    if data[:4] == MAGIC:
        return read_matrix_binary(io.BytesIO(data))
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise MatrixFormatError("Matrix input is neither SBMM binary nor CSV text")
    return read_matrix_csv(io.StringIO(text))


def write_matrix(matrix: SymMatrix, stream: BinaryIO, fmt: str = "binary") -> None:
    if fmt == "binary":
        write_matrix_binary(matrix, stream)
    elif fmt == "csv":
        text = io.StringIO()
        write_matrix_csv(matrix, text)
        stream.write(text.getvalue().encode("utf-8"))
    else:
        raise MatrixFormatError("Unknown matrix format", fmt=fmt)


# ============================================================================
# Params
# ============================================================================


class ParamsSchema(BaseModel):
    """Either (p_s, p_d) or (p_a, gamma) alongside n and k."""

    model_config = ConfigDict(extra="forbid")

    n: int
    k: int
    p_s: Optional[float] = None
    p_d: Optional[float] = None
    p_a: Optional[float] = None
    gamma: Optional[float] = None

    @model_validator(mode="after")
    def _one_parameterization(self) -> "ParamsSchema":
        direct = self.p_s is not None and self.p_d is not None
        implicit = self.p_a is not None and self.gamma is not None
        if direct == implicit:
            raise ValueError("give exactly one of (p_s, p_d) or (p_a, gamma)")
        return self

    def to_params(self) -> SbmParams:
        return validate_params(self.model_dump(exclude_none=True))


def parse_params(raw: Union[str, Mapping[str, Any]]) -> SbmParams:
    try:
        if isinstance(raw, str):
            schema = ParamsSchema.model_validate_json(raw)
        else:
            schema = ParamsSchema.model_validate(dict(raw))
    except ValidationError as exc:
        raise ProbabilityOutOfRange("Invalid params", errors=exc.errors(include_url=False))
    return schema.to_params()


def params_json(params: SbmParams) -> str:
    return dump_json({"n": params.n, "k": params.k, "p_s": params.p_s, "p_d": params.p_d})


# ============================================================================
# Spectra, probes, coefficients
# ============================================================================


def write_spectrum_csv(spec: Spectrum, stream: TextIO) -> None:
    for value in spec.values:
        stream.write(FLOAT_FORMAT % value)
        stream.write("\n")


def read_spectrum_csv(stream: TextIO) -> Spectrum:
    values = [float(line) for line in stream if line.strip()]
    return Spectrum(np.asarray(values))


def probe_json(probe: ResolventProbe) -> str:
    return dump_json(probe.to_dict(), versioned=True)


def cheb_coeffs_frame(coeffs: ChebCoeffs) -> pd.DataFrame:
    return pd.DataFrame(coeffs.rows(), columns=["ell", "tau"])


# ============================================================================
# JSON and tables
# ============================================================================


def _encode(value: Any) -> str:
    if value is None or value is True or value is False:
        return json.dumps(value)
    if isinstance(value, (bool, np.bool_)):
        return json.dumps(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return FLOAT_FORMAT % value if math.isfinite(value) else "null"
    if isinstance(value, complex):
        return _encode({"re": value.real, "im": value.imag})
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, np.ndarray):
        return _encode(value.tolist())
    if isinstance(value, Mapping):
        items = ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in value.items())
        return "{" + items + "}"
    if isinstance(value, Iterable):
        return "[" + ", ".join(_encode(v) for v in value) + "]"
    raise TypeError(f"Cannot encode {type(value).__name__} as JSON")


def dump_json(payload: Any, versioned: bool = False) -> str:
    """Deterministic JSON; ``versioned`` prepends the schema field "v"."""
    if versioned and isinstance(payload, Mapping):
        payload = {"v": config.SCHEMA_VERSION, **payload}
    return _encode(payload)


def records_frame(records: Iterable[Dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(list(records))


def write_frame_csv(frame: pd.DataFrame, path: Union[str, Path, TextIO]) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")


def write_text(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n", encoding="utf-8")
    logger.debug("Artifact written", path=str(path), bytes=len(text))
    return path
