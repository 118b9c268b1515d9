"""Residual-dataset archives: versioned header plus exact-precision rows.

Text format; floats are stored as C99 hex literals (float.hex), so a
read-back is bitwise identical to what was written. Emulator conditioning is
sensitive to input perturbations, hence no decimal rounding anywhere.

    gparareal-archive v1
    system = fhn
    dimension = 2
    fine_order = 4
    coarse_order = 2
    fine_steps_per_slice = 4000
    coarse_steps_per_slice = 4
    slice_width = 0x1.0000000000000p+0
    sigma2 = <hex> <hex>              # optional, one per output dimension
    ell2 = <hex> <hex>                # optional
    rows = 200
    ---
    <x_1..x_d hex> <y_1..y_d hex> <provenance>
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .gp_emulator import Hyperparameters, ResidualDataset

__all__ = [
    "ArchiveHeader",
    "ArchiveError",
    "write_archive",
    "read_archive",
    "compatibility_warnings",
]

_MAGIC = "gparareal-archive"
_VERSION = 1


class ArchiveError(ValueError):
    """Malformed or incompatible archive file."""


@dataclass(frozen=True)
class ArchiveHeader:
    """Run metadata stored with the rows, enough for compatibility checks."""

    system: str
    dimension: int
    fine_order: int
    coarse_order: int
    fine_steps_per_slice: int
    coarse_steps_per_slice: int
    slice_width: float
    sigma2: tuple[float, ...] | None = None
    ell2: tuple[float, ...] | None = None
    version: int = _VERSION

    def hyperparameters(self) -> list[Hyperparameters] | None:
        if self.sigma2 is None or self.ell2 is None:
            return None
        return [Hyperparameters(s, l) for s, l in zip(self.sigma2, self.ell2)]


def _hex_list(values) -> str:
    return " ".join(float(v).hex() for v in values)


def write_archive(path: str | Path, dataset: ResidualDataset, header: ArchiveHeader) -> None:
    if header.dimension != dataset.dimension:
        raise ArchiveError(
            f"header dimension {header.dimension} does not match dataset "
            f"dimension {dataset.dimension}"
        )
    lines = [f"{_MAGIC} v{header.version}"]
    lines.append(f"system = {header.system}")
    lines.append(f"dimension = {header.dimension}")
    lines.append(f"fine_order = {header.fine_order}")
    lines.append(f"coarse_order = {header.coarse_order}")
    lines.append(f"fine_steps_per_slice = {header.fine_steps_per_slice}")
    lines.append(f"coarse_steps_per_slice = {header.coarse_steps_per_slice}")
    lines.append(f"slice_width = {float(header.slice_width).hex()}")
    if header.sigma2 is not None:
        lines.append(f"sigma2 = {_hex_list(header.sigma2)}")
    if header.ell2 is not None:
        lines.append(f"ell2 = {_hex_list(header.ell2)}")
    lines.append(f"rows = {len(dataset)}")
    lines.append("---")
    inputs, outputs, tags = dataset.inputs, dataset.outputs, dataset.provenance
    for x, y, tag in zip(inputs, outputs, tags):
        lines.append(f"{_hex_list(x)} {_hex_list(y)} {tag}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _parse_header_floats(value: str, key: str, lineno: int) -> tuple[float, ...]:
    try:
        return tuple(float.fromhex(tok) for tok in value.split())
    except ValueError as exc:
        raise ArchiveError(f"line {lineno}: bad hex floats for {key}") from exc


def read_archive(path: str | Path) -> tuple[ArchiveHeader, ResidualDataset]:
    """Parse an archive; lossless inverse of write_archive.

    Raises ArchiveError on unknown magic/version, malformed header fields,
    corrupt rows, or row/header dimension mismatch.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise ArchiveError(f"{path}: empty file")
    magic = lines[0].strip()
    if not magic.startswith(_MAGIC):
        raise ArchiveError(f"{path}: not a residual archive (bad magic {magic!r})")
    try:
        version = int(magic.split("v")[-1])
    except ValueError as exc:
        raise ArchiveError(f"{path}: malformed version in {magic!r}") from exc
    if version != _VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {version}")

    header_fields: dict[str, object] = {"version": version}
    rows_declared: int | None = None
    body_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if stripped == "---":
            body_start = lineno
            break
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ArchiveError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key == "system":
            header_fields["system"] = value
        elif key in ("dimension", "fine_order", "coarse_order",
                     "fine_steps_per_slice", "coarse_steps_per_slice"):
            try:
                header_fields[key] = int(value)
            except ValueError as exc:
                raise ArchiveError(f"line {lineno}: bad integer for {key}") from exc
        elif key == "slice_width":
            header_fields[key] = _parse_header_floats(value, key, lineno)[0]
        elif key in ("sigma2", "ell2"):
            header_fields[key] = _parse_header_floats(value, key, lineno)
        elif key == "rows":
            rows_declared = int(value)
        else:
            raise ArchiveError(f"line {lineno}: unknown header key {key!r}")
    if body_start is None:
        raise ArchiveError(f"{path}: missing '---' body separator")
    required = ("system", "dimension", "fine_order", "coarse_order",
                "fine_steps_per_slice", "coarse_steps_per_slice", "slice_width")
    missing = [k for k in required if k not in header_fields]
    if missing:
        raise ArchiveError(f"{path}: missing header fields: {', '.join(missing)}")
    header = ArchiveHeader(**header_fields)

    dim = header.dimension
    dataset = ResidualDataset(dim)
    n_rows = 0
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        stripped = line.strip()
        if not stripped:
            continue
        tokens = stripped.split()
        if len(tokens) != 2 * dim + 1:
            raise ArchiveError(
                f"line {lineno}: expected {2 * dim} hex floats + provenance, "
                f"got {len(tokens)} tokens"
            )
        try:
            values = [float.fromhex(tok) for tok in tokens[: 2 * dim]]
        except ValueError as exc:
            raise ArchiveError(f"line {lineno}: corrupt row (bad hex float)") from exc
        dataset.append(values[:dim], values[dim:], tokens[-1])
        n_rows += 1
    if rows_declared is not None and rows_declared != n_rows:
        raise ArchiveError(
            f"{path}: header declares {rows_declared} rows but body has {n_rows}"
        )
    return header, dataset


def compatibility_warnings(
    header: ArchiveHeader,
    system: str,
    dimension: int,
    fine_order: int,
    coarse_order: int,
    fine_steps_per_slice: int,
    coarse_steps_per_slice: int,
    slice_width: float,
) -> list[str]:
    """Compare an archive header against a run setup.

    A dimension mismatch is an error (raised); everything else returns
    warnings only, since far-away legacy data merely degrades usefulness.
    The window length is deliberately not compared: a run over a doubled
    interval with doubled slices and step counts keeps the slice width and
    per-slice steps equal and reuses the archive as-is.
    """
    if header.dimension != dimension:
        raise ArchiveError(
            f"archive dimension {header.dimension} does not match run "
            f"dimension {dimension}"
        )
    notes = []
    if header.system != system:
        notes.append(f"archive system {header.system!r} != run system {system!r}")
    if header.fine_order != fine_order:
        notes.append(f"archive fine_order {header.fine_order} != run {fine_order}")
    if header.coarse_order != coarse_order:
        notes.append(f"archive coarse_order {header.coarse_order} != run {coarse_order}")
    if header.fine_steps_per_slice != fine_steps_per_slice:
        notes.append(
            f"archive fine steps/slice {header.fine_steps_per_slice} != run "
            f"{fine_steps_per_slice}"
        )
    if header.coarse_steps_per_slice != coarse_steps_per_slice:
        notes.append(
            f"archive coarse steps/slice {header.coarse_steps_per_slice} != run "
            f"{coarse_steps_per_slice}"
        )
    if abs(header.slice_width - slice_width) > 1e-12 * max(1.0, abs(slice_width)):
        notes.append(f"archive slice width {header.slice_width} != run {slice_width}")
    return notes
