# Copyright (C) 2024 refpose contributors
# SPDX-License-Identifier: BSD-2-Clause

"""File formats: ASCII PLY clouds, raw depth maps with JSON sidecars, binary PGM masks,
float32 feature matrices, frame/pose JSON and correlation CSV dumps."""

from __future__ import annotations

import json
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .geometry import BinaryMask, CameraIntrinsics, DepthMap, FrameTransform, PointCloud

if TYPE_CHECKING:  # pragma: no cover
    from typing import Any, Union

    PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    """JSON header belonging to a binary file (``name.bin`` -> ``name.json``)."""
    return Path(path).with_suffix(".json")


def read_ply(path: PathLike) -> PointCloud:
    """Read an ASCII 1.0 PLY file with ``x y z`` and optional ``nx ny nz`` vertex properties."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file.")

    n_vertices = None
    properties: list[str] = []
    in_vertex = False
    body_start = None
    for lineno, line in enumerate(lines[1:], start=1):
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format" and tokens[1:3] != ["ascii", "1.0"]:
            raise ValueError(f"{path}:{lineno + 1}: only 'format ascii 1.0' is supported.")
        if tokens[0] == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                n_vertices = int(tokens[2])
        elif tokens[0] == "property" and in_vertex:
            properties.append(tokens[-1])
        elif tokens[0] == "end_header":
            body_start = lineno + 1
            break

    if n_vertices is None or body_start is None:
        raise ValueError(f"{path}: missing vertex element or end_header.")
    for axis in ("x", "y", "z"):
        if axis not in properties:
            raise ValueError(f"{path}: vertex property '{axis}' missing.")

    rows = np.array([line.split() for line in lines[body_start : body_start + n_vertices]], dtype=np.float64)
    if rows.shape != (n_vertices, len(properties)):
        raise ValueError(f"{path}: expected {n_vertices} vertices with {len(properties)} properties.")

    points = rows[:, [properties.index(axis) for axis in ("x", "y", "z")]]
    normals = None
    if all(axis in properties for axis in ("nx", "ny", "nz")):
        normals = rows[:, [properties.index(axis) for axis in ("nx", "ny", "nz")]]
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / np.where(norms > 0, norms, 1.0)
    return PointCloud(points, normals)


def write_ply(path: PathLike, cloud: PointCloud) -> None:
    """Write an ASCII 1.0 PLY file (normals included if present)."""
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    header += [f"property float {axis}" for axis in ("x", "y", "z")]
    data = cloud.points
    if cloud.normals is not None:
        header += [f"property float {axis}" for axis in ("nx", "ny", "nz")]
        data = np.hstack([cloud.points, cloud.normals])
    header.append("end_header")
    body = [" ".join(f"{value:.17g}" for value in row) for row in data]
    Path(path).write_text("\n".join(header + body) + "\n", encoding="ascii")


def read_depth(path: PathLike) -> tuple[DepthMap, CameraIntrinsics]:
    """Read a little-endian float32 depth map and its JSON sidecar (size and intrinsics)."""
    header = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    values = np.fromfile(Path(path), dtype="<f4").astype(np.float64)
    depth = DepthMap(int(header["width"]), int(header["height"]), values)
    return depth, CameraIntrinsics(header["fx"], header["fy"], header["cx"], header["cy"])


def write_depth(path: PathLike, depth: DepthMap, k: CameraIntrinsics) -> None:
    depth.values.astype("<f4").tofile(Path(path))
    header = {"width": depth.width, "height": depth.height, "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy}
    sidecar_path(path).write_text(json.dumps(header), encoding="utf-8")


def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Split the first ``count`` whitespace separated header tokens (comments skipped)."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm_mask(path: PathLike) -> BinaryMask:
    """Read a binary (P5) PGM; nonzero pixels are masked."""
    data = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file.")
    width, height, maxval = (int(token) for token in tokens[1:])
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    raster = np.frombuffer(data, dtype=dtype, count=width * height, offset=offset)
    return BinaryMask(width, height, raster != 0)


def write_pgm_mask(path: PathLike, mask: BinaryMask) -> None:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + (mask.bits.astype(np.uint8) * 255).tobytes())


def read_feature_matrix(path: PathLike) -> np.ndarray:
    """Read an ``N x d`` little-endian float32 matrix with sidecar ``{"rows": N, "cols": d}``."""
    header = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    rows, cols = int(header["rows"]), int(header["cols"])
    values = np.fromfile(Path(path), dtype="<f4")
    if values.size != rows * cols:
        raise ValueError(f"{path}: holds {values.size} values, sidecar announces {rows}x{cols}.")
    return values.reshape(rows, cols).astype(np.float64)


def write_feature_matrix(path: PathLike, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix))
    matrix.astype("<f4").tofile(Path(path))
    sidecar_path(path).write_text(json.dumps({"rows": matrix.shape[0], "cols": matrix.shape[1]}), encoding="utf-8")


def read_frame(path: PathLike) -> FrameTransform:
    return FrameTransform.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_frame(path: PathLike, frame: FrameTransform) -> None:
    Path(path).write_text(json.dumps(frame.to_dict(), indent=2), encoding="utf-8")


def write_correlation_csv(path: PathLike, logits: np.ndarray) -> None:
    """Dump a logit matrix; row 0 / column 0 belong to the background token."""
    np.savetxt(Path(path), np.asarray(logits), delimiter=",", fmt="%.17g")


def read_correlation_csv(path: PathLike) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(Path(path), delimiter=",", dtype=np.float64))


def read_json(path: PathLike) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_json(path: PathLike, data: Any) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=False) + "\n", encoding="utf-8")
