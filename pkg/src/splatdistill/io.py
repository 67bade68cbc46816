"""File formats: splat PLY, OBJ meshes, PPM images, CSV logs."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .splat.cloud import GaussianCloud
from .splat.surface import TriangleMesh

# zeroth-order spherical harmonic basis constant; viewers expect colors as SH DC terms
SH_C0 = 0.28209479177387814

PLY_PROPERTIES = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity",
    "f_dc_0", "f_dc_1", "f_dc_2",
)


def write_ply(path, cloud: GaussianCloud) -> None:
    """Binary little-endian PLY in the layout common splat viewers read.

    Scales are stored as logs, opacity as a logit, color as SH DC terms.
    """
    n = len(cloud)
    data = np.empty(n, dtype=[(p, "<f4") for p in PLY_PROPERTIES])
    data["x"], data["y"], data["z"] = cloud.means.T
    for i in range(3):
        data[f"scale_{i}"] = cloud.log_scales[:, i]
        data[f"f_dc_{i}"] = (cloud.colors[:, i] - 0.5) / SH_C0
    for i in range(4):
        data[f"rot_{i}"] = cloud.quats[:, i]
    data["opacity"] = cloud.opacity_logits
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in PLY_PROPERTIES]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


_PLY_TYPES = {
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
}


def read_ply(path) -> GaussianCloud:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise SchemaError(f"{path}: not a PLY file")
        fmt = None
        count = None
        props = []
        while True:
            line = fh.readline()
            if not line:
                raise SchemaError(f"{path}: truncated header")
            tokens = line.decode("ascii").split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                if tokens[1] != "vertex":
                    raise SchemaError(f"{path}: unsupported element {tokens[1]!r}")
                count = int(tokens[2])
            elif tokens[0] == "property":
                if tokens[1] == "list":
                    raise SchemaError(f"{path}: list properties are not supported")
                props.append((tokens[2], _PLY_TYPES[tokens[1]]))
            elif tokens[0] == "end_header":
                break
        if fmt not in ("binary_little_endian", "binary_big_endian"):
            raise SchemaError(f"{path}: unsupported PLY format {fmt!r}")
        endian = "<" if fmt == "binary_little_endian" else ">"
        dtype = np.dtype([(name, endian + t) for name, t in props])
        data = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype, count=count)
    missing = [p for p in PLY_PROPERTIES if p not in dtype.names]
    if missing:
        raise SchemaError(f"{path}: missing properties {missing}")

    def cols(names):
        return np.stack([data[n].astype(np.float64) for n in names], axis=1)

    return GaussianCloud(
        means=cols(["x", "y", "z"]),
        log_scales=cols([f"scale_{i}" for i in range(3)]),
        quats=cols([f"rot_{i}" for i in range(4)]),
        opacity_logits=data["opacity"].astype(np.float64),
        colors=np.clip(0.5 + SH_C0 * cols([f"f_dc_{i}" for i in range(3)]), 0.0, 1.0),
    )


def read_obj(path) -> TriangleMesh:
    """Vertices and faces from an OBJ file; polygons are fan-triangulated."""
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] == "v":
                verts.append([float(x) for x in tokens[1:4]])
            elif tokens[0] == "f":
                ids = []
                for tok in tokens[1:]:
                    i = int(tok.split("/")[0])
                    ids.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(ids) - 1):
                    faces.append([ids[0], ids[k], ids[k + 1]])
    return TriangleMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3),
                        np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 with maxval 255; input floats in [0, 1], shape (H, W, 3) or (H, W)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    h, w = img.shape[:2]
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P6":
        raise SchemaError(f"{path}: only binary P6 PPM is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos += 1
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    data = np.frombuffer(raw, dtype=dtype, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).astype(np.float64) / maxval


def write_csv(path, rows: list[dict], fieldnames=None) -> None:
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))
