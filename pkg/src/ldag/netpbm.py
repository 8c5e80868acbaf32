"""Binary netpbm I/O: P5 grayscale (masks, prior maps) and P6 color (scenes).

Masks are strict 0/255 single-channel images; scene images are 3 x H x W
floats in [0, 1] quantized to 8 bits, so write/read round-trips exactly.
"""

import numpy as np

from .errors import FormatError


def _read_header(blob: bytes, magic: bytes):
    if blob[:2] != magic:
        raise FormatError(f"expected {magic.decode()} header, got {blob[:2]!r}", offset=0)
    pos = 2
    fields = []
    while len(fields) < 3:
        # skip whitespace and comment lines between header tokens
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise FormatError(f"malformed header token {token!r}", offset=start)
        fields.append(int(token))
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after maxval", offset=pos)
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, only 255 is accepted", offset=pos)
    return width, height, pos


def read_pgm(path) -> np.ndarray:
    """P5 file -> H x W uint8 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    width, height, pos = _read_header(blob, b"P5")
    expected = width * height
    actual = len(blob) - pos
    if actual != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, actual {actual}", offset=pos)
    return np.frombuffer(blob, dtype=np.uint8, count=expected, offset=pos).reshape(height, width).copy()


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.asarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise FormatError(f"PGM wants H x W data, got shape {gray.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def read_ppm(path) -> np.ndarray:
    """P6 file -> 3 x H x W float32 array in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    width, height, pos = _read_header(blob, b"P6")
    expected = width * height * 3
    actual = len(blob) - pos
    if actual != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, actual {actual}", offset=pos)
    flat = np.frombuffer(blob, dtype=np.uint8, count=expected, offset=pos)
    hwc = flat.reshape(height, width, 3).astype(np.float32) / 255.0
    return np.ascontiguousarray(hwc.transpose(2, 0, 1))


def write_ppm(path, image: np.ndarray) -> None:
    """3 x H x W floats in [0, 1] -> P6 file (8-bit quantization)."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[0] != 3:
        raise FormatError(f"PPM wants 3 x H x W data, got shape {image.shape}")
    hwc = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{image.shape[2]} {image.shape[1]}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(hwc).tobytes())


def read_mask(path) -> np.ndarray:
    """P5 file restricted to {0, 255} -> H x W uint8 array of {0, 1}."""
    gray = read_pgm(path)
    bad = (gray != 0) & (gray != 255)
    if bad.any():
        raise FormatError(f"mask contains {int(bad.sum())} pixels outside {{0, 255}}")
    return (gray == 255).astype(np.uint8)


def write_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise FormatError("mask values must be binary (0 or 1)")
    write_pgm(path, (mask * 255).astype(np.uint8))
