"""Image artifacts: binary PGM files and PNG previews"""
import os
import numpy as np

os.environ.setdefault("PYGAME_HIDE_SUPPORT_PROMPT", "1")
import pygame

from typing import List, Optional, Sequence


def mask_to_gray(mask) -> np.ndarray:
    """True -> 255, False -> 0"""
    return np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)


def labels_to_gray(labels, num_classes: int) -> np.ndarray:
    """Class indices spread over 0..255"""
    labels = np.asarray(labels, dtype=np.int64)
    scale = 255 // max(num_classes - 1, 1)
    return np.clip(labels * scale, 0, 255).astype(np.uint8)


def field_to_gray(field, high: float = 1.0) -> np.ndarray:
    """Values in [0, high] -> 0..255; NaN shows as 0"""
    values = np.nan_to_num(np.asarray(field, dtype=np.float64) / high, nan=0.0, posinf=1.0, neginf=0.0)
    return np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def tile(images: Sequence[np.ndarray], gap: int = 0) -> np.ndarray:
    """Side by side; a gap draws black columns between panels"""
    if not images:
        raise ValueError("tile needs at least one image")
    panels: List[np.ndarray] = []
    for i, img in enumerate(images):
        if i and gap:
            panels.append(np.zeros((img.shape[0], gap), dtype=img.dtype))
        panels.append(img)
    return np.concatenate(panels, axis=1)


def write_pgm(path: str, gray) -> str:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError(f"PGM needs a 2D array, got shape {list(gray.shape)}")
    if gray.dtype != np.uint8:
        raise ValueError(f"PGM needs uint8 data, got {gray.dtype}")
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    height, width = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(gray).tobytes())
    return path


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()

    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos].decode("ascii"))
    pos += 1  # single whitespace before the raster

    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != "P5" or maxval != 255:
        raise ValueError(f"{path}: only 8-bit binary PGM is supported")
    data = raw[pos:pos + width * height]
    if len(data) != width * height:
        raise ValueError(f"{path}: expected {width * height} pixels, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy()


def save_png(path: str, gray, scale: int = 4, palette: Optional[np.ndarray] = None) -> str:
    """Upscaled preview; palette maps gray levels to RGB rows"""
    gray = np.asarray(gray, dtype=np.uint8)
    if palette is None:
        rgb = np.repeat(gray[:, :, None], 3, axis=2)
    else:
        rgb = np.asarray(palette, dtype=np.uint8)[gray]

    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)

    # surfarray is indexed [x, y]
    surface = pygame.surfarray.make_surface(np.ascontiguousarray(rgb.transpose(1, 0, 2)))
    if scale > 1:
        surface = pygame.transform.scale(surface, (gray.shape[1] * scale, gray.shape[0] * scale))
    pygame.image.save(surface, path)
    return path


def agreement_palette() -> np.ndarray:
    """0 -> disagreement red, 255 -> agreement green, ramp between"""
    ramp = np.arange(256, dtype=np.float64) / 255.0
    palette = np.zeros((256, 3))
    palette[:, 0] = 200 * (1.0 - ramp) + 40 * ramp
    palette[:, 1] = 60 * (1.0 - ramp) + 200 * ramp
    palette[:, 2] = 60
    return np.rint(palette).astype(np.uint8)
