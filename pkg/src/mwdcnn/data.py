"""Image ingestion, patch sampling, augmentation and noise synthesis.

Images are 8-bit, gray or RGB, stored (H, W, C). Binary PGM/PPM are
parsed and written directly; PNG goes through Pillow. Sixteen-bit
sources are rejected rather than squeezed.

Noise is Gaussian with an 8-bit-scale standard deviation, added in the
normalized [0, 1] domain as sigma/255 and left unclipped so the additive
model stays exact during training; clipping happens only when a result
is exported as an image. Sampling runs Box-Muller over a Philox counter
stream, so every noise field is a pure function of its integer key.
"""

import io
import numpy as np
from pathlib import Path

from PIL import Image


class ImageFormatError(ValueError):
    """File is not a format this package reads."""


class BitDepthError(ImageFormatError):
    """Source samples are not 8-bit."""


_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def luminance(arr):
    """Collapse an (H, W, 3) array to (H, W) with BT.601 weights.

    Gray inputs, (H, W) or (H, W, 1), pass through as float64.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    return arr @ _LUMA_WEIGHTS


def quantize_u8(x):
    """Clip [0,1] floats and map to uint8, rounding halves away from zero."""
    v = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


class ImageBuffer:
    """8-bit image samples, shape (H, W, C) with C of 1 or 3."""

    def __init__(self, pixels, source=None):
        arr = np.asarray(pixels)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W) or (H, W, 1|3) samples, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"expected 8-bit samples, got {arr.dtype}")
        self.pixels = np.ascontiguousarray(arr)
        self.source = source

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return self.pixels.shape[2]

    def normalized(self):
        """Float view in [0, 1]; normalization is exactly x / 255."""
        return self.pixels.astype(np.float64) / 255.0

    @classmethod
    def from_normalized(cls, x, source=None):
        return cls(quantize_u8(x), source=source)

    def __repr__(self):
        return f"ImageBuffer({self.width}x{self.height}x{self.channels}, source={self.source!r})"


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _parse_pnm(raw: bytes, source):
    # magic, width, height, maxval; '#' comments allowed between tokens
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(raw):
            raise ImageFormatError(f"{source}: header ended early")
        c = raw[i:i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            nl = raw.find(b"\n", i)
            i = len(raw) if nl < 0 else nl + 1
        else:
            j = i
            while j < len(raw) and raw[j:j + 1] not in b" \t\r\n#":
                j += 1
            tokens.append(raw[i:j])
            i = j
    magic = tokens[0]
    channels = {b"P5": 1, b"P6": 3}.get(magic)
    if channels is None:
        raise ImageFormatError(f"{source}: not a binary PGM/PPM (magic {magic!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise ImageFormatError(f"{source}: non-numeric header fields") from None
    if maxval > 255:
        raise BitDepthError(f"{source}: maxval {maxval} means more than 8 bits per sample")
    if width < 1 or height < 1 or maxval < 1:
        raise ImageFormatError(f"{source}: bad dimensions {width}x{height}, maxval {maxval}")
    data = raw[i + 1:]  # exactly one whitespace byte separates header and raster
    need = width * height * channels
    if len(data) < need:
        raise ImageFormatError(f"{source}: raster has {len(data)} bytes, needs {need}")
    arr = np.frombuffer(data[:need], dtype=np.uint8).reshape(height, width, channels)
    return ImageBuffer(arr.copy(), source=source)


def _parse_png(raw: bytes, source):
    img = Image.open(io.BytesIO(raw))
    if img.mode in ("I", "I;16", "I;16B", "I;16L"):
        raise BitDepthError(f"{source}: 16-bit PNG is not supported")
    if img.mode == "P":
        img = img.convert("RGB")
    if img.mode not in ("L", "RGB"):
        raise ImageFormatError(f"{source}: unsupported PNG mode {img.mode!r}")
    return ImageBuffer(np.asarray(img), source=source)


def load_image(path) -> ImageBuffer:
    """Decode a PNG or a binary PGM/PPM; anything else is rejected."""
    path = Path(path)
    raw = path.read_bytes()
    name = str(path)
    if raw[:2] in (b"P5", b"P6"):
        return _parse_pnm(raw, name)
    if raw[:8] == _PNG_SIGNATURE:
        return _parse_png(raw, name)
    raise ImageFormatError(f"{name}: unrecognized format "
                           "(expected PNG or binary PGM/PPM)")


def save_image(buf: ImageBuffer, path) -> None:
    """Write by extension: .pgm (gray), .ppm (RGB) or .png."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        if buf.channels != 1:
            raise ValueError("PGM holds a single channel; convert or use .ppm")
        header = f"P5\n{buf.width} {buf.height}\n255\n".encode("ascii")
        path.write_bytes(header + buf.pixels.tobytes())
    elif suffix == ".ppm":
        if buf.channels != 3:
            raise ValueError("PPM holds three channels; use .pgm for gray")
        header = f"P6\n{buf.width} {buf.height}\n255\n".encode("ascii")
        path.write_bytes(header + buf.pixels.tobytes())
    elif suffix == ".png":
        arr = buf.pixels[:, :, 0] if buf.channels == 1 else buf.pixels
        Image.fromarray(arr).save(path, format="PNG")
    else:
        raise ValueError(f"unknown image extension {suffix!r}")


# ---------------------------------------------------------------------------
# patches, augmentation, noise
# ---------------------------------------------------------------------------

def extract_patches(img: ImageBuffer, count: int, size: int = 48, seed: int = 0):
    """Uniformly placed square crops; returns (patch, top, left) triples."""
    if img.height < size or img.width < size:
        raise ValueError(
            f"image is {img.width}x{img.height}, smaller than a {size}x{size} patch")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        y = int(rng.integers(0, img.height - size + 1))
        x = int(rng.integers(0, img.width - size + 1))
        out.append((img.pixels[y:y + size, x:x + size].copy(), y, x))
    return out


def augment(patch, mode: int):
    """Apply one of the 8 square symmetries (rotations and flips).

    Modes 0-3 rotate by 90deg * mode; modes 4-7 flip horizontally first,
    then rotate. Mode 0 is the identity.
    """
    if mode not in range(8):
        raise ValueError(f"augmentation mode must be 0..7, got {mode}")
    arr = np.asarray(patch)
    if mode >= 4:
        arr = np.fliplr(arr)
    return np.ascontiguousarray(np.rot90(arr, k=mode % 4))


def _box_muller(gen, n: int):
    pairs = (n + 1) // 2
    u1 = 1.0 - gen.random(pairs)  # (0, 1]: keeps the log finite
    u2 = gen.random(pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:n]


def standard_normal_field(shape, key):
    """I.i.d. standard normals as a pure function of an integer key."""
    gen = np.random.Generator(np.random.Philox(key=key))
    n = int(np.prod(shape))
    return _box_muller(gen, n).reshape(shape)


def add_awgn(patch, sigma: float, key):
    """Add N(0, (sigma/255)^2) noise to a [0, 1]-scaled array, unclipped."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    patch = np.asarray(patch, dtype=np.float64)
    if sigma == 0:
        return patch.copy()
    return patch + (sigma / 255.0) * standard_normal_field(patch.shape, key)


def to_chw(patch_u8, channels: int):
    """Coerce an (H, W, C) uint8 patch to a float (channels, H, W) in [0, 1]."""
    x = patch_u8.astype(np.float64) / 255.0
    if x.shape[2] != channels:
        if channels == 1:
            x = luminance(x)[:, :, None]
        else:
            x = np.repeat(x, 3, axis=2)
    return np.ascontiguousarray(x.transpose(2, 0, 1))


class PatchDataset:
    """Seeded training patches with frozen per-index noise.

    Records are assigned round-robin over the source images, so every
    source contributes whenever count >= len(images). Crop positions and
    augmentation modes come from one generator seeded at construction;
    the noise field (and, in blind mode, the per-patch sigma) for index i
    is a pure function of (seed, i). Regenerating the dataset with the
    same seed therefore reproduces patches and noise exactly.
    """

    def __init__(self, images, count: int, size: int = 48, channels: int = 1,
                 sigma: float = 25.0, blind: bool = False,
                 blind_range=(0.0, 55.0), seed: int = 0):
        if not images:
            raise ValueError("need at least one source image")
        if channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {channels}")
        self.size = size
        self.channels = channels
        self.sigma = float(sigma)
        self.blind = blind
        self.blind_range = (float(blind_range[0]), float(blind_range[1]))
        self.seed = int(seed)
        self.sources = [b.source or f"image-{j}" for j, b in enumerate(images)]

        rng = np.random.default_rng(seed)
        self.records = []           # (image index, top, left, augmentation mode)
        self._clean = []            # float64 CHW patches in [0, 1]
        for i in range(count):
            j = i % len(images)
            buf = images[j]
            if buf.height < size or buf.width < size:
                raise ValueError(f"{self.sources[j]} is {buf.width}x{buf.height}, "
                                 f"smaller than a {size}x{size} patch")
            y = int(rng.integers(0, buf.height - size + 1))
            x = int(rng.integers(0, buf.width - size + 1))
            mode = int(rng.integers(0, 8))
            raw = augment(buf.pixels[y:y + size, x:x + size], mode)
            self.records.append((j, y, x, mode))
            self._clean.append(to_chw(raw, channels))

    def __len__(self):
        return len(self.records)

    def _gen(self, i: int):
        return np.random.Generator(np.random.Philox(key=(self.seed << 64) | i))

    def sigma_for(self, i: int) -> float:
        if not self.blind:
            return self.sigma
        lo, hi = self.blind_range
        return float(lo + (hi - lo) * self._gen(i).random())

    def clean(self, i: int):
        return self._clean[i]

    def noisy(self, i: int):
        gen = self._gen(i)
        if self.blind:
            lo, hi = self.blind_range
            sigma = lo + (hi - lo) * float(gen.random())
        else:
            sigma = self.sigma
        base = self._clean[i]
        z = _box_muller(gen, base.size).reshape(base.shape)
        return base + (sigma / 255.0) * z

    def batch(self, indices, dtype=np.float32):
        """Stack (noisy, clean) NCHW arrays for the given record indices."""
        noisy = np.stack([self.noisy(int(i)) for i in indices]).astype(dtype)
        clean = np.stack([self._clean[int(i)] for i in indices]).astype(dtype)
        return noisy, clean

    def manifest_lines(self):
        lines = ["index,source,y,x,aug,sigma,seed"]
        for i, (j, y, x, mode) in enumerate(self.records):
            lines.append(f"{i},{self.sources[j]},{y},{x},{mode},"
                         f"{self.sigma_for(i):g},{self.seed}")
        return lines

    def save_manifest(self, path) -> None:
        Path(path).write_text("\n".join(self.manifest_lines()) + "\n", newline="\n")
