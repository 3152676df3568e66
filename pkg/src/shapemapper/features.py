"""Dense image features: multi-scale patch descriptors, a K-means codebook,
bag-of-descriptors histograms, a global embedding, and the embedding-distance
outlier filter.

The descriptors and the global embedding are hand-crafted stand-ins for
pretrained transformer features.  Real embeddings can be imported through the
``VECS`` vector store instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy import ndimage

from .render import ViewImage

log = logging.getLogger(__name__)

DESCRIPTOR_DIM = 6
EMBED_DIM = 512
EMBED_SEED = 20240512
INTENSITY_BINS = 64
RADIAL_BINS = 32
ORIENT_BINS = 32
# the silhouette profile is the most view-stable block; shading histograms vary with angle
BLOCK_WEIGHTS = (0.25, 3.0, 0.25)


def _pixels(image) -> np.ndarray:
    px = image.pixels if isinstance(image, ViewImage) else image
    px = np.asarray(px, dtype=np.float64)
    if px.ndim != 2 or px.size == 0:
        raise ValueError(f"expected a 2-D image, got shape {px.shape}")
    if not np.all(np.isfinite(px)):
        raise ValueError("image has non-finite pixels")
    return px


# --------------------------------------------------------------------------
# patch descriptors
# --------------------------------------------------------------------------

@dataclass
class DescriptorSet:
    descriptors: np.ndarray  # (m, q)
    scale_id: np.ndarray  # (m,) int
    scales: int

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        self.scale_id = np.asarray(self.scale_id, dtype=np.int64)
        if self.descriptors.ndim != 2 or len(self.descriptors) == 0:
            raise ValueError("a descriptor set needs at least one row")
        if len(self.scale_id) != len(self.descriptors):
            raise ValueError("scale_id must label every descriptor row")
        if not np.all(np.isfinite(self.descriptors)):
            raise ValueError("non-finite descriptor")

    def __len__(self):
        return len(self.descriptors)


def _positions(n: int) -> np.ndarray:
    return np.arange(n) / (n - 1) if n > 1 else np.full(1, 0.5)


def extract_patch_descriptors(image, patch: int = 8, scales: int = 4) -> DescriptorSet:
    """Per scale ``s`` blur with sigma ``0.5 * 2**s``, then describe every patch by
    [mean, std, mean |d/dx|, mean |d/dy|, centre x, centre y].

    Rows are scale-major, then patch rows top to bottom, then left to right.
    """
    px = _pixels(image)
    h, w = px.shape
    if patch < 1 or scales < 1:
        raise ValueError("patch and scales must be positive")
    if h % patch or w % patch:
        raise ValueError(f"image {h}x{w} is not divisible into {patch}x{patch} patches")
    ny, nx = h // patch, w // patch
    cy, cx = np.meshgrid(_positions(ny), _positions(nx), indexing="ij")
    rows = []
    for s in range(scales):
        blurred = ndimage.gaussian_filter(px, sigma=0.5 * 2**s, mode="reflect")
        gy, gx = np.gradient(blurred)

        def blocks(a):
            return a.reshape(ny, patch, nx, patch).transpose(0, 2, 1, 3).reshape(ny, nx, -1)

        b = blocks(blurred)
        d = np.stack(
            [
                b.mean(-1),
                b.std(-1),
                np.abs(blocks(gx)).mean(-1),
                np.abs(blocks(gy)).mean(-1),
                cx,
                cy,
            ],
            axis=-1,
        )
        rows.append(d.reshape(-1, DESCRIPTOR_DIM))
    desc = np.concatenate(rows)
    return DescriptorSet(desc, np.repeat(np.arange(scales), ny * nx), scales)


# --------------------------------------------------------------------------
# codebook
# --------------------------------------------------------------------------

@dataclass
class Codebook:
    centroids: np.ndarray  # (K, q)
    inertia: float = float("nan")

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("non-finite centroid")

    @property
    def K(self) -> int:
        return len(self.centroids)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # explicit differences, not the |x|^2 - 2xc + |c|^2 expansion, so exact ties stay ties
    d = x[:, None, :] - c[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def assign(x: np.ndarray, centroids: np.ndarray, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid (lowest index on ties) and the squared distance to it."""
    labels = np.empty(len(x), dtype=np.int64)
    best = np.empty(len(x))
    for s in range(0, len(x), chunk):
        d = _sq_dists(x[s : s + chunk], centroids)
        labels[s : s + chunk] = np.argmin(d, axis=1)
        best[s : s + chunk] = d[np.arange(len(d)), labels[s : s + chunk]]
    return labels, best


def _kmeans_pp(x: np.ndarray, K: int, rng) -> np.ndarray:
    centres = [x[rng.integers(len(x))]]
    d2 = _sq_dists(x, centres[0][None])[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            raise ValueError(f"fewer than {K} distinct descriptors")
        pick = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
        pick = min(pick, len(x) - 1)
        centres.append(x[pick])
        d2 = np.minimum(d2, _sq_dists(x, x[pick][None])[:, 0])
    return np.array(centres)


def _reseed_empty(x, centroids, labels, best) -> np.ndarray:
    """Move each empty centroid onto the point farthest from its centroid."""
    counts = np.bincount(labels, minlength=len(centroids))
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return empty
    far = np.argsort(-best, kind="stable")
    for k, idx in zip(empty, far):
        centroids[k] = x[idx]
        labels[idx] = k
        best[idx] = 0.0
    log.debug("reseeded %d empty clusters", empty.size)
    return empty


def kmeans(
    x,
    K: int = 20,
    seed=0,
    batch_size: int = 1024,
    epochs: int = 50,
    mode: str = "minibatch",
    history: list | None = None,
) -> Codebook:
    """K-means with k-means++ seeding.

    ``mode="minibatch"`` runs ``epochs`` shuffled passes of running-mean updates;
    ``mode="lloyd"`` runs ``epochs`` full-batch Lloyd iterations (inertia is then
    non-increasing).  Clusters left empty after a pass are reseeded at the point
    farthest from its centroid.  ``history`` receives the inertia after each pass.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or not np.all(np.isfinite(x)):
        raise ValueError("k-means needs a finite 2-D array")
    if K < 1:
        raise ValueError(f"K must be positive, got {K}")
    if len(x) < K:
        raise ValueError(f"need at least K={K} descriptors, got {len(x)}")
    if mode not in ("minibatch", "lloyd"):
        raise ValueError(f"unknown k-means mode {mode!r}")
    rng = np.random.default_rng(seed)
    c = _kmeans_pp(x, K, rng)
    counts = np.zeros(K)
    for _ in range(epochs):
        if mode == "lloyd":
            labels, _ = assign(x, c)
            for k in range(K):
                members = labels == k
                if members.any():
                    c[k] = x[members].mean(axis=0)
        else:
            order = rng.permutation(len(x))
            for s in range(0, len(x), batch_size):
                xb = x[order[s : s + batch_size]]
                lb, _ = assign(xb, c)
                n_k = np.bincount(lb, minlength=K).astype(float)
                sums = np.zeros_like(c)
                np.add.at(sums, lb, xb)
                hit = n_k > 0
                counts[hit] += n_k[hit]
                c[hit] += (sums[hit] - n_k[hit, None] * c[hit]) / counts[hit, None]
        labels, best = assign(x, c)
        reseeded = _reseed_empty(x, c, labels, best)
        if reseeded.size:
            counts[reseeded] = 1.0
            labels, best = assign(x, c)
        if history is not None:
            history.append(float(best.sum()))
    _, best = assign(x, c)
    return Codebook(c, float(best.sum()))


def fit_codebook(
    images,
    K: int = 20,
    image_sample: int = 500,
    keep_frac: float = 0.2,
    seed=0,
    patch: int = 8,
    scales: int = 4,
    batch_size: int = 1024,
    epochs: int = 50,
) -> Codebook:
    """Pool descriptors from up to ``image_sample`` random images, keep a random
    ``keep_frac`` of them, and cluster into ``K`` centroids."""
    images = list(images)
    if not images:
        raise ValueError("fit_codebook needs images")
    if not 0 < keep_frac <= 1:
        raise ValueError(f"keep_frac must be in (0, 1], got {keep_frac}")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(images), size=min(image_sample, len(images)), replace=False))
    pooled = np.concatenate([extract_patch_descriptors(images[i], patch, scales).descriptors for i in pick])
    keep = rng.random(len(pooled)) < keep_frac
    kept = pooled[keep]
    if len(kept) < K:
        raise ValueError(f"only {len(kept)} descriptors kept, fewer than K={K}")
    return kmeans(kept, K, seed=rng.integers(2**63), batch_size=batch_size, epochs=epochs)


# --------------------------------------------------------------------------
# bag of descriptors
# --------------------------------------------------------------------------

@dataclass
class BagFeature:
    z_vit: np.ndarray  # (scales * K,)
    scales: int
    K: int


def bag_of_descriptors(desc: DescriptorSet, codebook: Codebook) -> BagFeature:
    """Per-scale normalized histograms of nearest-centroid labels, scale-major."""
    if desc.descriptors.shape[1] != codebook.centroids.shape[1]:
        raise ValueError(
            f"descriptor dim {desc.descriptors.shape[1]} does not match codebook dim {codebook.centroids.shape[1]}"
        )
    K = codebook.K
    labels, _ = assign(desc.descriptors, codebook.centroids)
    hist = np.zeros((desc.scales, K))
    np.add.at(hist, (desc.scale_id, labels), 1.0)
    totals = hist.sum(axis=1, keepdims=True)
    if np.any(totals == 0):
        raise ValueError("a scale has no descriptors")
    return BagFeature((hist / totals).reshape(-1), desc.scales, K)


# --------------------------------------------------------------------------
# global embedding
# --------------------------------------------------------------------------

_PROJECTION: dict = {}


def _projection(dim: int) -> np.ndarray:
    if dim not in _PROJECTION:
        rng = np.random.default_rng(EMBED_SEED)
        n_in = INTENSITY_BINS + RADIAL_BINS + ORIENT_BINS
        _PROJECTION[dim] = rng.normal(size=(dim, n_in)) / np.sqrt(n_in)
    return _PROJECTION[dim]


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def global_descriptor(image) -> np.ndarray:
    """Intensity histogram, radial silhouette profile and gradient-orientation
    histogram; each block unit-normalized and weighted (128 values).

    The first two blocks are made insensitive to zoom: intensities are counted
    over foreground pixels only (all pixels for a blank image), and the radial
    block is the foreground fraction of each ring about the image centre with
    radius scaled to twice the RMS foreground radius, so the silhouette always
    fills about the same rings.  Rings beyond that fall in the last bin.
    """
    px = _pixels(image)
    h, w = px.shape
    fg_mask = px > 0
    vals = px[fg_mask] if fg_mask.any() else px
    inten = np.histogram(np.clip(vals, 0, 1), bins=INTENSITY_BINS, range=(0.0, 1.0))[0].astype(float)

    yy, xx = np.mgrid[0:h, 0:w]
    r = np.hypot(yy - (h - 1) / 2, xx - (w - 1) / 2)
    scale = 2.0 * np.sqrt(np.mean(r[fg_mask] ** 2)) if fg_mask.any() else w / 2
    scale = max(scale, 1.0)
    ring = np.minimum((r / scale * RADIAL_BINS).astype(int), RADIAL_BINS - 1).ravel()
    fg = np.bincount(ring, fg_mask.ravel().astype(float), RADIAL_BINS)
    cnt = np.bincount(ring, minlength=RADIAL_BINS)
    radial = np.divide(fg, cnt, out=np.zeros(RADIAL_BINS), where=cnt > 0)

    gy, gx = np.gradient(px)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)
    orient = np.histogram(ang, bins=ORIENT_BINS, range=(-np.pi, np.pi), weights=mag)[0]
    wi, wr, wo = BLOCK_WEIGHTS
    return np.concatenate([wi * _unit(inten), wr * _unit(radial), wo * _unit(orient)])


def global_embed(image, dim: int = EMBED_DIM) -> np.ndarray:
    """Fixed random projection of :func:`global_descriptor`, unit-normalized."""
    z = _projection(dim) @ global_descriptor(image)
    n = np.linalg.norm(z)
    if n == 0:
        raise ValueError("image produced a zero embedding")
    return z / n


# --------------------------------------------------------------------------
# embedding-distance filter
# --------------------------------------------------------------------------

def avg_embedding_distance(img_emb, template_embs) -> float:
    """Mean cosine distance ``1 - cos`` between an image embedding and each template."""
    a = np.asarray(img_emb, dtype=np.float64).reshape(-1)
    T = np.asarray(template_embs, dtype=np.float64)
    if T.ndim == 1:
        T = T[None]
    if len(T) == 0:
        raise ValueError("need at least one template embedding")
    if T.shape[1] != a.size:
        raise ValueError(f"template dim {T.shape[1]} does not match image dim {a.size}")
    na = np.linalg.norm(a)
    nt = np.linalg.norm(T, axis=1)
    if na == 0 or np.any(nt == 0):
        raise ValueError("cosine distance is undefined for a zero vector")
    cos = (T @ a) / (nt * na)
    return float(np.mean(1.0 - cos))


def filter_dataset(avg_distances) -> np.ndarray:
    """Keep mask: ``d <= mean + 2 * std`` with the population standard deviation."""
    d = np.asarray(avg_distances, dtype=np.float64).reshape(-1)
    if d.size < 2:
        raise ValueError(f"filtering needs at least 2 distances, got {d.size}")
    if not np.all(np.isfinite(d)):
        raise ValueError("non-finite distance")
    mu = d.mean()
    return d <= mu + 2.0 * d.std()


# --------------------------------------------------------------------------
# templates
# --------------------------------------------------------------------------

@dataclass
class TemplateBank:
    templates: list
    embeddings: np.ndarray | None = None  # (n, e), aligned with templates

    def __post_init__(self):
        if self.embeddings is not None:
            self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
            if len(self.embeddings) != len(self.templates):
                raise ValueError(f"{len(self.embeddings)} embeddings for {len(self.templates)} templates")

    def __len__(self):
        return len(self.templates)

    @classmethod
    def shipped(cls) -> "TemplateBank":
        text = resources.files("shapemapper").joinpath("data/templates.txt").read_text(encoding="utf-8")
        return cls([line for line in text.splitlines() if line.strip()])

    def prompts(self, text: str) -> list[str]:
        """Each template with ``text`` appended."""
        return [f"{t} {text}" for t in self.templates]

    def with_embeddings(self, vectors) -> "TemplateBank":
        return TemplateBank(list(self.templates), vectors)
