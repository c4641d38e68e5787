import numpy as np
import pytest

from dualdomain.pgm import save_gray


def natural_images(count=36, size=128):
    """Grayscale crops of the scikit-image sample photographs.

    Deterministic: the same (count, size) always yields the same list.
    """
    import skimage.data as data

    sources = [
        data.camera(), data.moon(), data.coins(), data.page(), data.text(),
        data.brick(), data.grass(), data.gravel(), data.clock(),
    ]
    for rgb in (data.astronaut(), data.coffee(), data.cat(), data.rocket(),
                data.immunohistochemistry(), data.hubble_deep_field()):
        gray = rgb @ np.array([0.299, 0.587, 0.114])
        sources.append(np.clip(gray, 0, 255).astype(np.uint8))

    # Round-robin across sources so no single photograph dominates.
    per_source = []
    for img in sources:
        img = np.asarray(img, dtype=np.float64)
        h, w = img.shape
        tiles = [
            img[r0 : r0 + size, c0 : c0 + size].copy()
            for r0 in range(0, h - size + 1, size)
            for c0 in range(0, w - size + 1, size)
        ]
        per_source.append(tiles)
    crops = []
    depth = 0
    while len(crops) < count:
        took = False
        for tiles in per_source:
            if depth < len(tiles):
                crops.append(tiles[depth])
                took = True
                if len(crops) >= count:
                    return crops
        if not took:
            raise RuntimeError(f"only {len(crops)} crops available, wanted {count}")
        depth += 1
    return crops


@pytest.fixture(scope="session")
def corpus():
    return natural_images()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, corpus):
    """The corpus written out as PGM files."""
    root = tmp_path_factory.mktemp("corpus")
    for i, img in enumerate(corpus):
        save_gray(img, root / f"img{i:03d}.pgm")
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
