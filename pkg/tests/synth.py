"""Synthetic binaries for end-to-end tests."""

import numpy as np

DOMINANT = {"alpha": 0x10, "beta": 0x80, "gamma": 0xE0}


def textured_bytes(rng, dominant, size):
    """Mostly ``dominant`` with a sprinkle of uniform noise bytes."""
    data = np.full(size, dominant, dtype=np.uint8)
    noise = rng.random(size) < 0.2
    data[noise] = rng.integers(0, 256, int(noise.sum()), dtype=np.uint8)
    return data.tobytes()


def write_dataset(root, per_class=20, seed=0, classes=DOMINANT, sizes=(3000, 9000)):
    rng = np.random.default_rng(seed)
    for label, value in classes.items():
        d = root / label
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            size = int(rng.integers(*sizes))
            (d / f"s{i:03d}.bin").write_bytes(textured_bytes(rng, value, size))
    return root


def texture_images(n_per_class, side=256, seed=0, classes=DOMINANT):
    """In-memory byteplot-like images per class; returns (X, y)."""
    rng = np.random.default_rng(seed)
    X, y = [], []
    for label, value in classes.items():
        for _ in range(n_per_class):
            X.append(np.frombuffer(textured_bytes(rng, value, side * side), np.uint8)
                     .reshape(side, side))
            y.append(label)
    return np.stack(X), np.array(y)
