"""Regenerates the bundled 128x128 content and style images (P6 PPM)."""
import os
import numpy as np

SIZE = 128
HERE = os.path.dirname(os.path.abspath(__file__))


def save(path, img):
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (SIZE, SIZE))
        f.write(img.tobytes())


def grid():
    y, x = np.mgrid[0:SIZE, 0:SIZE] / (SIZE - 1)
    return x, y


def smooth_noise(rng, cells):
    coarse = rng.random((cells + 1, cells + 1, 3))
    x, y = grid()
    gx, gy = x * cells, y * cells
    i, j = np.minimum(gx.astype(int), cells - 1), np.minimum(gy.astype(int), cells - 1)
    fx, fy = (gx - i)[..., None], (gy - j)[..., None]
    a, b = coarse[j, i], coarse[j, i + 1]
    c, d = coarse[j + 1, i], coarse[j + 1, i + 1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def content(k, rng):
    x, y = grid()
    sky = np.stack([0.3 + 0.4 * y, 0.5 + 0.3 * y, 0.9 - 0.2 * y], -1)
    img = sky * 0.7 + smooth_noise(rng, 3) * 0.3
    for _ in range(3 + k % 3):
        cx, cy, r = rng.random(), rng.random(), 0.08 + 0.2 * rng.random()
        color = rng.random(3)
        if rng.random() < 0.5:
            mask = (x - cx) ** 2 + (y - cy) ** 2 < r * r
        else:
            mask = (np.abs(x - cx) < r) & (np.abs(y - cy) < r * 0.7)
        shade = 0.75 + 0.25 * (1 - y)
        img[mask] = color * shade[mask][:, None]
    horizon = 0.55 + 0.15 * np.sin(6 * x + k)
    ground = y > horizon
    img[ground] = img[ground] * 0.4 + np.array([0.25, 0.45, 0.2]) * 0.6
    return img * 255


def style(k, rng):
    x, y = grid()
    base = rng.random(3)
    other = rng.random(3)
    kind = k % 5
    if kind == 0:
        t = 0.5 + 0.5 * np.sin(2 * np.pi * (6 + k) * (x * np.cos(k) + y * np.sin(k)))
    elif kind == 1:
        n = 4 + k
        t = ((np.floor(x * n) + np.floor(y * n)) % 2).astype(float)
    elif kind == 2:
        t = smooth_noise(rng, 12 + k)[..., 0]
    elif kind == 3:
        r = np.hypot(x - 0.5, y - 0.5)
        t = 0.5 + 0.5 * np.sin(2 * np.pi * (8 + k) * r + 4 * smooth_noise(rng, 4)[..., 1])
    else:
        t = (smooth_noise(rng, 24)[..., 2] > 0.5).astype(float)
        t = 0.7 * t + 0.3 * (0.5 + 0.5 * np.sin(40 * y + 3 * k))
    img = base * t[..., None] + other * (1 - t[..., None])
    img = img * 0.85 + 0.15 * rng.random((SIZE, SIZE, 3))
    return img * 255


def main():
    for k in range(10):
        save(os.path.join(HERE, "content", f"content_{k:02}.ppm"), content(k, np.random.default_rng(100 + k)))
        save(os.path.join(HERE, "style", f"style_{k:02}.ppm"), style(k, np.random.default_rng(200 + k)))


if __name__ == "__main__":
    os.makedirs(os.path.join(HERE, "content"), exist_ok=True)
    os.makedirs(os.path.join(HERE, "style"), exist_ok=True)
    main()
