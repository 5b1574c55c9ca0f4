"""Slow, obviously-correct reference implementations used only by the tests."""

import colorsys
import math
from collections import deque

import numpy as np


def dice_sets(a, b):
    """Dice over explicit sets of pixel coordinates."""
    sa = {tuple(p) for p in np.argwhere(a)}
    sb = {tuple(p) for p in np.argwhere(b)}
    if not sa and not sb:
        return 0.0
    return 2 * len(sa & sb) / (len(sa) + len(sb))


def size_sets(a, b):
    na, nb = int(np.sum(a)), int(np.sum(b))
    if max(na, nb) == 0:
        return 0.0
    return min(na, nb) / max(na, nb)


def sim_zs_sets(z, s, alpha):
    g = dice_sets(z.gripper_mask.bits, s.gripper_mask.bits) * \
        size_sets(z.gripper_mask.bits, s.gripper_mask.bits)
    st = dice_sets(z.static_mask.bits, s.static_mask.bits) * \
        size_sets(z.static_mask.bits, s.static_mask.bits)
    return alpha * g + (1 - alpha) * st


def brute_force_search(pool, z, alpha, stride=1):
    """Exhaustive argmax with explicit (trajectory, frame) tie-breaking."""
    best = None
    for ti, traj in enumerate(pool):
        for fi in range(0, len(traj.frames), stride):
            score = sim_zs_sets(z, traj.frames[fi][0], alpha)
            if best is None or score > best[2]:
                best = (ti, fi, score)
    return best


def pixel_in_spec(rgb, spec):
    h, s, v = colorsys.rgb_to_hsv(*(c / 255.0 for c in rgb))
    h *= 360.0
    h0, h1 = spec.hue_range
    hue_ok = h0 <= h <= h1 if h0 <= h1 else (h >= h0 or h <= h1)
    return (hue_ok and spec.sat_range[0] <= s <= spec.sat_range[1]
            and spec.val_range[0] <= v <= spec.val_range[1])


def flood_fill_segment(image, spec, filt):
    """Per-pixel HSV test, region crop, then 4-connected BFS area filtering."""
    h, w = image.shape[:2]
    hit = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            if filt.region is not None:
                r0, c0, r1, c1 = filt.region
                if not (r0 <= r < r1 and c0 <= c < c1):
                    continue
            hit[r, c] = pixel_in_spec(tuple(int(v) for v in image[r, c]), spec)
    out = np.zeros_like(hit)
    seen = np.zeros_like(hit)
    for r in range(h):
        for c in range(w):
            if not hit[r, c] or seen[r, c]:
                continue
            comp = []
            queue = deque([(r, c)])
            seen[r, c] = True
            while queue:
                y, x = queue.popleft()
                comp.append((y, x))
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and hit[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
            area = len(comp)
            if area >= filt.min_area and (filt.max_area is None or area <= filt.max_area):
                for y, x in comp:
                    out[y, x] = True
    return out


def silhouette_brute(points, labels):
    pts = [np.atleast_1d(np.asarray(p, dtype=float)) for p in points]
    n = len(pts)
    total = 0.0
    for i in range(n):
        same = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not same:
            continue
        a = sum(np.linalg.norm(pts[i] - pts[j]) for j in same) / len(same)
        b = math.inf
        for lab in set(labels):
            if lab == labels[i]:
                continue
            others = [j for j in range(n) if labels[j] == lab]
            b = min(b, sum(np.linalg.norm(pts[i] - pts[j]) for j in others) / len(others))
        total += (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return total / n


def rand_index_pairs(t, p):
    """ARI by enumerating every unordered pair of points."""
    n = len(t)
    both = same_t = same_p = 0
    for i in range(n):
        for j in range(i + 1, n):
            st, sp = t[i] == t[j], p[i] == p[j]
            both += st and sp
            same_t += st
            same_p += sp
    pairs = n * (n - 1) / 2
    expected = same_t * same_p / pairs
    max_index = (same_t + same_p) / 2
    return (both - expected) / (max_index - expected)


def oracle_search_fn(index, z, config):
    """Drop-in replacement for the policy's vectorised search."""
    from maskseek.policy import SearchHit
    ti, fi, score = brute_force_search(index.pool, z, config.alpha, config.stride)
    return SearchHit(ti, fi, score)
