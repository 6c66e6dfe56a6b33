"""Synthetic scene generation for desk-scale training and evaluation.

A scene is a pre/post image pair over textured ground with rectangular
buildings, a binary building mask, per-pixel damage labels, and the blast
loading raster. Two generator profiles exist:

- "blast": damage grades follow the overpressure field at each building's
  centroid (destroyed / damaged / intact thresholds), and the blast raster
  is rendered from the scenario. Labels are 0..3.
- "multihazard": a broad-taxonomy stand-in for pre-training with four
  damage grades driven by a random radial hazard field, different ground
  and roof palettes, and an all-zero blast raster. Labels are 0..4.

Everything is a pure function of (seed, arguments).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blast import BlastScenario, overpressure_surrogate, render_blast_map, scaled_distance

__all__ = [
    "DESTROYED_KPA",
    "DAMAGED_KPA",
    "LABEL_NOISE_RATE",
    "SyntheticScene",
    "generate_scene",
]

# Severe / moderate structural damage overpressure thresholds (kPa).
DESTROYED_KPA = 35.0
DAMAGED_KPA = 7.0
LABEL_NOISE_RATE = 0.05

_PLACEMENT_RETRIES = 25


@dataclass
class SyntheticScene:
    pre: np.ndarray        # (H, W, 3) uint8
    post: np.ndarray       # (H, W, 3) uint8
    mask: np.ndarray       # (H, W) uint8, 0/1
    damage: np.ndarray     # (H, W) uint8, 0 = background
    blast: np.ndarray      # (H, W, 3) float32
    scenario: BlastScenario
    seed: int
    profile: str


def _textured(rng: np.random.Generator, h: int, w: int, base, amplitude: float) -> np.ndarray:
    img = np.asarray(base, dtype=np.float64) + rng.normal(0.0, amplitude, size=(h, w, 3))
    return np.clip(img, 0, 255)


def _place_buildings(rng: np.random.Generator, h: int, w: int, n_buildings: int):
    """Non-overlapping axis-aligned rectangles; unplaceable ones are skipped."""
    occupied = np.zeros((h, w), dtype=bool)
    lo = max(3, h // 12)
    hi = max(lo + 1, h // 4)
    rects = []
    for _ in range(n_buildings):
        for _ in range(_PLACEMENT_RETRIES):
            bh = int(rng.integers(lo, hi + 1))
            bw = int(rng.integers(lo, hi + 1))
            r0 = int(rng.integers(0, h - bh + 1))
            c0 = int(rng.integers(0, w - bw + 1))
            if not occupied[r0 : r0 + bh, c0 : c0 + bw].any():
                occupied[r0 : r0 + bh, c0 : c0 + bw] = True
                rects.append((r0, c0, bh, bw))
                break
    return rects


def _centroid_pressure_kpa(rect, scenario: BlastScenario) -> float:
    r0, c0, bh, bw = rect
    cr, cc = r0 + bh / 2.0, c0 + bw / 2.0
    ground = np.hypot((cr - scenario.epicenter[0]) * scenario.meters_per_pixel,
                      (cc - scenario.epicenter[1]) * scenario.meters_per_pixel)
    slant = np.hypot(ground, scenario.burst_height_m)
    return float(overpressure_surrogate(scaled_distance(slant, scenario.charge_mass_kg)))


def _apply_noise(rng: np.random.Generator, grade: int, max_grade: int, rate: float) -> int:
    if rng.random() < rate:
        grade += int(rng.choice([-1, 1]))
    return int(np.clip(grade, 1, max_grade))


def generate_scene(
    seed: int,
    height: int,
    width: int,
    scenario: BlastScenario,
    n_buildings: int = 6,
    profile: str = "blast",
    thresholds: tuple[float, float] = (DESTROYED_KPA, DAMAGED_KPA),
    label_noise: float = LABEL_NOISE_RATE,
) -> SyntheticScene:
    if n_buildings < 1:
        raise ValueError("need at least one building")
    if profile not in ("blast", "multihazard"):
        raise ValueError(f"unknown profile {profile!r}")
    rng = np.random.default_rng(seed)

    if profile == "blast":
        ground = _textured(rng, height, width, (96, 104, 88), 6.0)
        blast = render_blast_map(scenario, height, width).astype(np.float32)
        max_grade = 3
    else:
        ground = _textured(rng, height, width, (140, 120, 96), 10.0)
        blast = np.zeros((height, width, 3), dtype=np.float32)
        max_grade = 4
        hazard_center = rng.uniform(0.0, 1.0, size=2) * (height, width)
        hazard_reach = rng.uniform(0.6, 1.1) * np.hypot(height, width)
        hazard_shape = rng.uniform(0.6, 1.6)
        hazard_scale = rng.uniform(0.7, 1.1)

    pre = ground.copy()
    mask = np.zeros((height, width), dtype=np.uint8)
    damage = np.zeros((height, width), dtype=np.uint8)
    rects = _place_buildings(rng, height, width, n_buildings)

    grades = []
    for rect in rects:
        r0, c0, bh, bw = rect
        roof = rng.uniform(150, 235, size=3)
        pre[r0 : r0 + bh, c0 : c0 + bw] = np.clip(
            roof + rng.normal(0.0, 4.0, size=(bh, bw, 3)), 0, 255)
        mask[r0 : r0 + bh, c0 : c0 + bw] = 1
        if profile == "blast":
            pressure = _centroid_pressure_kpa(rect, scenario)
            destroyed_kpa, damaged_kpa = thresholds
            grade = 3 if pressure >= destroyed_kpa else 2 if pressure >= damaged_kpa else 1
        else:
            # linear-in-distance severity keeps all four grades represented
            cr, cc = r0 + bh / 2.0, c0 + bw / 2.0
            dist = np.hypot(cr - hazard_center[0], cc - hazard_center[1])
            severity = hazard_scale * np.clip(1.0 - dist / hazard_reach, 0.0, 1.0) ** hazard_shape
            severity += rng.normal(0.0, 0.08)
            grade = 1 + int(np.clip(severity, 0.0, 0.999) * max_grade)
        grade = _apply_noise(rng, grade, max_grade, label_noise)
        damage[r0 : r0 + bh, c0 : c0 + bw] = grade
        grades.append(grade)

    post = pre.copy()
    for rect, grade in zip(rects, grades):
        r0, c0, bh, bw = rect
        region = post[r0 : r0 + bh, c0 : c0 + bw]
        if grade >= max_grade:        # flattened: rubble texture
            rubble = 90 + rng.normal(0.0, 28.0, size=(bh, bw, 3))
            post[r0 : r0 + bh, c0 : c0 + bw] = np.clip(rubble, 0, 255)
        elif grade >= 2:              # standing but damaged: darkening varies per
            # building up to none at all -- moderate damage is mostly invisible
            # from above, which is what the physical channels are for
            lo = 1.0 - 0.15 * (grade - 1)
            factor = rng.uniform(lo, lo + 0.15)
            scar = rng.normal(0.0, 5.0, size=(bh, bw, 3))
            post[r0 : r0 + bh, c0 : c0 + bw] = np.clip(region * factor + scar, 0, 255)
    # acquisition conditions differ between the two passes
    post = np.clip(post * rng.uniform(0.92, 1.08), 0, 255)

    return SyntheticScene(
        pre=pre.astype(np.uint8),
        post=post.astype(np.uint8),
        mask=mask,
        damage=damage,
        blast=blast,
        scenario=scenario,
        seed=seed,
        profile=profile,
    )
