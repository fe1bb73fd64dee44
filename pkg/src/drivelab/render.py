"""Top-down forward-window rasterizer.

Produces the 80x45 grayscale frame the policies see. The window rides with
the ego: rows sweep the longitudinal axis (a few meters behind the rear
bumper to the far horizon), columns the lateral axis, both in the ego's
heading frame. Every cell is classified by its center point, so the output
is a pure function of world state and translating an object by exactly one
cell size shifts its pixel block by exactly one cell.
"""

import math
from dataclasses import dataclass

import numpy as np

BG = 0.0
HOOD = 0.10
ROAD = 0.30
MARK = 0.85
AGENT = 1.00

PALETTE = (BG, HOOD, ROAD, MARK, AGENT)


@dataclass(frozen=True)
class RenderConfig:
    rows: int = 80
    cols: int = 45
    cell_long: float = 1.0    # meters per row
    cell_lat: float = 0.5     # meters per column
    behind: float = 8.0       # meters of window behind the ego
    mark_half: float = 0.15   # lane-marking half width
    blind_from: float = -2.0  # eval blind spot: zero rows behind this offset


def _grid(cfg: RenderConfig, ego_x, ego_y, heading):
    u = (np.arange(cfg.rows) + 0.5) * cfg.cell_long - cfg.behind
    l = (np.arange(cfg.cols) + 0.5) * cfg.cell_lat - cfg.cols * cfg.cell_lat / 2.0
    uu, ll = np.meshgrid(u, l, indexing="ij")
    fx, fy = math.cos(heading), math.sin(heading)
    # right-hand side of the car
    rx, ry = fy, -fx
    px = ego_x + fx * uu + rx * ll
    py = ego_y + fy * uu + ry * ll
    return uu, ll, px, py


def _in_rect(px, py, cx, cy, heading, length, width):
    dx = px - cx
    dy = py - cy
    c, s = math.cos(heading), math.sin(heading)
    lon = dx * c + dy * s
    lat = -dx * s + dy * c
    return (np.abs(lon) < length / 2.0) & (np.abs(lat) < width / 2.0)


def render_frame(world, cfg: RenderConfig | None = None) -> np.ndarray:
    """Rasterize the scene around ``world.ego``; values from the fixed palette."""
    cfg = cfg or world.cfg.render
    ego = world.ego
    uu, ll, px, py = _grid(cfg, ego.x, ego.y, ego.heading)
    frame = np.zeros((cfg.rows, cfg.cols))

    frame[world.road_mask(px, py)] = ROAD
    frame[world.marking_mask(px, py, cfg)] = MARK

    # ego hood band: forward half of the ego footprint in its own frame
    hood = (uu >= 0.2) & (uu < ego.length / 2.0) & (np.abs(ll) < ego.width / 2.0)
    frame[hood] = HOOD

    for ag in world.agents:
        hit = _in_rect(px, py, ag.x, ag.y, ag.heading, ag.length, ag.width)
        frame[hit] = AGENT

    if world.blind_spot:
        frame[uu < cfg.blind_from] = BG
    return frame


def upscale(frame: np.ndarray, factor: int = 8) -> np.ndarray:
    """Nearest-neighbor upscale to 8-bit gray for streaming to consoles."""
    big = np.repeat(np.repeat(frame, factor, axis=0), factor, axis=1)
    return np.round(big * 255.0).astype(np.uint8)
