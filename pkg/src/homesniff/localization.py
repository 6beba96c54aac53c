"""RSSI fingerprints, path-loss inversion, trilateration, stationarity and zone matching."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from homesniff.errors import (
    DegenerateLayout,
    DuplicateLabel,
    InsufficientData,
    InvalidParameter,
    NoComparableReference,
    UndefinedDirection,
)
from homesniff.mac import MacAddress
from homesniff.timeutil import US, day_start
from homesniff.wire.records import FrameRecord

MIN_TRIANGLE_AREA = 1e-6


@dataclass(frozen=True)
class SnifferLayout:
    sniffers: tuple[tuple[str, float, float], ...]

    @classmethod
    def of(cls, items: Iterable[tuple[str, float, float]]) -> "SnifferLayout":
        items = tuple((str(s), float(x), float(y)) for s, x, y in items)
        ids = [s for s, _, _ in items]
        if len(set(ids)) != len(ids):
            raise InvalidParameter("duplicate sniffer id in layout")
        return cls(items)

    @property
    def ids(self) -> list[str]:
        return [s for s, _, _ in self.sniffers]

    def index(self, sniffer_id: str) -> int:
        return self.ids.index(sniffer_id)

    def positions(self) -> np.ndarray:
        return np.array([[x, y] for _, x, y in self.sniffers], dtype=np.float64).reshape(-1, 2)

    @property
    def centroid(self) -> np.ndarray:
        return self.positions().mean(axis=0)

    def __len__(self) -> int:
        return len(self.sniffers)


def _max_triangle_area(pts: np.ndarray) -> float:
    best = 0.0
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                (x1, y1), (x2, y2), (x3, y3) = pts[i], pts[j], pts[k]
                best = max(best, abs((x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)) / 2)
    return best


def check_layout(layout: SnifferLayout) -> None:
    if len(layout) < 3:
        raise DegenerateLayout(f"{len(layout)} sniffers, trilateration needs 3")
    if _max_triangle_area(layout.positions()) <= MIN_TRIANGLE_AREA:
        raise DegenerateLayout("sniffers are collinear")


def parse_layout(text: str) -> SnifferLayout:
    rows = []
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        sid, x, y = line.split("\t")
        rows.append((sid.strip(), float(x), float(y)))
    return SnifferLayout.of(rows)


def format_layout(layout: SnifferLayout) -> str:
    return "".join(f"{s}\t{x!r}\t{y!r}\n" for s, x, y in layout.sniffers)


def load_layout(path) -> SnifferLayout:
    return parse_layout(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class PathLossParams:
    p0_dbm: float = -40.0
    n: float = 4.0

    def __post_init__(self):
        if not self.n > 0:
            raise InvalidParameter(f"path-loss exponent must be positive, got {self.n}")


def rssi_to_distance(rssi_dbm, params: PathLossParams):
    """Log-distance inversion: 1 m at p0, growing tenfold per 10*n dB of loss."""
    if isinstance(rssi_dbm, np.ndarray):
        return np.power(10.0, (params.p0_dbm - rssi_dbm) / (10.0 * params.n))
    return 10.0 ** ((params.p0_dbm - float(rssi_dbm)) / (10.0 * params.n))


@dataclass(frozen=True)
class RssiFingerprint:
    device: Optional[MacAddress]
    window_start_us: int
    values: tuple[Optional[float], ...]
    support: tuple[int, ...]

    @property
    def present(self) -> int:
        return sum(v is not None for v in self.values)

    @property
    def usable(self) -> bool:
        return self.present >= 3


def _median(v: list) -> float:
    s = sorted(v)
    k = len(s) // 2
    return float(s[k]) if len(s) % 2 else (s[k - 1] + s[k]) / 2.0


def build_fingerprints(
    frames: Iterable[FrameRecord],
    layout: SnifferLayout,
    window_s: int,
    start_us: Optional[int] = None,
) -> dict[MacAddress, list[RssiFingerprint]]:
    """Per transmitter and window, the median RSSI reported by each sniffer."""
    if window_s < 1:
        raise InvalidParameter("window_s must be >= 1")
    frames = [f for f in frames if f.rssi_dbm is not None]
    if not frames:
        return {}
    if start_us is None:
        start_us = day_start(min(f.ts_us for f in frames))
    index = {s: i for i, s in enumerate(layout.ids)}
    w_us = window_s * US
    buckets: dict[tuple[MacAddress, int], list[list[int]]] = {}
    for f in frames:
        i = index.get(f.sniffer_id)
        if i is None or f.ts_us < start_us:
            continue
        key = (f.addrs.ta, (f.ts_us - start_us) // w_us)
        b = buckets.get(key)
        if b is None:
            b = buckets[key] = [[] for _ in layout.ids]
        b[i].append(f.rssi_dbm)
    out: dict[MacAddress, list[RssiFingerprint]] = {}
    for (mac, w), per in sorted(buckets.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        values = tuple(_median(v) if v else None for v in per)
        out.setdefault(mac, []).append(
            RssiFingerprint(mac, start_us + w * w_us, values, tuple(len(v) for v in per))
        )
    return out


@dataclass(frozen=True)
class PositionEstimate:
    x: float
    y: float
    direction: Optional[tuple[float, float]]
    residual: float
    usable: bool
    linear_xy: Optional[tuple[float, float]] = None

    @classmethod
    def unusable(cls) -> "PositionEstimate":
        return cls(math.nan, math.nan, None, math.nan, False)


def linearized_position(anchors: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Least squares on the circle equations differenced against the first anchor."""
    s1 = anchors[0]
    a = 2.0 * (anchors[1:] - s1)
    b = dist[0] ** 2 - dist[1:] ** 2 + (anchors[1:] ** 2).sum(axis=1) - (s1 ** 2).sum()
    p, *_ = np.linalg.lstsq(a, b, rcond=None)
    return p


def refine_position(anchors: np.ndarray, dist: np.ndarray, p: np.ndarray,
                    max_iter: int = 100, tol: float = 1e-12) -> np.ndarray:
    """Gauss-Newton on the range residuals, with step halving so the cost never rises."""
    def cost(q):
        return float(((np.linalg.norm(anchors - q, axis=1) - dist) ** 2).sum())

    c = cost(p)
    for _ in range(max_iter):
        diff = p - anchors
        rng = np.linalg.norm(diff, axis=1)
        if np.any(rng < 1e-12):
            break
        jac = diff / rng[:, None]
        r = rng - dist
        step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        t = 1.0
        while t > 1e-6:
            q = p + t * step
            cq = cost(q)
            if cq <= c:
                break
            t /= 2
        else:
            break
        moved = float(np.linalg.norm(q - p))
        p, c = q, cq
        if moved < tol:
            break
    return p


def range_rms(anchors: np.ndarray, dist: np.ndarray, p: np.ndarray) -> float:
    return float(np.sqrt(((np.linalg.norm(anchors - p, axis=1) - dist) ** 2).mean()))


def direction_vector(estimate: PositionEstimate, layout: SnifferLayout) -> tuple[float, float]:
    if not estimate.usable:
        raise UndefinedDirection("estimate is not usable")
    v = np.array([estimate.x, estimate.y]) - layout.centroid
    norm = float(np.hypot(v[0], v[1]))
    if norm < 1e-12:
        raise UndefinedDirection("position coincides with the layout centroid")
    return float(v[0] / norm), float(v[1] / norm)


def trilaterate(
    fingerprint: RssiFingerprint,
    layout: SnifferLayout,
    params: PathLossParams = PathLossParams(),
    refine: bool = True,
) -> PositionEstimate:
    check_layout(layout)
    idx = [i for i, v in enumerate(fingerprint.values) if v is not None]
    if len(idx) < 3:
        return PositionEstimate.unusable()
    anchors = layout.positions()[idx]
    if _max_triangle_area(anchors) <= MIN_TRIANGLE_AREA:
        raise DegenerateLayout("present sniffers are collinear")
    dist = np.array([rssi_to_distance(fingerprint.values[i], params) for i in idx])
    lin = linearized_position(anchors, dist)
    p = refine_position(anchors, dist, lin.copy()) if refine else lin
    est = PositionEstimate(float(p[0]), float(p[1]), None, range_rms(anchors, dist, p), True,
                           (float(lin[0]), float(lin[1])))
    try:
        d = direction_vector(est, layout)
    except UndefinedDirection:
        d = None
    return PositionEstimate(est.x, est.y, d, est.residual, True, est.linear_xy)


def _batch_cost(anchors: np.ndarray, dist: np.ndarray, p: np.ndarray) -> np.ndarray:
    rng = np.linalg.norm(p[:, None, :] - anchors[None, :, :], axis=2)
    return ((rng - dist) ** 2).sum(axis=1)


def _refine_batch(anchors: np.ndarray, dist: np.ndarray, p: np.ndarray,
                  max_iter: int = 100, tol: float = 1e-12) -> np.ndarray:
    """Row-wise ``refine_position`` for many range vectors against one anchor set."""
    p = p.copy()
    c = _batch_cost(anchors, dist, p)
    live = np.ones(len(p), dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(live)
        if idx.size == 0:
            break
        diff = p[idx, None, :] - anchors[None, :, :]
        rng = np.linalg.norm(diff, axis=2)
        degenerate = (rng < 1e-12).any(axis=1)
        rng = np.where(rng < 1e-12, 1.0, rng)
        jac = diff / rng[:, :, None]
        r = rng - dist[idx]
        jtj = np.einsum("nki,nkj->nij", jac, jac)
        jtr = np.einsum("nki,nk->ni", jac, -r)
        step = np.zeros_like(jtr)
        solvable = np.abs(np.linalg.det(jtj)) > 1e-300
        if solvable.any():
            step[solvable] = np.linalg.solve(jtj[solvable], jtr[solvable][:, :, None])[:, :, 0]
        if (~solvable).any():
            for k in np.flatnonzero(~solvable):
                step[k], *_ = np.linalg.lstsq(jac[k], -r[k], rcond=None)
        t = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        q = p[idx].copy()
        cq = c[idx].copy()
        while True:
            pending = ~accepted & (t > 1e-6)
            if not pending.any():
                break
            k = np.flatnonzero(pending)
            trial = p[idx[k]] + t[k, None] * step[k]
            ct = _batch_cost(anchors, dist[idx[k]], trial)
            ok = ct <= c[idx[k]]
            q[k[ok]] = trial[ok]
            cq[k[ok]] = ct[ok]
            accepted[k[ok]] = True
            t[k[~ok]] /= 2
        moved = np.linalg.norm(q - p[idx], axis=1)
        p[idx[accepted]] = q[accepted]
        c[idx[accepted]] = cq[accepted]
        done = ~accepted | (moved < tol) | degenerate
        live[idx[done]] = False
    return p


def trilaterate_batch(
    values: np.ndarray,
    layout: SnifferLayout,
    params: PathLossParams = PathLossParams(),
    refine: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised ``trilaterate`` over rows of per-sniffer RSSI (NaN = absent).

    Returns ``(xy, residual, linear_xy)``; rows with fewer than three readings are NaN.
    """
    check_layout(layout)
    values = np.asarray(values, dtype=float)
    n = len(values)
    xy = np.full((n, 2), np.nan)
    lin_xy = np.full((n, 2), np.nan)
    resid = np.full(n, np.nan)
    if n == 0:
        return xy, resid, lin_xy
    present = ~np.isnan(values)
    pos = layout.positions()
    patterns = {}
    for i, row in enumerate(present):
        if row.sum() >= 3:
            patterns.setdefault(tuple(row.tolist()), []).append(i)
    for pattern, rows in patterns.items():
        cols = np.flatnonzero(pattern)
        anchors = pos[cols]
        if _max_triangle_area(anchors) <= MIN_TRIANGLE_AREA:
            raise DegenerateLayout("present sniffers are collinear")
        rows = np.array(rows)
        dist = rssi_to_distance(values[np.ix_(rows, cols)], params)
        s1 = anchors[0]
        a = 2.0 * (anchors[1:] - s1)
        b = dist[:, :1] ** 2 - dist[:, 1:] ** 2 + (anchors[1:] ** 2).sum(axis=1) - (s1 ** 2).sum()
        lin = np.linalg.lstsq(a, b.T, rcond=None)[0].T
        p = _refine_batch(anchors, dist, lin) if refine else lin
        xy[rows] = p
        lin_xy[rows] = lin
        resid[rows] = np.sqrt(_batch_cost(anchors, dist, p) / len(cols))
    return xy, resid, lin_xy


class Mobility(enum.Enum):
    STATIONARY = "stationary"
    MOBILE = "mobile"


@dataclass(frozen=True)
class StationarityResult:
    mobility: Mobility
    max_iqr_db: float
    per_sniffer_iqr: tuple[Optional[float], ...]
    fingerprints: int


def classify_stationarity(
    fingerprints: Sequence[RssiFingerprint], tau_db: float = 4.0, min_fingerprints: int = 50
) -> StationarityResult:
    usable = [fp for fp in fingerprints if fp.usable]
    if len(usable) < min_fingerprints:
        raise InsufficientData(f"{len(usable)} usable fingerprints, need {min_fingerprints}")
    width = len(usable[0].values)
    iqrs: list[Optional[float]] = []
    for i in range(width):
        vals = np.array([fp.values[i] for fp in usable if fp.values[i] is not None])
        if vals.size == 0:
            iqrs.append(None)
            continue
        q75, q25 = np.percentile(vals, [75, 25])
        iqrs.append(float(q75 - q25))
    worst = max(v for v in iqrs if v is not None)
    mob = Mobility.STATIONARY if worst <= tau_db else Mobility.MOBILE
    return StationarityResult(mob, worst, tuple(iqrs), len(usable))


@dataclass(frozen=True)
class ZoneModel:
    sniffer_ids: tuple[str, ...]
    references: tuple[tuple[str, tuple[Optional[float], ...]], ...]

    @property
    def labels(self) -> list[str]:
        return [lab for lab, _ in self.references]


def learn_reference_points(
    labeled: Iterable[tuple[str, Sequence[RssiFingerprint]]],
    sniffer_ids: Sequence[str],
    min_fingerprints: int = 10,
) -> ZoneModel:
    if isinstance(labeled, Mapping):
        labeled = labeled.items()
    refs = []
    seen = set()
    for label, fps in labeled:
        if label in seen:
            raise DuplicateLabel(f"label {label!r} given twice")
        seen.add(label)
        good = [fp for fp in fps if fp.usable]
        if len(good) < min_fingerprints:
            raise InsufficientData(f"label {label!r}: {len(good)} usable fingerprints, need {min_fingerprints}")
        centre = []
        for i in range(len(sniffer_ids)):
            vals = [fp.values[i] for fp in good if fp.values[i] is not None]
            centre.append(float(np.median(vals)) if vals else None)
        refs.append((label, tuple(centre)))
    return ZoneModel(tuple(sniffer_ids), tuple(refs))


def fingerprint_distance(a: Sequence[Optional[float]], b: Sequence[Optional[float]]) -> tuple[float, int]:
    """RMS difference over components present in both; (inf, 0) when none are shared."""
    diffs = [x - y for x, y in zip(a, b) if x is not None and y is not None]
    if not diffs:
        return math.inf, 0
    return math.sqrt(math.fsum(d * d for d in diffs) / len(diffs)), len(diffs)


def match_zone(model: ZoneModel, fingerprint: RssiFingerprint, min_shared: int = 2) -> tuple[str, float]:
    best = None
    for label, ref in model.references:
        d, shared = fingerprint_distance(fingerprint.values, ref)
        if shared < min_shared:
            continue
        if best is None or (d, label) < best:
            best = (d, label)
    if best is None:
        raise NoComparableReference("no reference point shares enough sniffers with the fingerprint")
    return best[1], best[0]


def match_zones_batch(model: ZoneModel, values: np.ndarray, min_shared: int = 2
                      ) -> tuple[list[Optional[str]], np.ndarray]:
    """Row-wise ``match_zone``; rows without a comparable reference get ``None``/inf."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    best_d = np.full(n, np.inf)
    best: list[Optional[str]] = [None] * n
    for label, ref in sorted(model.references, key=lambda r: r[0]):
        r = np.array([np.nan if v is None else v for v in ref])
        diff = values - r[None, :]
        shared = ~np.isnan(diff)
        m = shared.sum(axis=1)
        d = np.sqrt((np.where(shared, diff, 0.0) ** 2).sum(axis=1) / np.maximum(m, 1))
        better = (m >= min_shared) & (d < best_d)
        best_d = np.where(better, d, best_d)
        for i in np.flatnonzero(better).tolist():
            best[i] = label
    return best, best_d


def format_zone_model(model: ZoneModel) -> str:
    lines = ["label\t" + "\t".join(model.sniffer_ids)]
    for label, ref in model.references:
        lines.append(label + "\t" + "\t".join("nan" if v is None else repr(v) for v in ref))
    return "\n".join(lines) + "\n"


def parse_zone_model(text: str) -> ZoneModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("label\t"):
        raise InvalidParameter("zone model must start with a 'label' header row")
    ids = tuple(lines[0].split("\t")[1:])
    refs = []
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != len(ids) + 1:
            raise InvalidParameter(f"zone row has {len(parts) - 1} values, expected {len(ids)}")
        vals = tuple(None if p == "nan" else float(p) for p in parts[1:])
        refs.append((parts[0], vals))
    labels = [lab for lab, _ in refs]
    if len(set(labels)) != len(labels):
        raise DuplicateLabel("duplicate label in zone model file")
    return ZoneModel(ids, tuple(refs))
