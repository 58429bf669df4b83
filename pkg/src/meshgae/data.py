"""Snapshot datasets: CSV ingestion, standardisation, splits, and a synthetic
backward-facing-step generator."""
import csv
import math
import os
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DimensionError, IngestionError, UsageError
from .graph import DEFAULT_RADIUS, MeshInput

STD_FLOOR = 1e-12
RE_REF = 30000.0


@dataclass(frozen=True)
class SnapshotSet:
    """Ordered snapshots ``X(t_i)`` of shape (M, N_C, N_F) from one trajectory."""

    snapshots: np.ndarray
    times: np.ndarray
    dt: float = 1.0
    re: float = float("nan")
    u_in: float = 1.0
    split: str = "all"
    feature_names: tuple = ("ux", "uy")

    def __post_init__(self):
        x = np.asarray(self.snapshots, dtype=np.float64)
        if x.ndim != 3:
            raise DimensionError(f"snapshots must be (M, N_C, N_F), got {x.shape}")
        object.__setattr__(self, "snapshots", x)
        t = np.asarray(self.times, dtype=np.float64)
        if len(t) != len(x):
            raise DimensionError("one time stamp per snapshot required")
        if np.any(np.diff(t) <= 0):
            raise UsageError("snapshot times must be strictly increasing")
        object.__setattr__(self, "times", t)

    def __len__(self):
        return len(self.snapshots)

    @property
    def n_cells(self):
        return self.snapshots.shape[1]

    @property
    def n_features(self):
        return self.snapshots.shape[2]

    def subset(self, idx, split=None):
        idx = np.sort(np.asarray(idx, dtype=np.int64))
        return replace(self, snapshots=self.snapshots[idx], times=self.times[idx],
                       split=self.split if split is None else split)


# ---------------------------------------------------------------------------
# standardisation


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    u_in: float = 1.0

    @classmethod
    def fit(cls, arrays, u_in=1.0):
        """Per-feature statistics pooled over all nodes and snapshots."""
        x = np.concatenate([np.asarray(a).reshape(-1, np.asarray(a).shape[-1]) for a in arrays])
        return cls(mean=x.mean(axis=0), std=np.maximum(x.std(axis=0), STD_FLOOR), u_in=u_in)

    def transform(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != len(self.mean):
            raise DimensionError(f"data has {x.shape[-1]} features, statistics have {len(self.mean)}")
        return (x - self.mean) / self.std

    def inverse(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != len(self.mean):
            raise DimensionError(f"data has {x.shape[-1]} features, statistics have {len(self.mean)}")
        return x * self.std + self.mean


def standardize(snaps, stats=None):
    """Return ``(standardised set, stats)``; stats are fitted only on a training split."""
    if stats is None:
        if snaps.split != "train":
            raise UsageError(f"statistics may only be computed on the training split, not {snaps.split!r}")
        stats = Standardizer.fit([snaps.snapshots], u_in=snaps.u_in)
    return replace(snaps, snapshots=stats.transform(snaps.snapshots)), stats


def split_indices(n, val_fraction, seed):
    """Random (train, val) index arrays; the validation size is floor(n * fraction)."""
    if not 0 < val_fraction < 1:
        raise ConfigError(f"validation fraction must be in (0, 1), got {val_fraction}")
    n_val = int(math.floor(n * val_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def split_train_val(snaps, val_fraction=0.10, seed=0):
    tr, va = split_indices(len(snaps), val_fraction, seed)
    return snaps.subset(tr, "train"), snaps.subset(va, "val")


# ---------------------------------------------------------------------------
# synthetic backward-facing step


@dataclass(frozen=True)
class MeshParams:
    """Block-structured quad mesh of a step channel, in units of the step height.

    The inlet channel spans ``[-inlet_length, 0] x [step_height, height]``;
    downstream of the step the channel spans ``[0, outlet_length] x [0, height]``.
    Cells are graded towards the step corner and jittered.
    """

    nc: int = 2000
    step_height: float = 1.0
    height: float = 2.0
    inlet_length: float = 1.0
    outlet_length: float = 5.0
    refine: float = 2.0
    jitter: float = 0.15
    radius: float = DEFAULT_RADIUS
    seed: int = 0


@dataclass(frozen=True)
class FlowParams:
    """Freestream plus a train of alternating Lamb-Oseen vortices shed at the step.

    ``vortex_strength`` is the circulation in units of ``u_in * step_height``.
    ``convection_speed`` defaults to half the freestream velocity.
    """

    re: float = RE_REF
    vortex_strength: float = 1.0
    core_radius: float = 0.15
    core_growth: float = 0.002
    convection_speed: float = None
    strouhal: float = 0.25
    offset: float = 0.15
    dt: float = 0.05

    @property
    def u_in(self):
        return self.re / RE_REF

    @property
    def speed(self):
        return 0.5 * self.u_in if self.convection_speed is None else float(self.convection_speed)

    @property
    def period(self):
        return 1.0 / (self.strouhal * self.u_in)


def _graded_edges(lo, hi, n, focus, refine):
    """``n + 1`` grid lines on [lo, hi], denser near ``focus``."""
    s = np.linspace(lo, hi, 4001)
    dens = 1.0 + refine * np.exp(-((s - focus) / (0.3 * (hi - lo) + 1e-12)) ** 2)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(s))))
    cdf /= cdf[-1]
    out = np.interp(np.linspace(0, 1, n + 1), cdf, s)
    out[0], out[-1] = lo, hi
    return out


def synthetic_mesh(mp):
    """Cell centroids and face pairs of the step-channel quad mesh, exactly ``mp.nc`` cells."""
    if mp.nc < 2 or not (0 < mp.step_height < mp.height) or mp.inlet_length < 0 or mp.outlet_length <= 0:
        raise ConfigError(f"degenerate mesh parameters: {mp}")
    rng = np.random.default_rng(mp.seed)
    area = mp.inlet_length * (mp.height - mp.step_height) + mp.outlet_length * mp.height
    h = math.sqrt(area / mp.nc)
    ny_bot = max(1, round(mp.step_height / h))
    ny_top = max(1, round((mp.height - mp.step_height) / h))
    y_edges = np.concatenate([
        _graded_edges(0.0, mp.step_height, ny_bot, mp.step_height, mp.refine)[:-1],
        _graded_edges(mp.step_height, mp.height, ny_top, mp.step_height, mp.refine)])
    ny = ny_bot + ny_top
    nx_in = round(mp.inlet_length / h) if mp.inlet_length > 0 else 0
    nx_in = min(nx_in, max(0, (mp.nc - 1) // ny_top))
    nx_out = max(1, math.ceil((mp.nc - nx_in * ny_top) / ny))
    x_in = _graded_edges(-mp.inlet_length, 0.0, nx_in, 0.0, mp.refine)[:-1] if nx_in else np.zeros(0)
    x_edges = np.concatenate([x_in, _graded_edges(0.0, mp.outlet_length, nx_out, 0.0, mp.refine)])

    ids = -np.ones((nx_in + nx_out, ny), dtype=np.int64)
    cents = []
    count = 0
    for i in range(nx_in + nx_out):
        j0 = ny_bot if i < nx_in else 0
        for j in range(j0, ny):
            if count == mp.nc:
                break
            x0, x1 = x_edges[i], x_edges[i + 1]
            y0, y1 = y_edges[j], y_edges[j + 1]
            amp = 0.5 * mp.jitter * min(x1 - x0, y1 - y0)
            cx = 0.5 * (x0 + x1) + rng.uniform(-amp, amp)
            cy = 0.5 * (y0 + y1) + rng.uniform(-amp, amp)
            ids[i, j] = count
            cents.append((cx, cy))
            count += 1
    if count != mp.nc:
        raise ConfigError("could not lay out the requested number of cells")
    faces = []
    for i in range(ids.shape[0]):
        for j in range(ny):
            a = ids[i, j]
            if a < 0:
                continue
            if i + 1 < ids.shape[0] and ids[i + 1, j] >= 0:
                faces.append((a, ids[i + 1, j]))
            if j + 1 < ny and ids[i, j + 1] >= 0:
                faces.append((a, ids[i, j + 1]))
    return MeshInput(np.asarray(cents), np.asarray(faces, dtype=np.int64).reshape(-1, 2), mp.radius)


def vortex_state(flow, t, x_max, phase=0.0):
    """Centres, circulations and squared core radii of vortices alive at time ``t``."""
    speed, half = flow.speed, 0.5 * flow.period
    gamma0 = flow.vortex_strength * flow.u_in
    # births at phase + k * half for integer k, keep those already inside the window
    k_hi = math.floor((t - phase) / half)
    k_lo = math.ceil((t - phase - (x_max + 1.0) / max(speed, 1e-12)) / half)
    cx, cy, gam, rc2 = [], [], [], []
    for k in range(k_lo, k_hi + 1):
        age = t - (phase + k * half)
        if age < 0:
            continue
        sign = 1.0 if k % 2 == 0 else -1.0
        cx.append(speed * age)
        cy.append(1.0 + sign * flow.offset)
        gam.append(-sign * gamma0)
        rc2.append(flow.core_radius ** 2 + 4.0 * flow.core_growth * age)
    return np.array(cx), np.array(cy), np.array(gam), np.array(rc2)


def lamb_oseen_velocity(points, cx, cy, gamma, rc2):
    """Induced velocity of a superposition of Lamb-Oseen vortices."""
    u = np.zeros((len(points), 2))
    for x0, y0, g, r2c in zip(cx, cy, gamma, rc2):
        dx = points[:, 0] - x0
        dy = points[:, 1] - y0
        r2 = dx * dx + dy * dy
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(r2 > 0, -np.expm1(-r2 / r2c) / r2, 1.0 / r2c)
        f *= g / (2.0 * math.pi)
        u[:, 0] -= f * dy
        u[:, 1] += f * dx
    return u


def lamb_oseen_vorticity(points, cx, cy, gamma, rc2):
    w = np.zeros(len(points))
    for x0, y0, g, r2c in zip(cx, cy, gamma, rc2):
        r2 = (points[:, 0] - x0) ** 2 + (points[:, 1] - y0) ** 2
        w += g / (math.pi * r2c) * np.exp(-r2 / r2c)
    return w


def flow_velocity(points, t, flow, x_max=10.0, phase=0.0):
    u = lamb_oseen_velocity(points, *vortex_state(flow, t, x_max, phase))
    u[:, 0] += flow.u_in
    return u


def generate_synthetic(mesh_params=None, flow_params=None, m=64, seed=0):
    """Mesh plus ``m`` snapshots of the analytic unsteady field; deterministic in ``seed``."""
    mesh_params = mesh_params or MeshParams()
    flow_params = flow_params or FlowParams()
    if m < 1:
        raise ConfigError("need at least one snapshot")
    if flow_params.re <= 0 or flow_params.dt <= 0 or flow_params.core_radius <= 0:
        raise ConfigError(f"degenerate flow parameters: {flow_params}")
    mesh = synthetic_mesh(mesh_params)
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0.0, flow_params.period)
    times = np.arange(m) * flow_params.dt
    pts = mesh.centroids
    x_max = float(pts[:, 0].max())
    snaps = np.stack([flow_velocity(pts, t, flow_params, x_max, phase) for t in times])
    return mesh, SnapshotSet(snapshots=snaps, times=times, dt=flow_params.dt,
                             re=flow_params.re, u_in=flow_params.u_in)


# ---------------------------------------------------------------------------
# CSV I/O


def _fmt(v):
    return "%.17g" % v


def write_dataset(path, mesh, snaps):
    """Write ``points.csv``, ``faces.csv``, ``snap_XXXX.csv`` and ``meta.csv``."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "points.csv"), "w", newline="") as f:
        f.write("x,y\n")
        for x, y in mesh.centroids:
            f.write(f"{_fmt(x)},{_fmt(y)}\n")
    with open(os.path.join(path, "faces.csv"), "w", newline="") as f:
        f.write("i,j\n")
        for i, j in mesh.face_pairs:
            f.write(f"{int(i)},{int(j)}\n")
    header = ",".join(snaps.feature_names)
    for k, x in enumerate(snaps.snapshots):
        with open(os.path.join(path, f"snap_{k:04d}.csv"), "w", newline="") as f:
            f.write(header + "\n")
            for row in x:
                f.write(",".join(_fmt(v) for v in row) + "\n")
    with open(os.path.join(path, "meta.csv"), "w", newline="") as f:
        f.write("dt,u_in,re,radius\n")
        f.write(f"{_fmt(snaps.dt)},{_fmt(snaps.u_in)},{_fmt(snaps.re)},{_fmt(mesh.radius)}\n")


def _read_table(path, expect=None, conv=float):
    if not os.path.exists(path):
        raise IngestionError("file not found", path)
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise IngestionError("empty file", path)
    header = [h.strip() for h in rows[0]]
    if expect is not None and header != list(expect):
        raise IngestionError(f"expected header {','.join(expect)}, got {','.join(header)}", path, 1)
    data = []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise IngestionError(f"expected {len(header)} columns, got {len(row)}", path, ln)
        try:
            data.append([conv(v) for v in row])
        except ValueError as exc:
            raise IngestionError(f"malformed value ({exc})", path, ln) from None
    return header, data


_SNAP = re.compile(r"^snap_(\d+)\.csv$")


def load_snapshots(path):
    """Read one trajectory directory into ``(MeshInput, SnapshotSet)``."""
    if not os.path.isdir(path):
        raise IngestionError("not a directory", path)
    snaps = sorted((int(m.group(1)), name) for name in os.listdir(path) if (m := _SNAP.match(name)))
    if not snaps:
        raise IngestionError("no snapshots found", path)
    _, pts = _read_table(os.path.join(path, "points.csv"), ("x", "y"))
    _, faces = _read_table(os.path.join(path, "faces.csv"), ("i", "j"), conv=int)
    n = len(pts)
    meta = {"dt": 1.0, "u_in": 1.0, "re": float("nan"), "radius": DEFAULT_RADIUS}
    mpath = os.path.join(path, "meta.csv")
    if os.path.exists(mpath):
        head, rows = _read_table(mpath)
        if rows:
            meta.update(dict(zip(head, rows[0])))
    arrays, names = [], None
    for _, name in snaps:
        fp = os.path.join(path, name)
        head, rows = _read_table(fp)
        if names is None:
            names = tuple(head)
        elif tuple(head) != names:
            raise IngestionError(f"header {head} differs from {list(names)}", fp, 1)
        if len(rows) != n:
            raise IngestionError(f"has {len(rows)} rows but points.csv has {n}", fp)
        arrays.append(rows)
    ks = np.array([k for k, _ in snaps], dtype=np.float64)
    mesh = MeshInput(np.asarray(pts, dtype=np.float64),
                     np.asarray(faces, dtype=np.int64).reshape(-1, 2), float(meta["radius"]))
    return mesh, SnapshotSet(snapshots=np.asarray(arrays, dtype=np.float64), times=ks * meta["dt"],
                             dt=float(meta["dt"]), re=float(meta["re"]), u_in=float(meta["u_in"]),
                             feature_names=names)


def trajectory_dirs(path):
    """``path`` itself if it holds a trajectory, else its trajectory subdirectories."""
    if os.path.exists(os.path.join(path, "points.csv")):
        return [path]
    if not os.path.isdir(path):
        raise IngestionError("not a directory", path)
    subs = sorted(os.path.join(path, d) for d in os.listdir(path)
                  if os.path.exists(os.path.join(path, d, "points.csv")))
    if not subs:
        raise IngestionError("no trajectories found", path)
    return subs


@dataclass
class Trajectory:
    name: str
    mesh: MeshInput
    snaps: SnapshotSet
    graph: object = field(default=None, repr=False)


def load_trajectories(path):
    out = []
    for d in trajectory_dirs(path):
        mesh, snaps = load_snapshots(d)
        out.append(Trajectory(os.path.basename(os.path.normpath(d)), mesh, snaps))
    return out
