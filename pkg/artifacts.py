"""
ARTIFACTS
=========

On-disk formats of the lab. Every file is written to a temporary sibling
and renamed into place.

trajectory.csv
    header ``t,l2,dirichlet,laplacian_l2,sup,vt_l2,sup_bound,ddt_dirichlet_sq,nonlinear_l2``,
    one row per sample, floats as ``%.17g``, ``\\n`` line ends

*.json
    sorted keys, 2-space indent, shortest round-trip floats, NaN/Inf as null

snapshot (text, stable format "ns_lab field snapshot v1")
    # ns_lab field snapshot v1
    # N=<N>
    # time=<t>
    # scheme=<label>
    k1,k2,k3,re1,im1,re2,im2,re3,im3
    one row per wavevector, k_i in -N/2+1..N/2, lexicographic by (k1, k2, k3)

fields.npz
    ``times`` (S,) and ``coeffs`` (S, 3, N, N, N) complex128

run ledger (sqlite)
    tables ``runs`` and ``checks``; see RunLedger
"""

import io
import json
import math
import os
import sqlite3
import tempfile
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from dynamics import EXTRA_COLUMNS, TRAJECTORY_COLUMNS, Sample, SolverConfig, Trajectory
from lab_logger import Logger
from spectral_core import NormBundle, SpectralField, axis_modes, validate_resolution

TOOLKIT_VERSION = "0.4.0"
FLOAT_FORMAT = '%.17g'
SNAPSHOT_MAGIC = "# ns_lab field snapshot v1"
SNAPSHOT_COLUMNS = ['k1', 'k2', 'k3', 're1', 'im1', 're2', 'im2', 're3', 'im3']
RUN_LEDGER_FILE = os.getenv('RUN_LEDGER_FILE', "ns_lab_runs.db")

TRAJECTORY_FILE = 'trajectory.csv'
MANIFEST_FILE = 'manifest.json'
FIELD_ARCHIVE_FILE = 'fields.npz'


class TrajectoryFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Atomic writes
# ---------------------------------------------------------------------------

def atomic_write_bytes(path: str, data: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix='.' + os.path.basename(path) + '.', suffix='.tmp', dir=directory)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_text(path: str, text: str):
    atomic_write_bytes(path, text.encode('utf-8'))


def write_frame_csv(frame: pd.DataFrame, path: str):
    atomic_write_text(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator='\n'))


def jsonable(obj):
    """Plain JSON types; non-finite floats become None"""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def write_json(path: str, obj):
    atomic_write_text(path, json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + '\n')


def read_json(path: str):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Trajectory CSV
# ---------------------------------------------------------------------------

def write_trajectory_csv(traj: Trajectory, path: str):
    write_frame_csv(traj.to_frame(), path)


def _optional(value: float) -> Optional[float]:
    return None if value is None or (isinstance(value, float) and math.isnan(value)) else float(value)


def read_trajectory_csv(path: str, config: Optional[SolverConfig] = None) -> Trajectory:
    """Norm-series trajectory (no fields); rejects missing columns and non-monotone time"""
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except FileNotFoundError:
        raise
    except Exception as e:
        raise TrajectoryFormatError(f"{path}: cannot parse CSV: {e}") from None

    missing = [c for c in TRAJECTORY_COLUMNS if c not in frame.columns]
    if missing:
        raise TrajectoryFormatError(f"{path}: missing columns {', '.join(missing)}")
    if frame.empty:
        raise TrajectoryFormatError(f"{path}: no samples")
    for column in EXTRA_COLUMNS:
        if column not in frame.columns:
            frame[column] = np.nan
    try:
        frame = frame.astype(float)
    except (TypeError, ValueError) as e:
        raise TrajectoryFormatError(f"{path}: non-numeric value: {e}") from None

    t = frame['t'].to_numpy()
    if not np.all(np.isfinite(t)):
        raise TrajectoryFormatError(f"{path}: non-finite time value")
    steps = np.diff(t)
    if np.any(steps <= 0):
        row = int(np.nonzero(steps <= 0)[0][0]) + 1
        raise TrajectoryFormatError(f"{path}: non-monotone time at data row {row + 1}: "
                                    f"t={t[row]!r} after t={t[row - 1]!r}")

    traj = Trajectory(config=config)
    for row in frame.itertuples(index=False):
        bundle = NormBundle(t=row.t, l2=row.l2, dirichlet=row.dirichlet, laplacian_l2=row.laplacian_l2,
                            d2_l2=row.laplacian_l2, sup=row.sup,
                            sup_bound=row.sup_bound if not math.isnan(row.sup_bound) else row.sup,
                            vt_l2=_optional(row.vt_l2))
        traj.append(Sample(t=row.t, bundle=bundle, ddt_dirichlet_sq=row.ddt_dirichlet_sq,
                           nonlinear_l2=row.nonlinear_l2))
    return traj


# ---------------------------------------------------------------------------
# Snapshots and field archive
# ---------------------------------------------------------------------------

def _snapshot_order(N: int) -> Tuple[np.ndarray, np.ndarray]:
    """Axis indices of k = -N/2+1 .. N/2 in increasing k, and those k"""
    k = axis_modes(N).astype(int)
    k = np.where(k == -N // 2, N // 2, k)
    return np.argsort(k, kind='stable'), np.sort(k)


def write_snapshot(path: str, f: SpectralField, t: float, scheme_label: str):
    N = f.N
    order, ks = _snapshot_order(N)
    c = f.coeffs[:, order][:, :, order][:, :, :, order]
    K1, K2, K3 = np.meshgrid(ks, ks, ks, indexing='ij')
    table = pd.DataFrame({
        'k1': K1.ravel(), 'k2': K2.ravel(), 'k3': K3.ravel(),
        're1': c[0].real.ravel(), 'im1': c[0].imag.ravel(),
        're2': c[1].real.ravel(), 'im2': c[1].imag.ravel(),
        're3': c[2].real.ravel(), 'im3': c[2].imag.ravel(),
    }, columns=SNAPSHOT_COLUMNS)
    header = f"{SNAPSHOT_MAGIC}\n# N={N}\n# time={float(t)!r}\n# scheme={scheme_label}\n"
    atomic_write_text(path, header + table.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator='\n'))


def read_snapshot(path: str) -> Tuple[SpectralField, float, str]:
    with open(path, 'r', encoding='utf-8') as fh:
        text = fh.read()
    lines = text.split('\n')
    if not lines or lines[0].strip() != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not an ns_lab field snapshot")
    meta = {}
    for line in lines[1:4]:
        key, _, value = line.lstrip('# ').partition('=')
        meta[key.strip()] = value.strip()
    N = validate_resolution(int(meta['N']))
    table = pd.read_csv(io.StringIO('\n'.join(lines[4:])), float_precision='round_trip')
    if list(table.columns) != SNAPSHOT_COLUMNS or len(table) != N ** 3:
        raise ValueError(f"{path}: malformed coefficient table")

    coeffs = np.zeros((3, N, N, N), dtype=np.complex128)
    idx = [table[k].to_numpy(dtype=int) % N for k in ('k1', 'k2', 'k3')]
    for i in range(3):
        coeffs[i][idx[0], idx[1], idx[2]] = table[f're{i + 1}'].to_numpy() + 1j * table[f'im{i + 1}'].to_numpy()
    return SpectralField(coeffs), float(meta['time']), meta.get('scheme', '')


def write_field_archive(path: str, traj: Trajectory):
    buffer = io.BytesIO()
    np.savez_compressed(buffer, times=traj.times, coeffs=np.stack([f.coeffs for f in traj.fields()]))
    atomic_write_bytes(path, buffer.getvalue())


def read_field_archive(path: str) -> Tuple[np.ndarray, List[SpectralField]]:
    with np.load(path) as archive:
        times = archive['times']
        coeffs = archive['coeffs']
    return times, [SpectralField(c) for c in coeffs]


def attach_fields(traj: Trajectory, path: str) -> Trajectory:
    """Norm-series trajectory plus the archived fields at the same sample times"""
    times, fields = read_field_archive(path)
    if times.shape != traj.times.shape or not np.allclose(times, traj.times, rtol=0, atol=1e-12):
        raise TrajectoryFormatError(f"{path}: archived sample times do not match the trajectory")
    out = Trajectory(config=traj.config, blowup_time=traj.blowup_time, blowup_reason=traj.blowup_reason)
    for s, f in zip(traj.samples, fields):
        out.append(Sample(t=s.t, bundle=s.bundle, ddt_dirichlet_sq=s.ddt_dirichlet_sq,
                          nonlinear_l2=s.nonlinear_l2, field=f))
    return out


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    rollup: dict = field(default_factory=dict)
    exit_code: int = 0
    version: str = TOOLKIT_VERSION

    def to_dict(self) -> dict:
        return {
            'command': self.command, 'config': self.config, 'artifacts': self.artifacts,
            'timings': self.timings, 'rollup': self.rollup, 'exit_code': self.exit_code,
            'version': self.version,
        }

    def write(self, out_dir: str) -> str:
        path = os.path.join(out_dir, MANIFEST_FILE)
        write_json(path, self.to_dict())
        return path


def load_manifest_config(out_dir: str) -> Optional[SolverConfig]:
    """Config echoed by the simulate manifest next to a trajectory, if there is one"""
    path = os.path.join(out_dir, MANIFEST_FILE)
    if not os.path.exists(path):
        return None
    try:
        echo = read_json(path).get('config') or {}
        return SolverConfig.from_mapping({k: str(v) for k, v in echo.items()}) if echo else None
    except Exception as e:
        Logger.warning(f"⚠️ Ignoring manifest config in {path}: {e}")
        return None


# ---------------------------------------------------------------------------
# Run ledger
# ---------------------------------------------------------------------------

class RunLedger:
    """SQLite history of CLI commands and their check outcomes"""

    def __init__(self, db_file: Optional[str] = None):
        self.db_file = db_file or RUN_LEDGER_FILE
        self.init_database()

    def init_database(self):
        try:
            db_dir = os.path.dirname(self.db_file)
            if db_dir:
                os.makedirs(db_dir, exist_ok=True)
            conn = sqlite3.connect(self.db_file)
            cursor = conn.cursor()

            cursor.execute('''
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    command TEXT,
                    out_dir TEXT,
                    scheme TEXT,
                    resolution INTEGER,
                    datum TEXT,
                    exit_code INTEGER,
                    wall_seconds REAL,
                    version TEXT,
                    timestamp DATETIME DEFAULT CURRENT_TIMESTAMP
                )
            ''')

            cursor.execute('''
                CREATE TABLE IF NOT EXISTS checks (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id INTEGER,
                    name TEXT,
                    status TEXT,
                    passed INTEGER,
                    max_violation REAL,
                    tolerance REAL,
                    timestamp DATETIME DEFAULT CURRENT_TIMESTAMP,
                    FOREIGN KEY (run_id) REFERENCES runs (id)
                )
            ''')

            conn.commit()
            conn.close()
        except Exception as e:
            Logger.error(f"Failed to initialize run ledger {self.db_file}: {str(e)}")

    def record_run(self, manifest: RunManifest, out_dir: str) -> Optional[int]:
        try:
            conn = sqlite3.connect(self.db_file)
            cursor = conn.cursor()
            config = manifest.config or {}
            resolution = config.get('N')
            cursor.execute('''
                INSERT INTO runs (command, out_dir, scheme, resolution, datum, exit_code, wall_seconds, version)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?)
            ''', (manifest.command, out_dir, config.get('scheme'),
                  int(resolution) if resolution is not None else None, config.get('datum'),
                  manifest.exit_code, manifest.timings.get('total_seconds'), manifest.version))
            run_id = cursor.lastrowid
            conn.commit()
            conn.close()
            Logger.info(f"📝 Run recorded in ledger: #{run_id} {manifest.command} (exit {manifest.exit_code})")
            return run_id
        except Exception as e:
            Logger.error(f"Failed to record run: {str(e)}")
            return None

    def record_check(self, run_id: Optional[int], report_dict: dict):
        if run_id is None:
            return
        try:
            conn = sqlite3.connect(self.db_file)
            cursor = conn.cursor()
            max_violation = report_dict.get('max_violation')
            cursor.execute('''
                INSERT INTO checks (run_id, name, status, passed, max_violation, tolerance)
                VALUES (?, ?, ?, ?, ?, ?)
            ''', (run_id, report_dict.get('name'), report_dict.get('status'), int(bool(report_dict.get('pass'))),
                  max_violation if max_violation is None or math.isfinite(max_violation) else None,
                  report_dict.get('tolerance')))
            conn.commit()
            conn.close()
        except Exception as e:
            Logger.error(f"Failed to record check: {str(e)}")

    def recent_runs(self, limit: int = 10) -> List[tuple]:
        try:
            conn = sqlite3.connect(self.db_file)
            cursor = conn.cursor()
            cursor.execute('''
                SELECT id, command, scheme, resolution, datum, exit_code, wall_seconds, timestamp
                FROM runs ORDER BY id DESC LIMIT ?
            ''', (limit,))
            rows = cursor.fetchall()
            conn.close()
            return rows
        except Exception as e:
            Logger.error(f"Failed to read run ledger: {str(e)}")
            return []
