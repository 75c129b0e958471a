"""Run configuration, stage orchestration and artifact persistence."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import AngularGrid, BasisError, build_basis, compute_coefficients, on_angles
from .contraction import CarlemanParams, ContractionError, FourierField, run_contraction
from .forward import PHANTOM_IDS, ForwardError, generate_dataset, make_phantom, read_dataset, write_dataset
from .grid import SpatialGrid
from .lsq import LeastSquaresError
from .preprocess import PreprocessError, choose_cutoff, compute_log_boundary, compute_traces
from .reconstruct import reconstruct_c, score


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A numerical failure tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


NUMERICAL_ERRORS = (ForwardError, BasisError, PreprocessError, ContractionError, LeastSquaresError,
                    np.linalg.LinAlgError, FloatingPointError, MemoryError, RuntimeError)

# wave numbers used with each phantom at full scale
FULL_SCALE_WAVENUMBERS = {"test1": 3 * math.pi, "test2": 2 * math.pi, "test3": 2 * math.pi, "test4": 4 * math.pi}


@dataclass
class RunConfig:
    n: int = 48
    n_theta: int = 64
    k: float = 2 * math.pi
    phantom: str = "test1"
    delta: float = 0.1
    seed: int = 1
    N: int | str = 12
    x0: tuple[float, float] = (0.0, -10.0)
    beta: float = 20.0
    lam: float = 6.0
    epsilon: float = 10**-5.5
    normalize_radius: bool = False
    neumann_weight: float | None = None
    P: int = 6
    init_mode: str = "qr"
    out: str = "runs/desk"
    n_data: int | None = None  # None -> 2n - 1
    n_max: int = 30  # largest N tried when N is "auto"
    save_iterates: bool = False

    def __post_init__(self):
        self.x0 = tuple(self.x0)
        self.validate()

    def validate(self):
        ints = {"n": 3, "n_theta": 3, "P": 1, "n_max": 1}
        for name, low in ints.items():
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, int) or val < low:
                raise ConfigError(f"{name} must be an integer >= {low}, got {val!r}")
        if not (isinstance(self.N, int) and not isinstance(self.N, bool) and self.N >= 1) and self.N != "auto":
            raise ConfigError(f"N must be a positive integer or 'auto', got {self.N!r}")
        for name in ("k", "beta", "epsilon"):
            val = getattr(self, name)
            if not isinstance(val, (int, float)) or isinstance(val, bool) or not val > 0 or not math.isfinite(val):
                raise ConfigError(f"{name} must be a positive number, got {val!r}")
        if not isinstance(self.lam, (int, float)) or self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam!r}")
        if not isinstance(self.delta, (int, float)) or self.delta < 0:
            raise ConfigError(f"delta must be non-negative, got {self.delta!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if len(self.x0) != 2 or max(abs(float(self.x0[0])), abs(float(self.x0[1]))) <= 1.0:
            raise ConfigError(f"x0 must be a point outside [-1, 1]^2, got {self.x0!r}")
        if self.neumann_weight is not None and not self.neumann_weight > 0:
            raise ConfigError("neumann_weight must be positive or null")
        if self.phantom not in PHANTOM_IDS:
            raise ConfigError(f"unknown phantom {self.phantom!r}; choose from {sorted(PHANTOM_IDS)}")
        if self.init_mode not in ("qr", "zero"):
            raise ConfigError(f"init_mode must be 'qr' or 'zero', got {self.init_mode!r}")
        if self.n_data is not None and (self.n_data < self.n or (self.n_data - 1) % (self.n - 1)):
            raise ConfigError(f"n_data={self.n_data} must be >= n and satisfy (n_data-1) % (n-1) == 0")

    @property
    def data_n(self) -> int:
        return 2 * self.n - 1 if self.n_data is None else self.n_data

    @property
    def carleman(self) -> CarlemanParams:
        return CarlemanParams(x0=(float(self.x0[0]), float(self.x0[1])), beta=float(self.beta), lam=float(self.lam),
                              epsilon=float(self.epsilon), normalize_radius=bool(self.normalize_radius),
                              neumann_weight=self.neumann_weight)

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["lambda"] = out.pop("lam")
        out["x0"] = list(out["x0"])
        return out


JSON_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"lam"} | {"lambda"}

PROFILES = {
    "desk": {},
    "paper": {"n": 64, "n_theta": 150, "N": 42, "P": 10, "out": "runs/paper"},
}


def config_from_dict(values: dict, profile: str = "desk") -> RunConfig:
    """Profile defaults overlaid with ``values``; unknown keys are rejected."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    unknown = set(values) - JSON_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(PROFILES[profile])
    merged.update(values)
    if profile == "paper" and "k" not in values:
        merged["k"] = FULL_SCALE_WAVENUMBERS.get(merged.get("phantom", "test1"), 2 * math.pi)
    if "lambda" in merged:
        merged["lam"] = merged.pop("lambda")
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None, profile: str = "desk", overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config must be a JSON object")
    values = dict(values)
    values.update({key: val for key, val in (overrides or {}).items() if val is not None})
    return config_from_dict(values, profile)


# -- artifacts -----------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(key): _clean(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(val) for val in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        val = float(obj)
        return val if math.isfinite(val) else None
    return obj


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class ArtifactWriter:
    """Tracks files written by one command so they can be hashed or removed on abort."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.written: list[Path] = []
        self._created_dirs: list[Path] = []

    def _prepare(self, rel: str) -> Path:
        target = self.root / rel
        self.directory(str(target.parent.relative_to(self.root)))
        return target

    def directory(self, rel: str) -> Path:
        """Create ``<root>/rel`` and remember any directories that had to be made."""
        target = self.root / rel
        missing = []
        parent = target
        while not parent.exists():
            missing.append(parent)
            parent = parent.parent
        target.mkdir(parents=True, exist_ok=True)
        self._created_dirs.extend(reversed(missing))
        return target

    def _track(self, target: Path) -> Path:
        if target not in self.written:
            self.written.append(target)
        return target

    def json(self, rel: str, payload) -> Path:
        target = self._prepare(rel)
        target.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")
        return self._track(target)

    def rows(self, rel: str, header: list[str], rows) -> Path:
        target = self._prepare(rel)
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
        return self._track(target)

    def adopt(self, paths) -> None:
        for p in paths:
            self._track(Path(p))

    def manifest(self) -> dict:
        return {str(p.relative_to(self.root)): sha256(p) for p in self.written}

    def rollback(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)
        for d in reversed(self._created_dirs):
            try:
                d.rmdir()
            except OSError:
                pass
        self.written.clear()


def grid_rows(grid: SpatialGrid, values: np.ndarray):
    X, Y = grid.mesh
    for x, y, v in zip(X.ravel(), Y.ravel(), np.asarray(values).ravel()):
        yield float(x), float(y), float(v)


def read_grid_csv(path: str | Path) -> tuple[SpatialGrid, np.ndarray]:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = int(round(math.sqrt(raw.shape[0])))
    if n * n != raw.shape[0]:
        raise ConfigError(f"{path} does not hold a square grid")
    return SpatialGrid(n), raw[:, 2].reshape(n, n)


class _Timer:
    def __init__(self):
        self.stages: dict[str, float] = {}

    def run(self, stage: str, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except NUMERICAL_ERRORS as exc:
            raise StageError(stage, exc) from exc
        finally:
            self.stages[stage] = self.stages.get(stage, 0.0) + time.perf_counter() - start


@dataclass
class RunResult:
    summary: dict
    files: list[Path] = field(default_factory=list)


def _summary(cfg: RunConfig, writer: ArtifactWriter, timer: _Timer, **parts) -> dict:
    payload = {"config": cfg.to_json(), **parts, "manifest": writer.manifest()}
    payload["timings"] = {key: round(val, 6) for key, val in timer.stages.items()}
    return payload


def _guarded(cfg: RunConfig, body):
    writer = ArtifactWriter(cfg.out)
    timer = _Timer()
    try:
        return body(writer, timer)
    except BaseException:
        writer.rollback()
        raise


# -- commands ------------------------------------------------------------------


def _generate(cfg: RunConfig, writer: ArtifactWriter, timer: _Timer):
    data = timer.run("forward", generate_dataset, cfg.phantom, cfg.n, cfg.n_theta, cfg.k, cfg.delta, cfg.seed,
                     n_data=cfg.data_n)
    writer.adopt(write_dataset(data, writer.directory("data")))
    return data


def cmd_gen_data(cfg: RunConfig) -> RunResult:
    """Simulate the boundary data set and write it under ``<out>/data``."""

    def body(writer, timer):
        _generate(cfg, writer, timer)
        summary = _summary(cfg, writer, timer, command="gen-data")
        writer.json("summary.json", summary)
        return RunResult(summary, list(writer.written))

    return _guarded(cfg, body)


def _load_data(cfg: RunConfig, data_dir: str | Path | None):
    path = Path(data_dir) if data_dir is not None else Path(cfg.out) / "data"
    if not (path / "header.json").exists():
        raise ConfigError(f"no dataset at {path}; run gen-data first or pass --data")
    data = read_dataset(path)
    if data.grid.n != cfg.n or data.angular.n_theta != cfg.n_theta:
        raise ConfigError(f"dataset grid (n={data.grid.n}, n_theta={data.angular.n_theta}) does not match "
                          f"config (n={cfg.n}, n_theta={cfg.n_theta})")
    if not math.isclose(data.k, cfg.k, rel_tol=1e-12):
        raise ConfigError(f"dataset wave number {data.k} differs from config k={cfg.k}")
    return data


def _write_cutoff(writer: ArtifactWriter, cutoff) -> None:
    writer.rows("eN.csv", ["N", "e"], ((i + 1, float(e)) for i, e in enumerate(cutoff.e)))


def cmd_choose_n(cfg: RunConfig, data_dir: str | Path | None = None) -> RunResult:
    """Compute the truncation curve e(N) and the selected cutoff."""

    def body(writer, timer):
        data = _load_data(cfg, data_dir)
        cutoff = timer.run("choose-n", choose_cutoff, data, n_max=cfg.n_max)
        _write_cutoff(writer, cutoff)
        summary = _summary(cfg, writer, timer, command="choose-n", selected_N=cutoff.N,
                           e_curve=cutoff.e, sustained_increase_at=cutoff.sustained_increase_at)
        writer.json("summary.json", summary)
        return RunResult(summary, list(writer.written))

    return _guarded(cfg, body)


def _reconstruct(cfg: RunConfig, data, writer: ArtifactWriter, timer: _Timer) -> dict:
    parts = {}
    if cfg.N == "auto":
        cutoff = timer.run("choose-n", choose_cutoff, data, n_max=cfg.n_max)
        _write_cutoff(writer, cutoff)
        N = cutoff.N
        parts["e_curve"] = cutoff.e
        parts["selected_N"] = N
    else:
        N = cfg.N

    def make_basis():
        return compute_coefficients(on_angles(build_basis(N, max(4096, 50 * N)), data.angular), cfg.k)

    basis = timer.run("basis", make_basis)
    parts["basis"] = basis.report()

    def preprocess():
        return compute_traces(compute_log_boundary(data), data, basis)

    traces = timer.run("preprocess", preprocess)
    run = timer.run("contraction", run_contraction, traces, basis, data.grid, cfg.carleman, cfg.P,
                    init_mode=cfg.init_mode, keep_iterates=cfg.save_iterates)
    writer.rows("convergence.csv", ["p", "diff"], ((p + 1, float(d)) for p, d in enumerate(run.diffs)))
    if cfg.save_iterates:
        for p, it in enumerate(run.iterates, start=1):
            _dump_field(writer, it, p)
    parts["convergence"] = {"diffs": run.diffs, "rate_estimate": run.rate_estimate,
                            "conditions": [info.get("condition") for info in run.solver_info]}

    rec = timer.run("reconstruct", reconstruct_c, run.final, basis, cfg.k, data.angular)
    phantom = make_phantom(cfg.phantom, data.grid)
    writer.rows("c_comp.csv", ["x", "y", "value"], grid_rows(data.grid, rec.c))
    writer.rows("c_true.csv", ["x", "y", "value"], grid_rows(data.grid, phantom.c))
    metrics = timer.run("metrics", score, rec.c, phantom).to_dict()
    writer.json("metrics.json", metrics)
    parts["metrics"] = metrics
    return parts


def _dump_field(writer: ArtifactWriter, v: FourierField, p: int) -> None:
    X, Y = v.grid.mesh
    for m in range(v.N):
        vals = v.values[m]
        writer.rows(f"iterates/v_p{p}_m{m + 1}.csv", ["x", "y", "re", "im"],
                    ((float(x), float(y), float(z.real), float(z.imag))
                     for x, y, z in zip(X.ravel(), Y.ravel(), vals.ravel())))


def cmd_reconstruct(cfg: RunConfig, data_dir: str | Path | None = None) -> RunResult:
    """Preprocess, iterate, reconstruct and score an existing data set."""

    def body(writer, timer):
        data = _load_data(cfg, data_dir)
        parts = _reconstruct(cfg, data, writer, timer)
        summary = _summary(cfg, writer, timer, command="reconstruct", **parts)
        writer.json("summary.json", summary)
        return RunResult(summary, list(writer.written))

    return _guarded(cfg, body)


def cmd_full(cfg: RunConfig) -> RunResult:
    """Generate data, then reconstruct from it."""

    def body(writer, timer):
        _generate(cfg, writer, timer)
        data = _load_data(cfg, None)
        parts = _reconstruct(cfg, data, writer, timer)
        summary = _summary(cfg, writer, timer, command="full", **parts)
        writer.json("summary.json", summary)
        return RunResult(summary, list(writer.written))

    return _guarded(cfg, body)


def cmd_metrics(cfg: RunConfig, c_path: str | Path | None = None) -> RunResult:
    """Score a stored ``c_comp.csv`` against the configured phantom and rewrite ``metrics.json``."""

    def body(writer, timer):
        path = Path(c_path) if c_path is not None else Path(cfg.out) / "c_comp.csv"
        if not path.exists():
            raise ConfigError(f"no reconstruction at {path}")
        grid, c = read_grid_csv(path)
        metrics = timer.run("metrics", score, c, make_phantom(cfg.phantom, grid)).to_dict()
        writer.json("metrics.json", metrics)
        return RunResult({"metrics": metrics}, list(writer.written))

    return _guarded(cfg, body)
