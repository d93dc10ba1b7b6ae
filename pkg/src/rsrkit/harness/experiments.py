"""Experiment runners: convergence traces, noise sweeps, TME vs TME+STE, phase maps, diagnosis.

An experiment is a JSON-serialisable :class:`ExperimentSpec`. The grids are
expanded in the fixed order ``dssnr x gamma x epsilon x alpha`` and every
(cell, replicate) pair becomes one independent task whose result is an
:class:`ExperimentRow`. Tasks only depend on the spec, so they can be run in
worker processes; rows are always returned in grid order.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from .. import constants as K
from ..diagnostics import (
    check_main_condition,
    check_noisy_condition,
    constants,
    dssnr as dssnr_of,
    noisy_constants,
)
from ..errors import (
    ConfigError,
    DegenerateSupport,
    DegenerateUpdate,
    InlierTMEFailed,
    NeedsGroundTruth,
    NotConverged,
    RegimeViolation,
)
from ..estimators import EstimatorConfig, projected_tme, ste_solve, tme_solve
from ..generators import (
    HaystackParams,
    apply_cone_noise,
    gen_haystack,
    init_from_subspace,
    init_from_tme,
    make_rng,
    outlier_covariance,
    perturb_subspace,
    sample_subspace,
)
from ..io import load_truth, read_dataset, truth_path
from ..spectral import eigvals, sin_largest_angle

KINDS = ("convergence", "noise_sweep", "phase_diagram", "tme_vs_ste", "diagnose")
GRID_KEYS = ("dssnr", "gamma", "epsilon", "alpha")
ESTIMATOR_FAILURES = (NotConverged, DegenerateUpdate, InlierTMEFailed, np.linalg.LinAlgError)

# stream tags for harness-level randomness (generators use 0..5)
_TAG_PERTURB = 101
_TAG_CE = 102


# ---------------------------------------------------------------------------
# spec


@dataclass
class ExperimentSpec:
    kind: str
    model: dict
    estimator: dict = field(default_factory=dict)
    init: dict = field(default_factory=lambda: {"kind": "identity"})
    grids: dict = field(default_factory=dict)
    replicates: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not isinstance(self.model, dict):
            raise ConfigError("model must be an object")
        if not isinstance(self.replicates, int) or self.replicates < 1:
            raise ConfigError("replicates must be a positive integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        unknown = set(self.grids) - set(GRID_KEYS)
        if unknown:
            raise ConfigError(f"unknown grid keys {sorted(unknown)}")
        for k, v in self.grids.items():
            if not isinstance(v, list) or not v:
                raise ConfigError(f"grid {k!r} must be a non-empty list")
        if self.init.get("kind", "identity") not in ("identity", "subspace", "tme"):
            raise ConfigError(f"unknown init kind {self.init.get('kind')!r}")
        if self.kind == "noise_sweep":
            eps = self.grids.get("epsilon")
            if not eps or any(not 0 <= e <= 0.5 for e in eps):
                raise ConfigError("noise_sweep needs an epsilon grid inside [0, 1/2]")
        try:
            self.config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad estimator settings: {exc}") from exc

    @classmethod
    def from_dict(cls, obj):
        names = {f.name for f in fields(cls)}
        extra = set(obj) - names
        if extra:
            raise ConfigError(f"unknown spec keys {sorted(extra)}")
        if "kind" not in obj or "model" not in obj:
            raise ConfigError("spec needs 'kind' and 'model'")
        return cls(**obj)

    @classmethod
    def load(cls, path):
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read spec {path}: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("spec must be a JSON object")
        return cls.from_dict(obj)

    def to_dict(self):
        return asdict(self)

    def config(self, gamma=None):
        est = dict(self.estimator)
        if "d" not in est and "d" in self.model:
            est["d"] = self.model["d"]
        if gamma is not None:
            est["gamma"] = gamma
        return EstimatorConfig(**est)

    def cells(self):
        """Grid cells in deterministic order, as dicts over GRID_KEYS (None = not swept)."""
        axes = [self.grids.get(k, [None]) for k in GRID_KEYS]
        return [dict(zip(GRID_KEYS, combo)) for combo in itertools.product(*axes)]

    @property
    def is_sweep(self):
        return len(self.cells()) > 1 or self.replicates > 1


# ---------------------------------------------------------------------------
# rows


@dataclass
class ExperimentRow:
    kind: str
    seed: int
    data_seed: int
    cell: int
    replicate: int
    D: int
    d: int
    n1: int
    n0: int
    dssnr: float
    gamma: float
    epsilon: Optional[float]
    alpha: Optional[float]
    cross: float
    init: str
    regime_ok: bool
    status: str = "ok"
    final_sin_theta1: Optional[float] = None
    iterations: Optional[int] = None
    converged: Optional[bool] = None
    fitted_rate: Optional[float] = None
    c0_rate: Optional[float] = None
    condition_margin: Optional[float] = None
    kappa1_growth_min: Optional[float] = None
    kappa1_growth_median: Optional[float] = None
    kappa2_hat_max: Optional[float] = None
    tme_sin_theta1: Optional[float] = None
    tme_gap: Optional[float] = None
    tme_iterations: Optional[int] = None
    recovered: Optional[bool] = None
    runtime: float = 0.0


ROW_FIELDS = [f.name for f in fields(ExperimentRow)]
TRACE_FIELDS = ["cell", "replicate", "k", "step_delta", "sin_theta1", "kappa1_hat", "kappa2_hat",
                "kappa3_hat", "pp_ratio", "wall_time"]


def fmt_value(v):
    """CSV text for one value: ``%.17g`` floats, ``inf`` markers, empty for missing."""
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return "nan"
    return "%.17g" % v


def json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return v
    if isinstance(v, dict):
        return {k: json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [json_value(x) for x in v]
    return v


def _header(timestamp):
    if not timestamp:
        return ""
    return "# generated " + time.strftime("%Y-%m-%dT%H:%M:%S%z") + "\n"


def write_table(path, records: List[dict], columns, fmt="csv", timestamp=True):
    """Write dict records as CSV (header row = ``columns``) or as a JSON list."""
    path = Path(path)
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(_header(timestamp))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        w.writerows([fmt_value(r.get(c)) for c in columns] for r in records)
        path.write_text(buf.getvalue())
    elif fmt == "json":
        body = [{c: json_value(r.get(c)) for c in columns} for r in records]
        obj = {"rows": body}
        if timestamp:
            obj = {"generated": time.strftime("%Y-%m-%dT%H:%M:%S%z"), **obj}
        path.write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n")
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    return path


def write_json(path, obj, timestamp=True):
    obj = json_value(obj)
    if timestamp:
        obj = {"generated": time.strftime("%Y-%m-%dT%H:%M:%S%z"), **obj}
    Path(path).write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n")
    return Path(path)


# ---------------------------------------------------------------------------
# instance construction


def derived_seed(*parts):
    """A 63-bit seed derived from integer parts (stable across platforms)."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def counts_for(model, dssnr_value):
    """``(n1, n0)`` from the model, optionally adjusted to hit ``dssnr_value``.

    With ``N`` in the model the total is held fixed; otherwise ``n0`` is
    held fixed and ``n1`` derived.
    """
    D, d = model["D"], model["d"]
    if dssnr_value is None:
        if "n1" not in model or "n0" not in model:
            raise ConfigError("model needs n1 and n0 unless a dssnr grid is given")
        return int(model["n1"]), int(model["n0"])
    ratio = dssnr_value * d / (D - d)  # n1 / n0
    if "N" in model:
        n0 = int(round(model["N"] / (1.0 + ratio)))
        return int(model["N"]) - n0, n0
    if "n0" not in model:
        raise ConfigError("model needs n0 or N when sweeping dssnr")
    n0 = int(model["n0"])
    return int(round(ratio * n0)), n0


def _check_model(model):
    for k in ("D", "d"):
        if k not in model:
            raise ConfigError(f"model needs {k!r}")
    if not 1 <= model["d"] < model["D"]:
        raise ConfigError("model needs 1 <= d < D")


def build_instance(spec: ExperimentSpec, cell: dict, cell_index: int, rep: int):
    """Generate ``(data, truth, data_seed)`` for one task.

    The data seed depends on the replicate and on the dssnr cell only, so
    cells that differ in gamma, epsilon or alpha see the same base points
    (and the same noise draws, scaled by epsilon).
    """
    model = spec.model
    if "dataset" in model:
        data, eps = read_dataset(model["dataset"])
        tp = model.get("truth") or truth_path(model["dataset"])
        if not Path(tp).exists():
            raise NeedsGroundTruth(f"no ground truth sidecar at {tp}")
        truth = load_truth(tp)
        truth.check(data)
        data = truth.labelled(data)
        if cell["epsilon"]:
            data, truth = apply_cone_noise(data, truth, cell["epsilon"], make_rng(spec.seed, rep, 4))
        return data, truth, spec.seed
    _check_model(model)
    D, d = model["D"], model["d"]
    n1, n0 = counts_for(model, cell["dssnr"])
    dssnr_index = spec.grids.get("dssnr", [None]).index(cell["dssnr"])
    seed = derived_seed(spec.seed, dssnr_index, rep)
    U = sample_subspace(D, d, make_rng(seed, 0))
    cross = float(model.get("cross", 0.0))
    spectrum = model.get("outlier_spectrum")
    S_out = None
    if cross != 0.0 or spectrum is not None:
        S_out = outlier_covariance(U, cross=cross, spectrum=spectrum)
    params = HaystackParams(n1=n1, n0=n0, d=d, D=D, inlier_spectrum=model.get("inlier_spectrum"),
                            outlier_covariance=S_out, seed=seed)
    data, truth = gen_haystack(params, basis=U)
    eps = cell["epsilon"] if cell["epsilon"] is not None else model.get("epsilon")
    if eps:
        data, truth = apply_cone_noise(data, truth, eps, make_rng(seed, 4))
    return data, truth, seed


def build_init(spec: ExperimentSpec, data, truth, cell, seed, cfg):
    """Initial matrix and a short label for it."""
    init = spec.init
    kind = init.get("kind", "identity")
    if kind == "identity":
        return np.eye(data.ambient_dim), "identity"
    if kind == "tme":
        return init_from_tme(data, cfg), "tme"
    angles = init.get("angles")
    if angles is None and "angles_deg" in init:
        angles = [math.radians(a) for a in init["angles_deg"]]
    if angles is None:
        angles = [0.0] * truth.d
    if len(angles) != truth.d:
        raise ConfigError(f"init needs {truth.d} angles, got {len(angles)}")
    alpha = cell["alpha"] if cell["alpha"] is not None else init.get("alpha")
    if alpha is None:
        alpha = math.sin(max(angles)) ** 2
        if alpha == 0:
            raise ConfigError("alpha defaults to sin^2 of the largest angle, which is 0 here")
    Lhat = perturb_subspace(truth.basis, sorted(angles, reverse=True), make_rng(seed, _TAG_PERTURB))
    return init_from_subspace(Lhat, alpha), "subspace"


# ---------------------------------------------------------------------------
# trace statistics


def fit_rate(sin_theta, window=K.RATE_WINDOW):
    """Per-iteration contraction factor fitted to ``log sin theta`` inside ``window``."""
    s = np.asarray(sin_theta, dtype=float)
    k = np.arange(s.size)
    lo, hi = window
    mask = np.isfinite(s) & (s >= lo) & (s <= hi)
    if mask.sum() < 2:
        return None
    slope = np.polyfit(k[mask], np.log(s[mask]), 1)[0]
    return float(np.exp(slope))


def growth_factors(trace):
    """Ratios ``kappa1_hat(k+1) / kappa1_hat(k)`` over steps where the iterate is not yet saturated."""
    k1 = trace.column("kappa1_hat")
    pp = trace.column("pp_ratio")
    out = []
    for i in range(len(k1) - 1):
        if not (np.isfinite(k1[i]) and np.isfinite(k1[i + 1])):
            continue
        if pp[i + 1] < K.SATURATION_REL:
            break
        out.append(k1[i + 1] / k1[i])
    return np.array(out)


def presaturation_max(trace, name):
    vals = trace.column(name)
    pp = trace.column("pp_ratio")
    keep = np.isfinite(vals) & (pp >= K.SATURATION_REL)
    return float(vals[keep].max()) if keep.any() else None


# ---------------------------------------------------------------------------
# one task


def _base_row(spec, cell_index, cell, rep, data, truth, seed, cfg, init_label):
    s = dssnr_of(data.n1, data.n0, truth.d, truth.D)
    return ExperimentRow(
        kind=spec.kind, seed=spec.seed, data_seed=seed, cell=cell_index, replicate=rep,
        D=truth.D, d=truth.d, n1=data.n1, n0=data.n0, dssnr=s, gamma=cfg.gamma,
        epsilon=cell["epsilon"] if cell["epsilon"] is not None else truth.noise_epsilon,
        alpha=cell["alpha"] if cell["alpha"] is not None else spec.init.get("alpha"),
        cross=float(spec.model.get("cross", 0.0)), init=init_label, regime_ok=bool(s > cfg.gamma),
    )


def run_task(spec_dict, cell_index, rep):
    """Run one (cell, replicate) task; returns ``(row dict, trace records)``."""
    spec = ExperimentSpec.from_dict(spec_dict)
    cell = spec.cells()[cell_index]
    cfg = spec.config(cell["gamma"])
    t0 = time.perf_counter()
    data, truth, seed = build_instance(spec, cell, cell_index, rep)
    init_label = spec.init.get("kind", "identity")
    row = _base_row(spec, cell_index, cell, rep, data, truth, seed, cfg, init_label)
    trace_rows = []
    try:
        sigma0, row.init = build_init(spec, data, truth, cell, seed, cfg)
        if spec.kind == "tme_vs_ste":
            _tme_vs_ste(row, data, truth, cfg)
        else:
            trace_rows = _ste_run(spec, row, data, truth, cfg, sigma0, cell_index, rep)
    except ESTIMATOR_FAILURES as exc:
        row.status = f"estimator_failure: {type(exc).__name__}"
    if not row.regime_ok and row.status == "ok":
        row.status = "regime_violation"
    row.runtime = time.perf_counter() - t0
    return asdict(row), trace_rows


def _ste_run(spec, row, data, truth, cfg, sigma0, cell_index, rep):
    try:
        sigma_in = projected_tme(data, truth.basis, cfg)
    except InlierTMEFailed:
        sigma_in = None
    res = ste_solve(data, cfg, sigma0=sigma0, reference=truth.basis, sigma_in_star=sigma_in)
    row.final_sin_theta1 = sin_largest_angle(truth.basis, res.subspace)
    row.iterations = res.iterations
    row.converged = res.converged
    row.recovered = bool(row.final_sin_theta1 <= K.RECOVERY_THRESHOLD)
    if spec.kind == "convergence":
        row.fitted_rate = fit_rate(res.trace.column("sin_theta1"))
        if row.regime_ok:
            row.c0_rate = constants(row.dssnr, row.gamma)[1] ** -0.5
            row.condition_margin = check_main_condition(sigma0, data, truth, cfg.gamma, cfg)[1]
        if sigma_in is not None:
            g = growth_factors(res.trace)
            if g.size:
                row.kappa1_growth_min = float(g.min())
                row.kappa1_growth_median = float(np.median(g))
            row.kappa2_hat_max = presaturation_max(res.trace, "kappa2_hat")
        return [dict(cell=cell_index, replicate=rep, **asdict(r)) for r in res.trace]
    return []


def _tme_vs_ste(row, data, truth, cfg):
    tme = tme_solve(data, cfg)
    row.tme_iterations = tme.iterations
    row.tme_sin_theta1 = sin_largest_angle(truth.basis, tme.subspace)
    vals = eigvals(tme.sigma_final)
    row.tme_gap = float(vals[truth.d] / vals[truth.d - 1])
    if not tme.converged:
        raise NotConverged("TME did not converge")
    res = ste_solve(data, cfg, sigma0=tme.sigma_final)
    row.final_sin_theta1 = sin_largest_angle(truth.basis, res.subspace)
    row.iterations = res.iterations
    row.converged = res.converged
    row.recovered = bool(row.final_sin_theta1 <= K.RECOVERY_THRESHOLD)


# ---------------------------------------------------------------------------
# runners


def run_rows(spec: ExperimentSpec, threads=1):
    """All tasks of ``spec`` in grid order; returns ``(rows, trace_records)``."""
    tasks = [(c, r) for c in range(len(spec.cells())) for r in range(spec.replicates)]
    payload = spec.to_dict()
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_task, [payload] * len(tasks), *zip(*tasks)))
    else:
        results = [run_task(payload, c, r) for c, r in tasks]
    rows = [r for r, _ in results]
    traces = [t for _, tr in results for t in tr]
    return rows, traces


def _expect(spec, kind):
    if spec.kind != kind:
        raise ConfigError(f"spec kind is {spec.kind!r}, expected {kind!r}")


def run_convergence(spec: ExperimentSpec, threads=1):
    _expect(spec, "convergence")
    return run_rows(spec, threads)


def run_tme_vs_ste(spec: ExperimentSpec, threads=1):
    _expect(spec, "tme_vs_ste")
    return run_rows(spec, threads)[0]


def _median(vals):
    vals = [v for v in vals if v is not None]
    return float(np.median(vals)) if vals else None


def run_noise_sweep(spec: ExperimentSpec, threads=1, c_e=None):
    """Rows plus a summary of how the final error scales with epsilon.

    The summary holds the median error per epsilon, the exponent ``p`` of a
    least-squares fit ``error ~ eps^p`` over the positive grid values, the
    largest ``error / sqrt(eps)`` and its value at the largest epsilon, and
    the noisy-theory constants evaluated on replicate 0 of each cell.
    """
    _expect(spec, "noise_sweep")
    rows, _ = run_rows(spec, threads)
    eps_grid = spec.grids["epsilon"]
    med = []
    for e in eps_grid:
        med.append(_median([r["final_sin_theta1"] for r in rows if r["epsilon"] == e or
                            (not e and not r["epsilon"])]))
    pos = [(e, m) for e, m in zip(eps_grid, med) if e > 0 and m is not None and m > 0]
    exponent = None
    if len(pos) >= 2:
        exponent = float(np.polyfit(np.log([e for e, _ in pos]), np.log([m for _, m in pos]), 1)[0])
    ratios = [m / math.sqrt(e) for e, m in pos]
    largest = max(pos)[0] if pos else None
    summary = {
        "epsilon": eps_grid,
        "median_sin_theta1": med,
        "fitted_exponent": exponent,
        "max_ratio_sqrt_eps": max(ratios) if ratios else None,
        "ratio_at_largest_eps": dict(pos)[largest] / math.sqrt(largest) if pos else None,
        "monotone_median": bool(all(a <= b for a, b in zip(med, med[1:]) if a is not None and b is not None)),
        "noisy_constants": _noisy_constants_per_cell(spec, c_e),
    }
    return rows, summary


def _noisy_constants_per_cell(spec, c_e):
    out = []
    for ci, cell in enumerate(spec.cells()):
        entry = {"cell": ci, "epsilon": cell["epsilon"]}
        if cell["epsilon"] and cell["epsilon"] > 0:
            cfg = spec.config(cell["gamma"])
            data, truth, seed = build_instance(spec, cell, ci, 0)
            try:
                nc = noisy_constants(data, truth, cfg.gamma, cell["epsilon"], c_e=c_e, cfg=cfg,
                                     rng=make_rng(seed, _TAG_CE))
                kin = _kappa_in(data, truth, cfg)
                entry.update(asdict(nc))
                entry["error_bound"] = 2.0 * math.sqrt(kin / nc.C_kappa1)
            except (RegimeViolation, DegenerateSupport, InlierTMEFailed) as exc:
                entry["error"] = type(exc).__name__
        out.append(entry)
    return out


def _kappa_in(data, truth, cfg):
    v = eigvals(projected_tme(data, truth.basis, cfg))
    return float(v[0] / v[-1])


def run_phase_diagram(spec: ExperimentSpec, threads=1):
    """Rows plus one summary record per cell with the recovered fraction and median error."""
    _expect(spec, "phase_diagram")
    rows, _ = run_rows(spec, threads)
    summary = []
    for ci, cell in enumerate(spec.cells()):
        mine = [r for r in rows if r["cell"] == ci]
        rec = [r["recovered"] for r in mine if r["recovered"] is not None]
        summary.append({
            "cell": ci,
            "dssnr": mine[0]["dssnr"],
            "gamma": mine[0]["gamma"],
            "alpha": mine[0]["alpha"],
            "regime_ok": mine[0]["regime_ok"],
            "replicates": len(mine),
            "recovered_fraction": float(np.mean(rec)) if rec else None,
            "median_sin_theta1": _median([r["final_sin_theta1"] for r in mine]),
        })
    return rows, summary


PHASE_SUMMARY_FIELDS = ["cell", "dssnr", "gamma", "alpha", "regime_ok", "replicates",
                        "recovered_fraction", "median_sin_theta1"]


def diagnose(spec: ExperimentSpec):
    """Diagnostics of the first cell's instance under the spec's initialization.

    Returns ``(report, conditions)`` where ``conditions`` holds the verdicts
    of both the noiseless and the noisy checker (the latter only when the
    instance has a positive noise level).
    """
    cell = spec.cells()[0]
    cfg = spec.config(cell["gamma"])
    data, truth, seed = build_instance(spec, cell, 0, 0)
    sigma0, _ = build_init(spec, data, truth, cell, seed, cfg)
    ok, margin, report = check_main_condition(sigma0, data, truth, cfg.gamma, cfg)
    conditions = {"noiseless": {"satisfied": ok, "margin": margin, "C": report.C}}
    eps = truth.noise_epsilon
    if eps and 0 < eps <= 0.5:
        try:
            nok, nmargin, nrep, nc = check_noisy_condition(sigma0, data, truth, cfg.gamma, eps, cfg=cfg,
                                                           rng=make_rng(seed, _TAG_CE))
            conditions["noisy"] = {"satisfied": nok, "margin": nmargin, **asdict(nc)}
        except DegenerateSupport as exc:
            conditions["noisy"] = {"error": str(exc)}
    else:
        conditions["noisy"] = None
    return report, conditions
