"""Reading and writing datasets, draws, summaries and run configuration.

Dataset CSV columns, in order::

    lens_id,z_d,z_s,pair_label,delta_hat_days,sigma_delta_days,phi_hat,sigma_phi,phi_unit

``phi_unit`` is ``arcsec2`` or ``rad2`` per row; values are converted to
square radians on load. Files with two-sided uncertainties replace each
sigma column by a ``_plus``/``_minus`` pair and need ``conservative_se``.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .cosmology import ARCSEC2_TO_RAD2, DegenerateGeometryError, RedshiftPair
from .diagnostics import PosteriorSummary
from .likelihood import ConfigurationError, ErrorModel, LensSystem, PairMeasurement
from .mcmc import Chain, ChainSet, SamplerConfig

__all__ = [
    "DATASET_COLUMNS",
    "TWO_SIDED_COLUMNS",
    "FIDUCIAL_Z_D",
    "OUTPUT_DIR_ENV",
    "DatasetFormatError",
    "LoadDiagnostics",
    "RunConfig",
    "conservative_se",
    "load_dataset",
    "write_dataset",
    "write_draws",
    "read_draws",
    "write_summary",
    "write_study_reports",
    "write_manifest",
    "write_outputs",
    "read_key_values",
    "load_run_config",
    "default_output_dir",
]

DATASET_COLUMNS = ("lens_id", "z_d", "z_s", "pair_label", "delta_hat_days",
                   "sigma_delta_days", "phi_hat", "sigma_phi", "phi_unit")
TWO_SIDED_COLUMNS = ("lens_id", "z_d", "z_s", "pair_label", "delta_hat_days",
                     "sigma_delta_plus", "sigma_delta_minus", "phi_hat",
                     "sigma_phi_plus", "sigma_phi_minus", "phi_unit")
PHI_UNITS = {"rad2": 1.0, "arcsec2": ARCSEC2_TO_RAD2}
FIDUCIAL_Z_D = 0.5
OUTPUT_DIR_ENV = "H0META_OUTPUT_DIR"


def fmt(x) -> str:
    """17 significant digits, enough to round-trip any double."""
    return format(float(x), ".17g")


class DatasetFormatError(ValueError):
    def __init__(self, message, line=None, path=None):
        where = f"{path}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.path = path


@dataclass
class LoadDiagnostics:
    sign_mismatches: list = field(default_factory=list)
    fiducial_redshifts: list = field(default_factory=list)

    def messages(self):
        out = [f"{lens}:{pair}: time delay and Fermat difference have opposite signs"
               for lens, pair in self.sign_mismatches]
        out += [f"{lens}: z_d equals the fiducial value {FIDUCIAL_Z_D}; it may not be measured"
                for lens in self.fiducial_redshifts]
        return out

    def __len__(self):
        return len(self.sign_mismatches) + len(self.fiducial_redshifts)


def conservative_se(plus, minus):
    """Larger distance from the estimate to either reported percentile."""
    return max(abs(float(plus)), abs(float(minus)))


def _number(text, name, line, path):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DatasetFormatError(f"column {name}: not a number: {text!r}", line, path) from None
    if not math.isfinite(value):
        raise DatasetFormatError(f"column {name}: not finite: {text!r}", line, path)
    return value


def load_dataset(path, conservative_se_rule=False):
    """Read and validate a dataset file; returns ``(lenses, diagnostics)``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise DatasetFormatError("missing header row", 1, path) from None
        if header == DATASET_COLUMNS:
            two_sided = False
        elif header == TWO_SIDED_COLUMNS:
            if not conservative_se_rule:
                raise DatasetFormatError(
                    "two-sided uncertainties need the conservative standard-error rule "
                    "(--conservative-se)", 1, path)
            two_sided = True
        else:
            raise DatasetFormatError(
                f"header must be {','.join(DATASET_COLUMNS)}", 1, path)

        order, redshifts, pairs = [], {}, {}
        diagnostics = LoadDiagnostics()
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetFormatError(
                    f"expected {len(header)} columns, found {len(row)}", line, path)
            rec = dict(zip(header, (c.strip() for c in row)))
            lens_id, label = rec["lens_id"], rec["pair_label"]
            if not lens_id or not label:
                raise DatasetFormatError("lens_id and pair_label must be non-empty", line, path)
            z = (_number(rec["z_d"], "z_d", line, path), _number(rec["z_s"], "z_s", line, path))
            unit = rec["phi_unit"]
            if unit not in PHI_UNITS:
                raise DatasetFormatError(f"phi_unit must be one of {sorted(PHI_UNITS)}", line, path)
            num = lambda name: _number(rec[name], name, line, path)  # noqa: E731
            if two_sided:
                sd_delta = conservative_se(num("sigma_delta_plus"), num("sigma_delta_minus"))
                sd_phi = conservative_se(num("sigma_phi_plus"), num("sigma_phi_minus"))
            else:
                sd_delta, sd_phi = num("sigma_delta_days"), num("sigma_phi")
            factor = PHI_UNITS[unit]
            try:
                pair = PairMeasurement(num("delta_hat_days"), sd_delta, num("phi_hat") * factor,
                                       sd_phi * factor, label)
            except ValueError as exc:
                raise DatasetFormatError(str(exc), line, path) from None
            if lens_id not in redshifts:
                try:
                    redshifts[lens_id] = RedshiftPair(*z)
                except DegenerateGeometryError as exc:
                    raise DatasetFormatError(str(exc), line, path) from None
                order.append(lens_id)
                pairs[lens_id] = []
            elif (redshifts[lens_id].z_d, redshifts[lens_id].z_s) != z:
                raise DatasetFormatError(
                    f"lens {lens_id!r} has inconsistent redshifts", line, path)
            if any(p.pair_label == label for p in pairs[lens_id]):
                raise DatasetFormatError(
                    f"duplicate pair {label!r} in lens {lens_id!r}", line, path)
            pairs[lens_id].append(pair)
            if not pair.sign_consistent:
                diagnostics.sign_mismatches.append((lens_id, label))
    lenses = []
    for lens_id in order:
        if redshifts[lens_id].z_d == FIDUCIAL_Z_D:
            diagnostics.fiducial_redshifts.append(lens_id)
        lenses.append(LensSystem(lens_id, redshifts[lens_id], tuple(pairs[lens_id])))
    return lenses, diagnostics


def write_dataset(dataset, path, phi_unit="rad2"):
    factor = PHI_UNITS[phi_unit]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for lens in dataset:
            for p in lens.pairs:
                w.writerow([lens.lens_id, fmt(lens.z.z_d), fmt(lens.z.z_s), p.pair_label,
                            fmt(p.delta_hat), fmt(p.sigma_delta), fmt(p.phi_hat / factor),
                            fmt(p.sigma_phi / factor), phi_unit])


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_draws(chains: ChainSet, directory):
    """One ``chain_<c>.csv`` per chain with iteration, h0, omega_m and one column per lens."""
    directory = Path(directory)
    header = ["iteration", "h0", "omega_m"] + [f"kappa_{lid}" for lid in chains.lens_ids]
    paths = []
    for c, chain in enumerate(chains.chains, start=1):
        path = directory / f"chain_{c}.csv"
        rows = ([int(it), float(h), float(o), *map(float, k)]
                for it, h, o, k in zip(chain.iterations, chain.h0, chain.omega_m, chain.kappa))
        _write_rows(path, header, rows)
        paths.append(path)
    return paths


def read_draws(directory, error_model=None) -> ChainSet:
    """Rebuild a :class:`ChainSet` from ``chain_*.csv`` files (acceptance data is not stored)."""
    directory = Path(directory)
    files = sorted(directory.glob("chain_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise FileNotFoundError(f"no chain_*.csv files in {directory}")
    if error_model is None:
        manifest = directory / "manifest.json"
        error_model = "student_t4"
        if manifest.exists():
            error_model = json.loads(manifest.read_text()).get("config", {}).get(
                "error_model", error_model)
    chains, lens_ids = [], None
    for path in files:
        with path.open(newline="") as fh:
            header = next(csv.reader(fh))
        if header[:3] != ["iteration", "h0", "omega_m"] or not all(
                h.startswith("kappa_") for h in header[3:]):
            raise DatasetFormatError("unexpected draw file header", 1, path)
        ids = tuple(h[6:] for h in header[3:])
        if lens_ids is None:
            lens_ids = ids
        elif ids != lens_ids:
            raise DatasetFormatError("draw files disagree on lens ids", 1, path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        kappa = data[:, 3:] if data.shape[1] > 3 else np.zeros((data.shape[0], 0))
        chains.append(Chain(iterations=data[:, 0].astype(int), h0=data[:, 1], omega_m=data[:, 2],
                            kappa=kappa, log_post=np.full(data.shape[0], np.nan),
                            h0_accepted=np.zeros(data.shape[0], dtype=bool),
                            acceptance_rates={}, tuning_history=[], proposal_sd_h0=float("nan")))
    return ChainSet(chains, lens_ids, ErrorModel.coerce(error_model))


SUMMARY_COLUMNS = ("parameter", "mean", "sd", "q02.5", "q16", "q84", "q97.5", "rhat", "ess")


def write_summary(summary: PosteriorSummary, path):
    _write_rows(path, SUMMARY_COLUMNS,
                ([r[c] for c in SUMMARY_COLUMNS] for r in summary.rows()))


REPORT_COLUMNS = ("level", "n_outliers", "error_model", "h0_update", "h0_true", "h0_mean",
                  "h0_sd", "bias_pct", "abs_bias_pct", "cv_pct", "rmse", "rhat_h0", "ess_h0",
                  "acceptance_h0")


def write_study_reports(cells, path):
    rows = []
    for c in cells:
        r = c.report
        rows.append([float(c.level), c.n_outliers, ErrorModel.coerce(c.error_model).value,
                     c.h0_update_kind, r.h0_true, r.h0_mean, r.h0_sd, r.bias_pct,
                     r.abs_bias_pct, r.cv_pct, r.rmse, float(c.rhat_h0), float(c.ess_h0),
                     float(c.acceptance_h0)])
    _write_rows(path, REPORT_COLUMNS, rows)


def write_manifest(directory, config: dict, extra=None):
    manifest = {"version": __version__, "seed": config.get("seed"), "config": config}
    if extra:
        manifest.update(extra)
    path = Path(directory) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def write_outputs(chains: ChainSet, summary: PosteriorSummary, reports, directory, config=None):
    """Write draws, summary, optional study reports and a manifest into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = write_draws(chains, directory)
    path = directory / "summary.csv"
    write_summary(summary, path)
    written.append(path)
    if reports:
        path = directory / "study_report.csv"
        write_study_reports(reports, path)
        written.append(path)
    if config is None:
        config = asdict(chains.config) if chains.config else {}
        config["error_model"] = chains.error_model.value
    written.append(write_manifest(directory, config))
    return written


def read_key_values(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DatasetFormatError("expected key=value", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _parse_bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ridge_flag(text):
    if text is None or str(text).lower() == "auto":
        return None
    try:
        return _parse_bool(text)
    except ValueError:
        raise ConfigurationError(f"h0_ridge_move must be auto, true or false, got {text!r}") from None


@dataclass
class RunConfig:
    error_model: str = "student_t4"
    n_chains: int = 5
    n_iterations: int = 10_000
    burn_in_fraction: float = 0.5
    target_acceptance_rw: float = 0.40
    target_acceptance_ram: float = 0.10
    h0_update_kind: str = "random_walk"
    initial_proposal_sd: float = 10.0
    adapt_window: int = 100
    h0_ridge_move: str = "auto"
    seed: int | None = None
    n_jobs: int = 1
    output_dir: str | None = None
    conservative_se: bool = False
    ppc_draws: int = 1000

    @classmethod
    def from_mapping(cls, values):
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")
        kwargs = {}
        for key, text in values.items():
            default = getattr(cls, key)
            try:
                if key in ("seed", "output_dir") and (text is None or str(text).lower() == "none"):
                    kwargs[key] = None
                elif key == "seed":
                    kwargs[key] = int(text)
                elif isinstance(default, bool):
                    kwargs[key] = _parse_bool(text)
                elif isinstance(default, int):
                    kwargs[key] = int(text)
                elif isinstance(default, float):
                    kwargs[key] = float(text)
                else:
                    kwargs[key] = str(text)
            except ValueError:
                raise ConfigurationError(f"bad value for {key}: {text!r}") from None
        cfg = cls(**kwargs)
        ErrorModel.coerce(cfg.error_model)
        cfg.sampler_config()
        return cfg

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(n_chains=self.n_chains, n_iterations=self.n_iterations,
                             burn_in_fraction=self.burn_in_fraction,
                             target_acceptance_rw=self.target_acceptance_rw,
                             target_acceptance_ram=self.target_acceptance_ram,
                             h0_update_kind=self.h0_update_kind,
                             initial_proposal_sd=self.initial_proposal_sd,
                             adapt_window=self.adapt_window,
                             h0_ridge_move=_ridge_flag(self.h0_ridge_move),
                             seed=self.seed, n_jobs=self.n_jobs)


def load_run_config(path=None, **overrides) -> RunConfig:
    values = read_key_values(path) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_mapping(values)


def default_output_dir(fallback="h0meta_output"):
    return os.environ.get(OUTPUT_DIR_ENV) or fallback
