"""Command-line pipeline: ``longirad <command> --config FILE --out DIR``.

Each command reads its own table from a TOML config (``[simulate]``,
``[match]``, ...) plus an optional top-level ``seed``. Unknown tables or
keys are rejected. Every run writes ``manifest.json`` next to its outputs.

Exit codes: 0 success, 1 invalid input or config, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import ConfigError, NumericalError, ValidationError

log = logging.getLogger("longirad")

REQUIRED = object()

# command -> key -> (type, default); REQUIRED marks keys without a default
SCHEMAS: dict[str, dict[str, tuple[type, object]]] = {
    "simulate": {
        "n_patients": (int, 20), "lesions_min": (int, 2), "lesions_max": (int, 4), "jitter_mm": (float, 0.0),
        "max_rotation_deg": (float, 3.0), "max_translation_mm": (float, 6.0), "censoring_rate": (float, 0.55),
        "size_log_hr": (float, 0.5), "size_delta_log_hr": (list, [0.2, 0.2, 0.2]), "volume_size": (int, 64),
        "spacing_mm": (float, 2.0), "min_spacing_mm": (float, 25.0), "label_swap_prob": (float, 0.5),
        "p_new": (float, 0.0), "p_disappear": (float, 0.0),
    },
    "register": {
        "cohort": (str, REQUIRED), "levels": (int, 3), "finest_level": (int, 0), "max_iter": (int, 200),
        "initializer": (str, "identity"),
    },
    "match": {
        "cohort": (str, REQUIRED), "transforms": (str, ""), "gate_mm": (float, 30.0), "levels": (int, 3),
        "finest_level": (int, 0), "max_iter": (int, 200),
    },
    "features": {
        "cohort": (str, REQUIRED), "tracks": (str, REQUIRED), "bin_width": (float, 25.0), "distance": (int, 1),
        "external": (str, ""),
    },
    "delta": {"cohort": (str, REQUIRED), "features": (str, REQUIRED), "max_timepoint": (str, "Week24")},
    "fit-lasso": {
        "designs": (str, ""), "cohort": (str, ""), "features": (str, ""),
        "timepoints": (list, ["Screening", "Week8", "Week16", "Week24"]), "n_lambda": (int, 100),
        "lambda_min_ratio": (float, 0.01), "folds": (int, 5), "bootstrap": (int, 1000),
        "test_fraction": (float, 0.0), "demographics_unpenalized": (bool, True),
    },
    "bess": {
        "designs": (str, ""), "cohort": (str, ""), "features": (str, ""), "block": (str, "x"), "size": (int, 4),
        "method": (str, "auto"), "sequential": (bool, True),
        "test_fraction": (float, 0.0),
    },
    "importance": {
        "designs": (str, ""), "cohort": (str, ""), "features": (str, ""), "min_size": (int, 2),
        "max_size": (int, 20), "blocks": (list, ["x", "Z", "W", "V"]),
        "test_fraction": (float, 0.0),
    },
    "jointmodel": {
        "cohort": (str, REQUIRED), "features": (str, REQUIRED), "model": (str, "model1"),
        "feature_list": (list, []), "iterations": (int, 20000), "burn_in": (int, 1000), "thin": (int, 10),
    },
    "report": {
        "cohort": (str, ""), "features": (str, ""), "box_features": (list, []), "log_scale": (bool, True),
        "lasso": (str, ""), "importance": (str, ""), "jointmodel": (str, ""),
    },
}
COMMANDS = tuple(SCHEMAS)


# ---------------------------------------------------------------------------
# config and manifest


def _check_type(cmd, key, value, typ):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        raise ConfigError(f"[{cmd}] {key}: expected {typ.__name__}, got {type(value).__name__}")
    return value


def load_config(path: str | Path | None, cmd: str, overrides=()) -> tuple[dict, int]:
    """Validated settings for ``cmd`` (defaults filled) and the top-level seed."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{p}: {e}") from None
    seed = raw.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    for key, value in raw.items():
        if key not in SCHEMAS or not isinstance(value, dict):
            raise ConfigError(f"unknown config key {key!r}")
    section = dict(raw.get(cmd, {}))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            section[k.strip()] = tomllib.loads(f"v = {v}")["v"]
        except tomllib.TOMLDecodeError:
            section[k.strip()] = v
    schema = SCHEMAS[cmd]
    for key in section:
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r} in [{cmd}]")
    out = {}
    for key, (typ, default) in schema.items():
        if key in section:
            out[key] = _check_type(cmd, key, section[key], typ)
        elif default is REQUIRED:
            raise ConfigError(f"[{cmd}] missing required key {key!r}")
        else:
            out[key] = list(default) if isinstance(default, list) else default
    return out, seed


def substream_seed(seed: int, name: str) -> int:
    """Deterministic child seed for a named stage."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def _hash_path(p: Path) -> str:
    # manifests carry wall-clock timings, so directory hashes leave them out
    h = hashlib.sha256()
    files = sorted(q for q in p.rglob("*") if q.is_file() and q.name != "manifest.json") if p.is_dir() else [p]
    for q in files:
        h.update(str(q.relative_to(p) if p.is_dir() else q.name).encode())
        h.update(q.read_bytes())
    return h.hexdigest()


class Run:
    def __init__(self, cmd: str, cfg: dict, seed: int, out: Path, threads: int, config_path):
        self.cmd, self.cfg, self.seed, self.out, self.threads = cmd, cfg, seed, out, threads
        self.config_path = config_path
        self.timings: dict[str, float] = {}
        self.seeds: dict[str, int] = {}
        self.notes: dict[str, object] = {}
        self.inputs: dict[str, str] = {}
        out.mkdir(parents=True, exist_ok=True)

    def stream(self, name: str) -> int:
        s = substream_seed(self.seed, f"{self.cmd}/{name}")
        self.seeds[name] = s
        return s

    def shared_stream(self, name: str) -> int:
        """A substream that every command derives identically (e.g. the train/test split)."""
        s = substream_seed(self.seed, name)
        self.seeds[name] = s
        return s

    def path(self, key: str, must_exist: bool = True) -> Path:
        p = Path(self.cfg[key])
        if must_exist and not p.exists():
            raise ValidationError(f"[{self.cmd}] {key}: path does not exist: {p}")
        if must_exist:
            self.inputs[str(p)] = _hash_path(p)
        return p

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        yield
        self.timings[name] = round(time.perf_counter() - t0, 3)

    @contextmanager
    def executor(self):
        if self.threads <= 1:
            yield None
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                yield ex

    def write_manifest(self) -> None:
        doc = {
            "command": self.cmd,
            "config": self.cfg,
            "config_file": None if self.config_path is None else str(self.config_path),
            "seed": self.seed,
            "seeds": self.seeds,
            "inputs_sha256": self.inputs,
            "version": __version__,
            "timings_s": self.timings,
        }
        if self.notes:
            doc["notes"] = self.notes
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(run: Run) -> None:
    from .cohortmodel import save_cohort
    from .simcohort import CohortConfig, generate_cohort

    c = run.cfg
    if len(c["size_delta_log_hr"]) != 3:
        raise ConfigError("[simulate] size_delta_log_hr needs three values")
    cfg = CohortConfig(
        n_patients=c["n_patients"], lesions_per_patient=(c["lesions_min"], c["lesions_max"]),
        jitter_mm=c["jitter_mm"], transform_magnitude=(c["max_rotation_deg"], c["max_translation_mm"]),
        signal_spec=(("size", c["size_log_hr"], tuple(float(v) for v in c["size_delta_log_hr"])),),
        censoring_rate=c["censoring_rate"], seed=run.stream("cohort"), volume_size=c["volume_size"],
        spacing_mm=c["spacing_mm"], min_spacing_mm=c["min_spacing_mm"], label_swap_prob=c["label_swap_prob"],
        p_new=c["p_new"], p_disappear=c["p_disappear"],
    )
    with run.stage("generate"):
        cohort, truth = generate_cohort(cfg)
    with run.stage("write"):
        save_cohort(cohort, run.out / "cohort")
        truth.write(run.out / "truth.json")


def _registration_config(c):
    from .registration import RegistrationConfig

    return RegistrationConfig(levels=c["levels"], finest_level=c["finest_level"], max_iter=c["max_iter"],
                              initializer=c.get("initializer", "identity"))


def _write_transforms(path: Path, transforms) -> None:
    _write_json(path, [{"moving": s, "fixed": r, "transform": t.to_dict()} for (s, r), t in sorted(transforms.items())])


def _read_transforms(path: Path):
    from .registration import RigidTransform

    try:
        rows = json.loads(path.read_text())
        return {(r["moving"], r["fixed"]): RigidTransform.from_dict(r["transform"]) for r in rows}
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise ValidationError(f"{path}: malformed transforms file ({e})") from None


def cmd_register(run: Run) -> None:
    from .cohortmodel import load_cohort
    from .correspondence import estimate_transforms

    cohort = load_cohort(run.path("cohort"))
    with run.stage("register"), run.executor() as ex:
        tf = estimate_transforms(cohort, _registration_config(run.cfg), executor=ex)
    _write_transforms(run.out / "transforms.json", tf)


def cmd_match(run: Run) -> None:
    from .cohortmodel import load_cohort
    from .correspondence import build_tracks, estimate_transforms, write_tracks

    cohort = load_cohort(run.path("cohort"))
    if run.cfg["transforms"]:
        tf = _read_transforms(run.path("transforms"))
    else:
        with run.stage("register"), run.executor() as ex:
            tf = estimate_transforms(cohort, _registration_config(run.cfg), executor=ex)
        _write_transforms(run.out / "transforms.json", tf)
    with run.stage("match"):
        tracks = build_tracks(cohort, tf, run.cfg["gate_mm"])
    write_tracks(tracks, run.out / "tracks.csv")


def cmd_features(run: Run) -> None:
    from .cohortmodel import load_cohort
    from .correspondence import read_tracks
    from .radiomics import FeatureConfig, ingest_external_features, track_features, write_features

    cohort = load_cohort(run.path("cohort"))
    tracks = read_tracks(run.path("tracks"), cohort)
    external = ingest_external_features(run.path("external")) if run.cfg["external"] else None
    with run.stage("features"):
        feats = track_features(cohort, tracks, FeatureConfig(run.cfg["bin_width"], run.cfg["distance"]), external)
    write_features(feats, run.out / "features.csv")


def _designs(run: Run, max_tp="Week24"):
    from .cohortmodel import assemble_design, load_cohort, read_designs
    from .radiomics import read_features

    if run.cfg.get("designs"):
        return read_designs(run.path("designs"))
    if not (run.cfg.get("cohort") and run.cfg.get("features")):
        raise ConfigError(f"[{run.cmd}] needs either designs or both cohort and features")
    cohort = load_cohort(run.path("cohort"))
    return assemble_design(cohort, read_features(run.path("features")), max_tp)


def cmd_delta(run: Run) -> None:
    from .cohortmodel import Timepoint, write_designs

    tp = Timepoint.parse(run.cfg["max_timepoint"])
    with run.stage("assemble"):
        designs = _designs(run, tp)
    write_designs(designs, run.out / "designs.csv")


def _split(d, frac: float, seed: int):
    if frac <= 0:
        return d, d
    if not 0 < frac < 1:
        raise ConfigError("test_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    test = np.zeros(len(d.time), bool)
    for e in (0, 1):  # stratify on the event indicator
        idx = np.flatnonzero(d.event == e)
        test[rng.permutation(idx)[: int(round(frac * idx.size))]] = True
    return d.take_rows(np.flatnonzero(~test)), d.take_rows(np.flatnonzero(test))


def _training_rows(run: Run, d):
    """Rows fit-lasso trains on under the same seed and test_fraction."""
    train, _ = _split(d, run.cfg["test_fraction"], run.shared_stream("split"))
    run.notes["selection_rows"] = {"used": "training split", "n_train": len(train.time), "n_total": len(d.time)}
    return train


def cmd_fit_lasso(run: Run) -> None:
    from .cohortmodel import Timepoint, design_matrix
    from .report import _csv
    from .survival import LassoConfig, bootstrap_cindex_ci, compare_cindex_z, cv_cindex_path

    c = run.cfg
    tps = [Timepoint.parse(t) for t in c["timepoints"]]
    if not tps or tps != sorted(set(tps)):
        raise ConfigError("[fit-lasso] timepoints must be distinct and increasing")
    designs = _designs(run)
    full = design_matrix(designs, tps[-1])
    train_all, test_all = _split(full, c["test_fraction"], run.shared_stream("split"))
    cv_seed, boot_seed = run.stream("folds"), run.stream("bootstrap")
    rows, models, z_rows = [], [], []
    for tp in tps:
        blocks = ["x", "Z", "W", "V"][: int(tp) + 1]
        cols = [i for i, col in enumerate(full.columns) if col.split(":", 1)[0] in blocks + ["U", "T"]]
        train, test = train_all.take_columns(cols), test_all.take_columns(cols)
        free = tuple(col for col in train.columns if col[0] in "UT") if c["demographics_unpenalized"] else ()
        cfg = LassoConfig(n_lambda=c["n_lambda"], lambda_min_ratio=c["lambda_min_ratio"], penalty_free_set=free)
        with run.stage(f"cv_{tp.label}"), run.executor() as ex:
            path = cv_cindex_path(train, cfg, folds=c["folds"], seed=cv_seed, executor=ex)
        model = path.selected()
        opt = path.opt_index
        (run.out / f"cvpath_{tp.label}.csv").write_bytes(_csv(
            ("lambda", "mean_c", "se_c", "nnz", "optimal"),
            [(float(lam), float(path.mean_c[k]), float(path.se_c[k]), int(path.nnz[k]), int(k == opt))
             for k, lam in enumerate(path.lambdas)],
        ).encode())
        (run.out / f"model_{tp.label}.json").write_text(model.to_json())
        with run.stage(f"bootstrap_{tp.label}"):
            est = bootstrap_cindex_ci(model, test, B=c["bootstrap"], seed=boot_seed)
        rows.append((tp.label, est.point, est.mean_boot, est.se_boot, est.ci95[0], est.ci95[1], est.resamples,
                     int((model.theta != 0).sum())))
        models.append((tp, model))
    for tp, model in models[1:]:
        z = compare_cindex_z(model, models[0][1], test_all, B=c["bootstrap"], seed=boot_seed)
        z_rows.append((tp.label, models[0][0].label, z.mean_diff, z.se_diff, z.z, z.p_two_sided))
    (run.out / "cindex.csv").write_bytes(_csv(
        ("model", "point", "mean_boot", "se_boot", "ci_low", "ci_high", "resamples", "nonzero"), rows).encode())
    (run.out / "ztests.csv").write_bytes(_csv(("model", "baseline", "mean_diff", "se_diff", "z", "p"), z_rows).encode())


def cmd_bess(run: Run) -> None:
    from .cohortmodel import design_matrix
    from .subset import bess_select, select_top4_sequential

    d = _training_rows(run, design_matrix(_designs(run)))
    with run.stage("bess"):
        res = bess_select(d, run.cfg["block"], run.cfg["size"], method=run.cfg["method"])
    doc = {"block": run.cfg["block"], "size": res.s, "selected": list(res.names), "method": res.method,
           "deviance": format(res.deviance, ".17g"), "fit": res.fit.to_dict()}
    if run.cfg["sequential"]:
        with run.stage("sequential"):
            sel, widths = select_top4_sequential(d)
        doc["sequential"] = {b: list(v) for b, v in sel.items()}
        doc["sequential_widths"] = widths
    _write_json(run.out / "bess.json", doc)


def cmd_importance(run: Run) -> None:
    from .cohortmodel import design_matrix
    from .subset import vote_importance

    c = run.cfg
    if not 1 <= c["min_size"] <= c["max_size"]:
        raise ConfigError("[importance] need 1 <= min_size <= max_size")
    d = _training_rows(run, design_matrix(_designs(run)))
    with run.stage("vote"), run.executor() as ex:
        table = vote_importance(d, tuple(range(c["min_size"], c["max_size"] + 1)), tuple(c["blocks"]), executor=ex)
    table.write(run.out / "importance.csv")


def cmd_jointmodel(run: Run) -> None:
    from .cohortmodel import load_cohort
    from .jointmodel import (
        MODEL_PRESETS, FeatureSpec, JointConfig, fit_joint_mcmc, fit_metrics, joint_data_from_features,
        summarize_fit, summary_csv, trace_diagnostics, write_fit, write_traces,
    )
    from .radiomics import read_features
    from .report import _csv

    c = run.cfg
    if c["feature_list"]:
        specs = []
        for item in c["feature_list"]:
            if not (isinstance(item, list) and len(item) == 2 and all(isinstance(v, str) for v in item)):
                raise ConfigError("[jointmodel] feature_list entries are [name, transform] pairs")
            specs.append(FeatureSpec(*item))
    elif c["model"] in MODEL_PRESETS:
        specs = [FeatureSpec(*f) for f in MODEL_PRESETS[c["model"]]]
    else:
        raise ConfigError(f"[jointmodel] unknown model {c['model']!r}; choose from {sorted(MODEL_PRESETS)}")
    cohort = load_cohort(run.path("cohort"))
    data = joint_data_from_features(cohort, read_features(run.path("features")), [s.name for s in specs])
    cfg = JointConfig(iterations=c["iterations"], burn_in=c["burn_in"], thin=c["thin"], seed=run.stream("mcmc"))
    with run.stage("mcmc"):
        fit = fit_joint_mcmc(data, specs, cfg)
    write_fit(fit, run.out / "fit")
    write_traces(fit, run.out / "traces")
    (run.out / "summary.csv").write_bytes(summary_csv(summarize_fit(fit)).encode())
    metrics = {comp: fit_metrics(fit, comp).to_dict() for comp in ("joint", "survival")}
    _write_json(run.out / "metrics.json", metrics)
    diag = trace_diagnostics(fit)
    (run.out / "diagnostics.csv").write_bytes(_csv(
        ("parameter", "split_rhat", "ess", "constant"), [(t.name, t.rhat, t.ess, int(t.degenerate)) for t in diag]
    ).encode())


class _CVPathView:
    """The parts of a lasso path the renderer needs, read back from CSV."""

    def __init__(self, path: Path):
        import csv

        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValidationError(f"{path}: empty path")
        self.lambdas = np.array([float(r["lambda"]) for r in rows])
        self.mean_c = np.array([float(r["mean_c"]) for r in rows])
        self.se_c = np.array([float(r["se_c"]) for r in rows])
        self.nnz = np.array([int(r["nnz"]) for r in rows])
        opt = [float(r["lambda"]) for r in rows if r["optimal"] == "1"]
        self.lambda_opt = opt[0] if opt else None


def cmd_report(run: Run) -> None:
    import csv

    from .cohortmodel import Timepoint, aggregate_patient_features, load_cohort
    from .jointmodel import read_fit
    from .radiomics import read_features
    from .report import FigureSpec, render_box_by_arm, render_cindex_bars, render_cvpath, render_importance, render_traces
    from .subset import ImportanceTable
    from .survival import CIndexEstimate

    c = run.cfg
    figs = run.out / "figures"
    made = False
    if c["box_features"]:
        if not (c["cohort"] and c["features"]):
            raise ConfigError("[report] box_features needs cohort and features")
        cohort = load_cohort(run.path("cohort"))
        lf = read_features(run.path("features"))
        per_patient = {pid: aggregate_patient_features(lf, pid) for pid in cohort.patients}
        for feat in c["box_features"]:
            cells = {}
            for tp in Timepoint:
                for arm in (1, 0):
                    vals = []
                    for pid, (names, agg) in per_patient.items():
                        if tp in agg and feat in names and cohort.demographics[pid].ARM == arm:
                            vals.append(agg[tp][names.index(feat)])
                    cells[(tp.label, arm)] = vals
            spec = FigureSpec("BoxByArm", title=feat, log_scale=c["log_scale"], x_label="timepoint")
            render_box_by_arm(cells, spec).write(figs / f"box_{feat}")
        made = True
    if c["lasso"]:
        d = run.path("lasso")
        for p in sorted(d.glob("cvpath_*.csv")):
            render_cvpath(_CVPathView(p)).write(figs / p.stem)
        ci = d / "cindex.csv"
        if ci.exists():
            with ci.open(newline="") as fh:
                rows = list(csv.DictReader(fh))
            ests = [CIndexEstimate(float(r["point"]), float(r["mean_boot"]), float(r["se_boot"]),
                                   (float(r["ci_low"]), float(r["ci_high"])), int(r["resamples"])) for r in rows]
            render_cindex_bars(ests, [r["model"] for r in rows]).write(figs / "cindex")
        made = True
    if c["importance"]:
        render_importance(ImportanceTable.read(run.path("importance"))).write(figs / "importance")
        made = True
    if c["jointmodel"]:
        render_traces(read_fit(run.path("jointmodel")), figs / "traces")
        made = True
    if not made:
        raise ConfigError("[report] nothing to render: set box_features, lasso, importance or jointmodel")


HANDLERS = {
    "simulate": cmd_simulate, "register": cmd_register, "match": cmd_match, "features": cmd_features,
    "delta": cmd_delta, "fit-lasso": cmd_fit_lasso, "bess": cmd_bess, "importance": cmd_importance,
    "jointmodel": cmd_jointmodel, "report": cmd_report,
}


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def bundled_config(name: str) -> Path:
    return Path(str(resources.files("longirad") / "configs" / name))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="longirad", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"longirad {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name, help=f"run the {name} stage")
        s.add_argument("--version", action="version", version=f"longirad {__version__}")
        s.add_argument("--config", "-c", help="TOML config; defaults apply to keys left out")
        s.add_argument("--out", "-o", required=True, help="output directory")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one key of this command's table (repeatable)")
        s.add_argument("--threads", type=int, default=1, help="maximum worker threads (results do not depend on it)")
        s.add_argument("--verbose", "-v", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg, seed = load_config(args.config, args.command, args.set)
        run = Run(args.command, cfg, seed, Path(args.out), args.threads, args.config)
        with run.stage("total"):
            HANDLERS[args.command](run)
        run.write_manifest()
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
