"""mskqc command line: evaluate, qc-calibrate, qc-screen, biomarkers, phantom, report."""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tables as T
from .biomarkers import COMPOSITE, FAT, LEAN, classification_volume, mae
from .core import CaseMeta, FloatVolume, IntensityVolume, LabelVolume, StructureRegistry, default_registry
from .errors import CaseError, DegenerateInput, DegenerateLabels, FormatError, MskqcError, SpecError, UnsupportedN
from .pipeline import (
    biomarker_units,
    calibrate,
    calibration_pairs,
    evaluate_case,
    screen_units,
    unit_uncertainties,
)
from .qc import CASE_AVERAGE, K_FAILED, K_INACCURATE, PER_STRUCTURE, QcCalibration, roc_auroc
from .stats import ccc, compare_paired, significance_stars
from .uncertainty import UncertaintyMap, aggregate_mc_samples, read_stack, write_stack
from .volio import read_volume, write_volume

EXIT_OK, EXIT_PARTIAL, EXIT_FAILED = 0, 1, 2
K_LEVELS = (("k2", K_INACCURATE), ("k3", K_FAILED))
SLICE_COLORS = {0: (0, 0, 0), FAT: (255, 215, 0), COMPOSITE: (0, 170, 90), LEAN: (200, 30, 30)}


def _warn(msg: str) -> None:
    print(f"mskqc: {msg}", file=sys.stderr)


def _exit_code(n_cases: int, n_errors: int) -> int:
    if n_errors == 0:
        return EXIT_OK
    return EXIT_FAILED if n_errors == n_cases else EXIT_PARTIAL


def _pool_map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- manifests ---------------------------------------------------------------


@dataclass
class CaseEntry:
    meta: CaseMeta
    intensity: Path
    gt: Path | None
    pred: Path | None
    stack: Path | None
    uncertainty: Path | None

    @property
    def case_id(self) -> str:
        return self.meta.case_id


def parse_side_status(text: str) -> dict[str, str]:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        side, _, status = part.partition(":")
        out[side.strip()] = status.strip()
    return out


def read_manifest(path) -> list[CaseEntry]:
    path = Path(path)
    base = path.parent
    rows = T.read_csv(path, T.MANIFEST_COLUMNS, required=T.MANIFEST_REQUIRED)
    seen = set()
    out = []

    def p(row, key):
        v = row.get(key, "")
        return (base / v) if v else None

    for lineno, row in enumerate(rows, start=2):
        cid = row["case_id"]
        if not cid:
            raise FormatError(f"{path}: line {lineno} has an empty case_id", column="case_id")
        if cid in seen:
            raise FormatError(f"{path}: duplicate case_id {cid!r}", column="case_id")
        seen.add(cid)
        if not row.get("pred_labels_path") and not row.get("stack_dir"):
            raise FormatError(f"{path}: case {cid} names neither pred_labels_path nor stack_dir", column="stack_dir")
        try:
            height = float(row["height_m"]) if row.get("height_m") else None
            meta = CaseMeta(cid, height, parse_side_status(row.get("side_status", "")))
        except ValueError as exc:
            raise FormatError(f"{path}: case {cid}: {exc}", column="height_m") from None
        out.append(
            CaseEntry(
                meta,
                base / row["intensity_path"],
                p(row, "gt_labels_path"),
                p(row, "pred_labels_path"),
                p(row, "stack_dir"),
                p(row, "uncertainty_path"),
            )
        )
    return out


def _load(path: Path, kind, what: str):
    vol = read_volume(path)
    if not isinstance(vol, kind):
        raise CaseError(f"{path}: {what} must be a {kind.__name__}, got {type(vol).__name__}")
    return vol


def load_prediction(case: CaseEntry, target: str = "winning_class"):
    """(pred LabelVolume, UncertaintyMap or None); a stack takes precedence over stored labels."""
    if case.stack is not None:
        return aggregate_mc_samples(read_stack(case.stack), target)
    pred = _load(case.pred, LabelVolume, "pred_labels_path")
    umap = None
    if case.uncertainty is not None:
        umap = UncertaintyMap.from_volume(_load(case.uncertainty, FloatVolume, "uncertainty_path"))
    return pred, umap


def _registry(args) -> StructureRegistry:
    return StructureRegistry.load(args.registry) if args.registry else default_registry()


# -- evaluate ----------------------------------------------------------------


def evaluate_entries(cases, registry, connectivity=26, threads=1):
    """``(rows, n_errors)`` where rows are results.csv tuples sorted by case, structure, side."""

    def one(case: CaseEntry):
        try:
            if case.gt is None:
                raise CaseError(f"case {case.case_id}: no gt_labels_path")
            img = _load(case.intensity, IntensityVolume, "intensity_path")
            gt = _load(case.gt, LabelVolume, "gt_labels_path")
            pred, umap = load_prediction(case)
            res = evaluate_case(case.case_id, img, gt, pred, umap, registry, connectivity)
            return [T.result_row(r) for r in res], None
        except (MskqcError, OSError, ValueError) as exc:
            return [T.error_row(case.case_id, exc)], f"{case.case_id}: {exc}"

    rows, n_err = [], 0
    for case_rows, err in _pool_map(one, cases, threads):
        rows.extend(case_rows)
        if err:
            n_err += 1
            _warn(err)
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return rows, n_err


def summary_rows(results: list[tuple]):
    metrics = ("dc", "asd_mm", "ave_pct", "aie_hu", "uncertainty")
    by_struct: dict[str, list[tuple]] = {}
    for r in results:
        if r[1]:
            by_struct.setdefault(r[1], []).append(r)
    out = []
    for name in sorted(by_struct):
        for j, metric in enumerate(metrics):
            vals = np.array([r[3 + j] for r in by_struct[name] if not math.isnan(r[3 + j])], dtype=np.float64)
            n = int(vals.size)
            mean = float(math.fsum(vals) / n) if n else None
            med = float(np.median(vals)) if n else None
            sd = float(vals.std(ddof=1)) if n > 1 else None
            out.append((name, metric, n, mean, med, sd))
    return out


def cmd_evaluate(args) -> int:
    cases = read_manifest(args.manifest)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, n_err = evaluate_entries(cases, _registry(args), args.connectivity, args.threads)
    T.write_csv(out / "results.csv", T.RESULT_COLUMNS, rows)
    T.write_csv(out / "summary.csv", T.SUMMARY_COLUMNS, summary_rows(rows))
    return _exit_code(len(cases), n_err)


# -- qc-calibrate ------------------------------------------------------------


def roc_tables(units, calib: QcCalibration):
    """``(auroc rows, {filename: roc rows})`` for every calibrated unit and k level."""
    pairs = calibration_pairs(units)
    auroc_rows, curves = [], {}
    for unit in sorted(calib):
        if unit not in pairs:
            continue
        dc, u = pairs[unit]
        cal = calib[unit]
        for tag, _ in K_LEVELS:
            thr = cal.dc_thr_inacc if tag == "k2" else cal.dc_thr_fail
            try:
                roc = roc_auroc(u, dc < thr)
            except DegenerateLabels:
                n_pos = int(np.sum(dc < thr))
                auroc_rows.append((unit, tag, thr, n_pos, int(dc.size) - n_pos, None))
                continue
            auroc_rows.append((unit, tag, thr, roc.n_pos, roc.n_neg, roc.auroc))
            curves[f"roc_{unit}_{tag}.csv"] = [(t, f, tp) for t, (f, tp) in zip(roc.thresholds, roc.points)]
    return auroc_rows, curves


def cmd_qc_calibrate(args) -> int:
    units, errors = T.read_results(args.results)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        calib, skipped = calibrate(units, args.cutoff, args.min_cases)
    for w in caught:
        _warn(str(w.message))
    for unit in skipped:
        _warn(f"{unit}: fewer than {args.min_cases} cases, omitted from calibration")
    calib.dump(out / "calibration.json")
    auroc_rows, curves = roc_tables(units, calib)
    T.write_csv(out / "auroc.csv", T.AUROC_COLUMNS, auroc_rows)
    for name, rows in curves.items():
        T.write_csv(out / name, T.ROC_COLUMNS, rows)
    if not calib:
        return EXIT_FAILED
    return EXIT_PARTIAL if skipped or errors else EXIT_OK


# -- qc-screen ---------------------------------------------------------------


def screen_entries(cases, calib, registry, mode=PER_STRUCTURE, connectivity=26, threads=1):
    def one(case: CaseEntry):
        try:
            pred, umap = load_prediction(case)
            return unit_uncertainties(case.case_id, pred, umap, registry, connectivity), None
        except (MskqcError, OSError, ValueError) as exc:
            return [], f"{case.case_id}: {exc}"

    units, failed = [], []
    for case, (us, err) in zip(cases, _pool_map(one, cases, threads)):
        units.extend(us)
        if err:
            _warn(err)
            failed.append(case.case_id)
    rows = screen_units(units, calib, mode)
    rows.extend((cid, "", "", None, "unknown") for cid in failed)
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return rows, len(failed)


def screen_summary(rows):
    counts: dict[str, dict[str, int]] = {}
    for _, unit, _, _, flag in rows:
        for key in (unit or "<error>", "all"):
            c = counts.setdefault(key, {"ok": 0, "inaccurate": 0, "failed": 0, "unknown": 0})
            c[flag] += 1
    keys = sorted(k for k in counts if k != "all") + (["all"] if counts else [])
    return [(k, counts[k]["ok"], counts[k]["inaccurate"], counts[k]["failed"], counts[k]["unknown"]) for k in keys]


def cmd_qc_screen(args) -> int:
    cases = read_manifest(args.manifest)
    calib = QcCalibration.load(args.calibration)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, n_err = screen_entries(cases, calib, _registry(args), args.qc_mode, args.connectivity, args.threads)
    T.write_csv(out / "screen.csv", T.SCREEN_COLUMNS, rows)
    T.write_csv(out / "screen_summary.csv", T.SCREEN_SUMMARY_COLUMNS, screen_summary(rows))
    return _exit_code(len(cases), n_err)


# -- biomarkers --------------------------------------------------------------


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary PPM (P6) of an (ny, nx, 3) uint8 image."""
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.astype(np.uint8).tobytes())


def classification_slice(cls: LabelVolume, z: int | None = None) -> np.ndarray:
    """Axial slice at ``z`` (default mid) rendered with the fixed class colours; rows run along y."""
    data = cls.data
    z = data.shape[2] // 2 if z is None else z
    sl = data[:, :, z].T
    rgb = np.zeros(sl.shape + (3,), dtype=np.uint8)
    for code, color in SLICE_COLORS.items():
        rgb[sl == code] = color
    return rgb


def _biomarker_case(case: CaseEntry, registry, hist_range, connectivity, out: Path):
    img = _load(case.intensity, IntensityVolume, "intensity_path")
    sources = []
    if case.gt is not None:
        sources.append(("gt", _load(case.gt, LabelVolume, "gt_labels_path")))
    if case.pred is not None or case.stack is not None:
        sources.append(("auto", load_prediction(case)[0]))
    rows = []
    for source, labels in sources:
        units = biomarker_units(labels, img, registry, case.meta.height_m, hist_range, connectivity)
        union = np.zeros(img.geometry.dims, dtype=np.uint16)
        for (name, side), (mask, rec) in sorted(units.items()):
            comp = rec.composition
            rows.append(
                (
                    case.case_id,
                    source,
                    name,
                    side,
                    case.meta.side_status.get(side, ""),
                    rec.volume_cc,
                    rec.normalized_volume,
                    not rec.unnormalized,
                    rec.mean_hu,
                    comp.fat if comp else None,
                    comp.composite if comp else None,
                    comp.lean if comp else None,
                    rec.flags,
                )
            )
            if rec.histogram is not None:
                T.write_csv(
                    out / "histograms" / f"{case.case_id}_{source}_{name}_{side}.csv",
                    T.HISTOGRAM_COLUMNS,
                    list(rec.histogram.rows()),
                )
            if not mask.empty:
                cls = classification_volume(mask, img).data
                union[mask.data] = cls[mask.data]
        cls_vol = LabelVolume(img.geometry, union)
        write_volume(cls_vol, out / "classification" / f"{case.case_id}_{source}.mvol.gz")
        write_ppm(out / "slices" / f"{case.case_id}_{source}.ppm", classification_slice(cls_vol))
    return rows


def paired_rows(rows, alpha=0.05):
    """GT-vs-auto agreement per structure/side/measure over the cases that have both."""
    measures = (("volume_cc", 5), ("normalized_volume", 6), ("mean_hu", 8))
    table: dict[tuple[str, str], dict[str, dict[str, tuple]]] = {}
    for r in rows:
        if "EmptyStructure" in r[12]:
            continue
        table.setdefault((r[2], r[3]), {}).setdefault(r[0], {})[r[1]] = r
    out = []
    for measure, col in measures:
        block = []
        for (name, side) in sorted(table):
            both = [v for _, v in sorted(table[(name, side)].items()) if "gt" in v and "auto" in v]
            if measure == "normalized_volume":
                both = [v for v in both if v["gt"][7] and v["auto"][7]]
            if not both:
                continue
            g = np.array([v["gt"][col] for v in both], dtype=np.float64)
            a = np.array([v["auto"][col] for v in both], dtype=np.float64)
            err = mae(g, a)
            agree = None
            p = test = route = None
            if g.size >= 2:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    agree = ccc(g, a)
            if g.size >= 3:
                try:
                    res = compare_paired(g, a, alpha)
                    p, test, route = res.p_value, res.test_name, res.route
                except (DegenerateInput, UnsupportedN):
                    pass
            block.append([name, side, measure, int(g.size), err, agree, test, route, p, None])
        m = sum(1 for b in block if b[8] is not None)
        for b in block:
            if b[8] is not None:
                b[9] = significance_stars(b[8], alpha, m)
        out.extend(tuple(b) for b in block)
    return out


def cmd_biomarkers(args) -> int:
    cases = read_manifest(args.manifest)
    registry = _registry(args)
    out = Path(args.out_dir)
    for sub in ("histograms", "classification", "slices"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    hist_range = tuple(args.histogram_range)

    def one(case):
        try:
            return _biomarker_case(case, registry, hist_range, args.connectivity, out), None
        except (MskqcError, OSError, ValueError) as exc:
            return [], f"{case.case_id}: {exc}"

    rows, n_err = [], 0
    for case_rows, err in _pool_map(one, cases, args.threads):
        rows.extend(case_rows)
        if err:
            n_err += 1
            _warn(err)
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    T.write_csv(out / "biomarkers.csv", T.BIOMARKER_COLUMNS, rows)
    T.write_csv(out / "biomarkers_paired.csv", T.PAIRED_COLUMNS, paired_rows(rows, args.alpha))
    return _exit_code(len(cases), n_err)


# -- phantom -----------------------------------------------------------------


def cmd_phantom(args) -> int:
    from . import phantom as P

    if args.spec == "default":
        base, cohort = P.default_spec(), {"degradation_start": 0.0, "degradation_stop": 0.9}
    else:
        base, cohort = P.load_spec(args.spec)
    seed = int(args.seed) if args.seed is not None else int(base.seed)
    n_cases = args.n_cases or int(cohort.get("n_cases", 1))
    schedule = cohort.get("degradation_schedule")
    if schedule is None:
        start = float(cohort.get("degradation_start", base.degradation))
        stop = float(cohort.get("degradation_stop", base.degradation))
        schedule = P.linear_schedule(n_cases, start, stop)
    if len(schedule) != n_cases:
        raise SpecError(f"schedule has {len(schedule)} entries for {n_cases} cases")
    registry = _registry(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".mvol" if args.no_compress else ".mvol.gz"

    def one(i):
        cid = f"case_{i:03d}"
        spec = base.with_case(float(schedule[i]), P.case_seed(seed, i))
        case = P.generate_case(spec)
        d = out / cid
        d.mkdir(exist_ok=True)
        write_volume(case.intensity, d / f"intensity{ext}")
        write_volume(case.gt, d / f"gt{ext}")
        write_stack(case.stack, d / "stack", compress=not args.no_compress)
        truth = {
            "degradation": spec.degradation,
            "seed": spec.seed,
            "height_m": spec.height_m,
            "structures": {
                k: dict(v, name=registry.by_code(int(k)).name if int(k) in registry else None)
                for k, v in case.truth.to_json().items()
            },
        }
        row = (cid, f"{cid}/intensity{ext}", f"{cid}/gt{ext}", "", f"{cid}/stack", "", spec.height_m, "")
        return row, truth

    results = _pool_map(one, range(n_cases), args.threads)
    T.write_csv(out / "manifest.csv", T.MANIFEST_COLUMNS, [r for r, _ in results])
    truth = {"seed": seed, "spec": base.to_json(), "cases": {r[0]: t for r, t in results}}
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


# -- report ------------------------------------------------------------------


def describe(values) -> dict:
    v = np.array([x for x in values if not math.isnan(x)], dtype=np.float64)
    if v.size == 0:
        return {"n": 0, "mean": None, "sd": None, "min": None, "q1": None, "median": None, "q3": None, "max": None}
    q1, med, q3 = (float(q) for q in np.percentile(v, [25, 50, 75]))
    return {
        "n": int(v.size),
        "mean": math.fsum(v) / v.size,
        "sd": float(v.std(ddof=1)) if v.size > 1 else None,
        "min": float(v.min()),
        "q1": q1,
        "median": med,
        "q3": q3,
        "max": float(v.max()),
    }


def build_report(units, n_error_rows: int, screen=None) -> dict:
    metrics = ("dc", "asd_mm", "ave_pct", "aie_hu")
    by_struct: dict[str, list] = {}
    for r in units:
        by_struct.setdefault(r.structure, []).append(r)
    rep = {
        "n_rows": len(units) + n_error_rows,
        "n_error_rows": n_error_rows,
        "structures": {
            name: dict(
                {m: describe([getattr(r.metrics, m) for r in rs]) for m in metrics},
                uncertainty=describe([r.uncertainty for r in rs]),
            )
            for name, rs in sorted(by_struct.items())
        },
    }
    if screen is not None:
        counts: dict[str, int] = {}
        for row in screen:
            counts[row["flag"]] = counts.get(row["flag"], 0) + 1
        rep["screen_flags"] = dict(sorted(counts.items()))
    return rep


def cmd_report(args) -> int:
    units, errors = T.read_results(args.results)
    screen = T.read_csv(args.screen, T.SCREEN_COLUMNS) if args.screen else None
    out = Path(args.out_dir)
    (out / "plotdata").mkdir(parents=True, exist_ok=True)
    rep = build_report(units, len(errors), screen)
    (out / "report.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    scatter = [(r.case_id, r.structure, r.side, r.metrics.dc, r.uncertainty) for r in units]
    scatter += [(e["case_id"], e["structure"], e["side"], None, None) for e in errors]
    scatter.sort(key=lambda r: (r[0], r[1], r[2]))
    T.write_csv(out / "plotdata" / "scatter.csv", T.SCATTER_COLUMNS, scatter)
    if args.calibration:
        auroc_rows, curves = roc_tables(units, QcCalibration.load(args.calibration))
        T.write_csv(out / "plotdata" / "auroc.csv", T.AUROC_COLUMNS, auroc_rows)
        for name, rows in curves.items():
            T.write_csv(out / "plotdata" / name, T.ROC_COLUMNS, rows)
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags with suppressed defaults so they
    # may appear on either side of the subcommand without clobbering
    def d(v):
        return argparse.SUPPRESS if suppress else v

    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--registry", default=d(None), help="structure registry JSON (default: built-in 22 structures)")
    g.add_argument("--threads", type=int, default=d(1), help="worker threads (output is identical for any value)")
    g.add_argument("--seed", type=int, default=d(None), help="unsigned 64-bit seed for phantom generation")
    g.add_argument("--connectivity", type=int, choices=(6, 26), default=d(26))
    g.add_argument("--qc-mode", choices=(PER_STRUCTURE, CASE_AVERAGE), default=d(PER_STRUCTURE))
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="mskqc", description=__doc__, parents=[_global_flags(suppress=False)])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("evaluate", parents=[common], help="metrics and uncertainty per case/structure/side")
    s.add_argument("manifest")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("qc-calibrate", parents=[common], help="MAD thresholds, regression cutoffs and ROC curves")
    s.add_argument("results")
    s.add_argument("out_dir")
    s.add_argument("--cutoff", choices=("regression", "quantile"), default="regression")
    s.add_argument("--min-cases", type=int, default=3)
    s.set_defaults(func=cmd_qc_calibrate)

    s = sub.add_parser("qc-screen", parents=[common], help="flag cases without ground truth")
    s.add_argument("manifest")
    s.add_argument("calibration")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_qc_screen)

    s = sub.add_parser("biomarkers", parents=[common], help="volume, mean HU, composition, histograms")
    s.add_argument("manifest")
    s.add_argument("out_dir")
    s.add_argument("--histogram-range", nargs=3, type=float, default=(-200.0, 200.0, 10.0), metavar=("LO", "HI", "WIDTH"))
    s.add_argument("--alpha", type=float, default=0.05)
    s.set_defaults(func=cmd_biomarkers)

    s = sub.add_parser("phantom", parents=[common], help="write a synthetic cohort")
    s.add_argument("spec", help="phantom spec JSON, or 'default'")
    s.add_argument("out_dir")
    s.add_argument("--n-cases", type=int, default=None)
    s.add_argument("--no-compress", action="store_true", help="write plain .mvol instead of .mvol.gz")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("report", parents=[common], help="summary statistics and plot data")
    s.add_argument("results")
    s.add_argument("out_dir")
    s.add_argument("--screen")
    s.add_argument("--calibration")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        _warn("--threads must be >= 1")
        return EXIT_FAILED
    try:
        return args.func(args)
    except (MskqcError, OSError) as exc:
        _warn(str(exc))
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
