"""cbrs-sense command line.

Every command writes versioned files under ``--out`` and takes all of its
randomness from ``--seed`` (default: $CBRS_SENSE_SEED, else 0).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CbrsError, InvalidConfig, IoFailure

SPLIT_VERSION = 1
SEED_ENV = "CBRS_SENSE_SEED"


def _default_seed() -> int:
    v = os.environ.get(SEED_ENV)
    if v is None:
        return 0
    try:
        return int(v)
    except ValueError:
        raise InvalidConfig(f"{SEED_ENV} must be an integer, got {v!r}") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    return out


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise IoFailure(f"{what} {p} does not exist")
    return p


def _load_split(path) -> dict:
    try:
        d = json.loads(_need_file(path, "split file").read_text())
    except ValueError as exc:
        raise IoFailure(f"corrupt split file {path}") from exc
    if d.get("format_version") != SPLIT_VERSION:
        raise IoFailure(f"unsupported split format in {path}")
    return d


def _select_cases(ds, split_path, subset: str):
    if split_path is None:
        if subset not in ("all", "train"):
            raise InvalidConfig(f"--subset {subset} needs --split")
        return list(ds.cases)
    ids = set(_load_split(split_path)[subset]) if subset != "all" else None
    cases = [c for c in ds.cases if ids is None or c.case_id in ids]
    if ids is not None and len(cases) != len(ids):
        raise InvalidConfig("split refers to cases missing from the dataset")
    return cases


def _threshold_policy(args):
    from .stats import ThresholdPolicy

    if getattr(args, "threshold", None) is not None:
        return ThresholdPolicy("fixed", args.threshold)
    if args.threshold_fpr is not None:
        return ThresholdPolicy("fpr", args.threshold_fpr)
    if args.threshold_tpr is not None:
        return ThresholdPolicy("tpr", args.threshold_tpr)
    return None


# --------------------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    from .synth import SceneDistribution, generate_dataset

    dist = SceneDistribution(p_multi=args.p_multi) if args.p_multi is not None else SceneDistribution()
    m = generate_dataset(args.out, args.n, dist, seed=args.seed)
    c = m["channel_counts"]
    print(f"wrote {m['n_cases']} scenes to {args.out} ({c['present']} present / {c['absent']} absent channels)")
    return 0


def cmd_split(args) -> int:
    from .synth import Dataset, StrataPlan, stratified_split

    ds = Dataset(args.dataset)
    plan = StrataPlan.table_i_set_a(total=args.test_size, best_effort=args.best_effort)
    test, pool = stratified_split(ds.cases, plan, seed=args.seed)
    out = _out_dir(args)
    doc = {"format_version": SPLIT_VERSION, "seed": args.seed, "test_size": args.test_size,
           "test": [c.case_id for c in test], "train": [c.case_id for c in pool]}
    (out / "split.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"test {len(test)} / train {len(pool)}")
    return 0


def cmd_train(args) -> int:
    from .io import save_model
    from .nn import TrainConfig
    from .pipeline import fit_detector, training_channels
    from .synth import Dataset

    ds = Dataset(args.dataset)
    cfg = None
    if args.detector in ("ed", "si-ed"):
        X = y = None
    else:
        cases = _select_cases(ds, args.split, "train")
        X, y, _ = training_channels(ds, cases, args.n_channels, seed=args.seed)
        if args.detector in ("cnn3", "lstm"):
            cfg = TrainConfig(optimizer=args.optimizer, learning_rate=args.lr, epochs=args.epochs,
                              dropout_p=args.dropout, seed=args.seed, hidden=args.hidden)
    model = fit_detector(args.detector, X, y, features=args.features, seed=args.seed, train_cfg=cfg,
                         k=args.k, C=args.C, kernel=args.kernel)
    out = _out_dir(args)
    save_model(out / "model.cbrs", model)
    print(f"saved {args.detector} model to {out / 'model.cbrs'}")
    return 0


def cmd_score(args) -> int:
    from .io import load_model, write_scored
    from .pipeline import dataset_scenes, make_scorer, score_scenes
    from .synth import Dataset

    ds = Dataset(args.dataset)
    model = load_model(_need_file(args.model, "model"))
    cases = _select_cases(ds, args.split, args.subset)
    scored = score_scenes(dataset_scenes(ds, cases), make_scorer(model))
    out = _out_dir(args)
    name = model.get("model") if isinstance(model, dict) else getattr(model, "kind", None) or model.name
    write_scored(out / "scored.tsv", scored, {"detector": name, "subset": args.subset})
    print(f"scored {len(scored)} channels from {len(cases)} spectrograms")
    return 0


def cmd_eval_roc(args) -> int:
    from .eval import delong_ci, roc_curve, threshold_for_rate
    from .io import read_scored, write_table

    scored = read_scored(_need_file(args.scored, "scored file"))
    auc, lo, hi = delong_ci(scored, alpha=args.alpha)
    c = roc_curve(scored)
    meta = {"auc": auc, "ci_lower": lo, "ci_upper": hi, "alpha": args.alpha,
            "n_present": int(scored.labels.sum()), "n_absent": int((~scored.labels).sum())}
    if args.threshold_fpr is not None or args.threshold_tpr is not None:
        t = threshold_for_rate(scored, fpr=args.threshold_fpr, tpr=args.threshold_tpr)
        meta.update(threshold=t.threshold, threshold_fpr=t.fpr, threshold_tpr=t.tpr)
    out = _out_dir(args)
    write_table(out / "roc.tsv", "roc", {"threshold": c.thresholds, "x": c.fpr, "y": c.tpr}, meta)
    print(f"AUC {auc:.3f} [{lo:.3f}, {hi:.3f}]")
    if "threshold" in meta:
        print(f"threshold {meta['threshold']:.6g}: FPR {meta['threshold_fpr']:.4f} TPR {meta['threshold_tpr']:.4f}")
    return 0


def cmd_eval_froc(args) -> int:
    from .eval import bootstrap_froc_ci, froc_auc_normalized, froc_curve
    from .io import read_scored, write_table

    scored = read_scored(_need_file(args.scored, "scored file"))
    c = froc_curve(scored)
    meta = {"froc_auc": froc_auc_normalized(c), "n_spectrograms": c.n_spectrograms,
            "n_present": c.n_present, "n_absent": c.n_absent}
    if args.bootstrap:
        strata = None
        if args.dataset is not None:
            from .synth import Dataset

            tags = {cs.case_id: "/".join(cs.stratum) for cs in Dataset(args.dataset).cases}
            strata = {i: tags[i] for i in dict.fromkeys(scored.ids)}
        _, lo, hi = bootstrap_froc_ci(scored, strata, B=args.bootstrap, alpha=args.alpha, seed=args.seed)
        meta.update(ci_lower=lo, ci_upper=hi, bootstrap=args.bootstrap, seed=args.seed)
    out = _out_dir(args)
    write_table(out / "froc.tsv", "froc", {"threshold": c.thresholds, "x": c.mean_fp, "y": c.fraction}, meta)
    line = f"FROC-AUC {meta['froc_auc']:.3f}"
    if args.bootstrap:
        line += f" [{meta['ci_lower']:.3f}, {meta['ci_upper']:.3f}]"
    print(line)
    return 0


def _run_survey(args):
    """Synthetic survey scored by ``--model``.

    Rate policies resolve on ``--calibration`` when given, otherwise on a
    separate calibration survey (half occupied) drawn from the same seed.
    """
    from .io import load_model, read_scored
    from .pipeline import make_scorer, survey_scored
    from .stats import apply_classifier_survey
    from .synth import occupancy_schedule, survey_observations

    policy = _threshold_policy(args)
    if policy is None:
        raise InvalidConfig("give --threshold, --threshold-fpr or --threshold-tpr")
    model = load_model(_need_file(args.model, "model"))
    scorer = make_scorer(model)
    channels = [int(m) for m in args.channels.split(",")]
    s_cal, s_sched, s_obs = np.random.SeedSequence(args.seed).spawn(3)
    cal = None
    if args.calibration:
        cal = read_scored(_need_file(args.calibration, "calibration file"))
    elif policy.kind != "fixed":
        rng = np.random.default_rng(s_cal)
        cal_sched = {m: rng.random(args.calibration_obs) < 0.5 for m in channels}
        cal_seed = int(s_cal.generate_state(1)[0])
        cal = survey_scored(survey_observations(cal_sched, cal_seed, site=args.site, antenna=args.antenna),
                            cal_sched, scorer)
    thr = policy.resolve(cal)
    rng = np.random.default_rng(s_sched)
    schedule = {m: occupancy_schedule(args.n_obs, args.duty, args.mean_run, rng) for m in channels}
    obs = survey_observations(schedule, int(s_obs.generate_state(1)[0]), site=args.site, antenna=args.antenna)
    return apply_classifier_survey(obs, scorer, thr), schedule


def cmd_survey_occupancy(args) -> int:
    from .io import write_table
    from .stats import HIST_MAX_MINUTES, OBS_MINUTES, occupancy_intervals, occupancy_ratio

    res, truth = _run_survey(args)
    out = _out_dir(args)
    minutes = list(range(OBS_MINUTES, HIST_MAX_MINUTES + 1, OBS_MINUTES))
    occ = np.zeros(len(minutes), dtype=np.int64)
    vac = np.zeros(len(minutes), dtype=np.int64)
    rows = {"channel_mhz": [], "ratio": [], "ci_lower": [], "ci_upper": [], "true_ratio": []}
    for mhz, tl in res.timelines.items():
        h = occupancy_intervals(tl)
        occ += h.occupied
        vac += h.vacant
        r, lo, hi = occupancy_ratio(tl, alpha=args.alpha)
        rows["channel_mhz"].append(mhz)
        rows["ratio"].append(r)
        rows["ci_lower"].append(lo)
        rows["ci_upper"].append(hi)
        rows["true_ratio"].append(float(np.mean(truth[mhz])))
    meta = {"threshold": res.threshold, "n_obs": args.n_obs, "seed": args.seed}
    write_table(out / "hist.tsv", "hist", {"minutes": minutes, "occupied": occ, "vacant": vac}, meta)
    write_table(out / "ratio.tsv", "ratio", rows, meta)
    for m, r, lo, hi in zip(rows["channel_mhz"], rows["ratio"], rows["ci_lower"], rows["ci_upper"]):
        print(f"{m} MHz occupancy {r:.3f} [{lo:.3f}, {hi:.3f}]")
    return 0


def cmd_survey_ccdf(args) -> int:
    from .io import write_table
    from .stats import empirical_ccdf_with_dkw

    res, _ = _run_survey(args)
    power = res.pooled_absent_power()
    if power.size == 0:
        raise InvalidConfig("no SPN-43-absent observations to pool")
    band = empirical_ccdf_with_dkw(power, alpha=args.alpha)
    out = _out_dir(args)
    write_table(out / "ccdf.tsv", "ccdf", {"x": band.x, "ccdf": band.ccdf, "lower": band.lower, "upper": band.upper},
                {"n": band.n, "alpha": args.alpha, "threshold": res.threshold, "seed": args.seed})
    print(f"pooled {band.n} center-bin samples")
    return 0


def cmd_gradcheck(args) -> int:
    from .io import write_table
    from .nn import grad_check, init_params

    if args.detector not in ("cnn3", "lstm"):
        raise InvalidConfig("gradcheck applies to cnn3 or lstm")
    rng = np.random.default_rng(args.seed)
    errs, skipped = [], []
    for d in range(args.draws):
        p = init_params(args.detector, int(rng.integers(2**63)), hidden=args.hidden)
        x = rng.uniform(-95.0, -60.0, size=(134, 46))
        r = grad_check(p, x, float(d % 2))
        errs.append(r.max_rel_error)
        skipped.append(r.n_skipped)
        print(f"draw {d}: max relative error {r.max_rel_error:.3e} ({r.n_one_sided} one-sided, {r.n_skipped} skipped)")
    out = _out_dir(args)
    write_table(out / "gradcheck.tsv", "gradcheck",
                {"draw": list(range(args.draws)), "max_rel_error": errs, "skipped": skipped},
                {"detector": args.detector, "seed": args.seed, "hidden": args.hidden})
    worst = max(errs) if errs else 0.0
    if worst >= args.tol:
        print(f"gradient check failed: {worst:.3e} >= {args.tol:g}", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args) -> int:
    from .eval import time_detector
    from .io import load_model, write_table
    from .spectrogram import extract_channels
    from .synth import SceneDistribution, iter_scenes

    sg, case = next(iter_scenes(1, SceneDistribution(), seed=args.seed))
    sample = extract_channels(sg, parent_id=case.case_id)[0].values.copy()
    names, times = [], []
    for path in args.model:
        model = load_model(_need_file(path, "model"))
        fn = _single_scorer(model)
        ms = time_detector(fn, sample, n_reps=args.reps)
        name = model.get("model") if isinstance(model, dict) else getattr(model, "kind", None) or model.name
        names.append(name)
        times.append(ms)
        print(f"{name}: {ms:.4f} ms/sample")
    out = _out_dir(args)
    write_table(out / "bench.tsv", "bench", {"detector": names, "ms_per_sample": times}, {"reps": args.reps})
    return 0


def _single_scorer(model):
    """Per-channel callable used for timing."""
    from .detect import energy_detect_score, si_energy_detect_score
    from .ml import GmmModel, KnnModel, SvmModel, gmm_score, knn_score, svm_score
    from .nn import NetDetector, Params
    from .spectrogram import preprocess_channel

    if isinstance(model, dict):
        return energy_detect_score if model["model"] == "ed" else si_energy_detect_score
    if isinstance(model, Params):
        return NetDetector(model)
    score = {KnnModel: knn_score, SvmModel: svm_score, GmmModel: gmm_score}[type(model)]
    mode = model.feature_mode or "full"
    return lambda x: score(model, preprocess_channel(x, mode))


def cmd_plot(args) -> int:
    from .io import read_table
    from .plot import emit_plot

    if args.table is not None:
        kind, meta, cols = read_table(_need_file(args.table, "table"))
        emit_plot(kind, cols, args.out, meta)
    else:
        from .synth import Dataset

        if args.dataset is None or args.case is None:
            raise InvalidConfig("plot needs --table, or --dataset with --case")
        ds = Dataset(args.dataset)
        if args.case not in {c.case_id for c in ds.cases}:
            raise InvalidConfig(f"case {args.case!r} not in dataset")
        values = ds.spectrogram(args.case).values
        emit_plot("spectrogram-image", {"values": values}, args.out,
                  {"lo": args.window[0], "hi": args.window[1], "case": args.case})
    print(f"wrote {Path(args.out).with_suffix('.svg')}")
    return 0


# --------------------------------------------------------------------------- parser


def _add_threshold(p, fixed: bool = False) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--threshold-fpr", type=float, metavar="Q", help="threshold with false-positive rate <= Q")
    g.add_argument("--threshold-tpr", type=float, metavar="Q", help="threshold with true-positive rate >= Q")
    if fixed:
        g.add_argument("--threshold", type=float, help="fixed score threshold")


def build_parser() -> argparse.ArgumentParser:
    from .pipeline import DETECTORS

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"random seed (default ${SEED_ENV} or 0)")
    common.add_argument("--out", default=".", help="output directory")

    ap = argparse.ArgumentParser(prog="cbrs-sense", description="Detect SPN-43 radar in CBRS spectrograms.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--n", type=int, default=1000, help="number of scenes")
    p.add_argument("--p-multi", type=float, default=None, help="chance of a second SPN-43")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", parents=[common], help="stratified test/train split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--test-size", type=int, default=500)
    p.add_argument("--best-effort", action="store_true", help="shrink strata the pool cannot fill")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="fit a detector")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default=None, help="split.json; trains on its train list")
    p.add_argument("--detector", choices=DETECTORS, required=True)
    p.add_argument("--features", choices=("full", "timeagg", "center2"), default="full")
    p.add_argument("--n-channels", type=int, default=4285)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--optimizer", choices=("sgd", "adagrad", "adam"), default="adam")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--hidden", type=int, default=64, help="LSTM width")
    p.add_argument("--k", type=int, default=9, help="KNN neighbours")
    p.add_argument("--C", type=float, default=1.0, help="SVM box constraint")
    p.add_argument("--kernel", choices=("linear", "rbf", "poly", "sigmoid"), default="linear")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", parents=[common], help="score every channel of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--subset", choices=("test", "train", "all"), default="all")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval-roc", parents=[common], help="ROC curve, AUC and DeLong interval")
    p.add_argument("--scored", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    _add_threshold(p)
    p.set_defaults(func=cmd_eval_roc)

    p = sub.add_parser("eval-froc", parents=[common], help="FROC curve and bootstrap interval")
    p.add_argument("--scored", required=True)
    p.add_argument("--dataset", default=None, help="dataset supplying strata for the bootstrap")
    p.add_argument("--bootstrap", type=int, default=0, metavar="B")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_eval_froc)

    for name, func, text in (("survey-occupancy", cmd_survey_occupancy, "occupancy histograms and ratios"),
                             ("survey-ccdf", cmd_survey_ccdf, "CCDF of SPN-43-absent power")):
        p = sub.add_parser(name, parents=[common], help=f"synthetic survey: {text}")
        p.add_argument("--model", required=True)
        p.add_argument("--calibration", default=None, help="scored file used to set a rate threshold")
        p.add_argument("--calibration-obs", type=int, default=200,
                       help="observations per channel in the built-in calibration survey")
        p.add_argument("--n-obs", type=int, default=288, help="10-minute observations per channel")
        p.add_argument("--channels", default="3560,3570", help="comma-separated channel centers in MHz")
        p.add_argument("--duty", type=float, default=0.3)
        p.add_argument("--mean-run", type=float, default=3.0)
        p.add_argument("--site", choices=("VB", "SD"), default="VB")
        p.add_argument("--antenna", choices=("Omni", "CBS"), default="Omni")
        p.add_argument("--alpha", type=float, default=0.05)
        _add_threshold(p, fixed=True)
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--detector", choices=("cnn3", "lstm"), default="cnn3")
    p.add_argument("--draws", type=int, default=20)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", parents=[common], help="per-sample inference time")
    p.add_argument("--model", action="append", required=True, help="model file (repeatable)")
    p.add_argument("--reps", type=int, default=100_000)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="render a result table or a spectrogram")
    p.add_argument("--table", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--case", default=None)
    p.add_argument("--window", type=float, nargs=2, default=(-90.0, -50.0), metavar=("LO", "HI"))
    p.add_argument("--out", required=True, help="output path stem")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        return int(args.func(args))
    except CbrsError as exc:
        print(f"cbrs-sense {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
