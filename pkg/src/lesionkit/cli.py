"""``lesionkit`` command line.

Every subcommand reads and writes the CSV artifacts of the library modules.
Options can also come from a ``key = value`` config file (``--config``);
flags given on the command line win.

Exit codes: 0 success, 2 input validation, 3 numerical non-convergence,
4 I/O.  The error class name is printed on standard error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .balance import (
    CLI_MODES,
    ClassWeights,
    DiagnosisWeights,
    combined_dataset_weights,
    save_weights,
)
from .cropper import crop_grid, flatten_crops, save_offsets
from .ensemble import (
    Kind,
    Rule,
    final_predict,
    load_ensemble,
    load_final,
    save_ensemble,
    save_final,
    subset_search,
)
from .errors import LesionKitError, NoConvergence, ShapeMismatch, ValidationError
from .ingest import (
    Dataset,
    PredictionTensor,
    SampleManifest,
    class_counts,
    load_counts,
    load_features,
    load_manifest,
    load_predictions,
    save_counts,
    save_predictions,
)
from .meta import load_meta, meta_cv, meta_fit, save_meta
from .metrics import accuracy, confusion_matrix, report_rows, save_report
from .splits import load_folds, save_folds, stratified_group_kfold
from .trainer import (
    Sampler,
    TrainConfig,
    load_model,
    predict_proba,
    save_history,
    save_model,
    train,
)

log = logging.getLogger("lesionkit")


def _read_config(path: str) -> dict[str, str]:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        from .errors import InputOutputError

        raise InputOutputError(f"{path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _manifest(args) -> SampleManifest:
    return load_manifest(args.manifest, args.classes)


def _diag_weights(spec: Optional[str]) -> DiagnosisWeights:
    if not spec:
        return DiagnosisWeights()
    factors = {}
    for item in spec.split(","):
        key, _, value = item.partition("=")
        try:
            factors[key.strip()] = float(value)
        except ValueError:
            raise ValidationError(f"bad diagnosis weight {item!r}; expected name=factor") from None
    try:
        return DiagnosisWeights(factors)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def cmd_split(args) -> int:
    manifest = _manifest(args)
    assignment = stratified_group_kfold(manifest, args.k, args.seed)
    save_folds(assignment, manifest, args.out)
    sizes = [len(f) for f in assignment.folds()]
    print(f"wrote {args.out}: k={args.k} fold sizes {sizes}")
    return 0


def cmd_weights(args) -> int:
    if args.counts:
        counts = load_counts(args.counts)
    elif args.manifest:
        counts = class_counts(_manifest(args), Dataset.PRIMARY)
    else:
        raise ValidationError("weights needs --manifest or --counts")
    cw = combined_dataset_weights(counts, CLI_MODES[args.mode])
    save_weights(cw, args.out)
    if args.counts_out:
        save_counts(counts, args.counts_out)
    print(f"wrote {args.out}: {len(cw.weights)} class weights ({cw.mode.value})")
    return 0


def cmd_crops(args) -> int:
    grid = crop_grid(args.height, args.width, args.size, args.n)
    save_offsets(grid, args.out)
    print(f"wrote {args.out}: {len(grid)} crops of {args.size}px")
    return 0


def cmd_train(args) -> int:
    manifest = _manifest(args)
    _, X = load_features(args.features, manifest, require_all=True)
    folds = load_folds(args.folds) if args.folds else None
    if (folds is None) != (args.fold is None):
        raise ValidationError("--folds and --fold go together")
    if args.balance == "batch":
        cw, sampler = ClassWeights.ones(manifest.n_classes), Sampler.BALANCED
    else:
        counts = class_counts(manifest, Dataset.PRIMARY)
        cw, sampler = combined_dataset_weights(counts, CLI_MODES[args.balance]), Sampler.SHUFFLED
    cfg = TrainConfig(
        lr0=args.lr0, decay=args.decay, first_drop=args.first_drop, drop_every=args.drop_every,
        max_epochs=args.epochs, eval_every=args.eval_every, batch_size=args.batch_size, seed=args.seed,
    )
    result = train(X, manifest, folds, args.fold, cw, _diag_weights(args.diagnosis_weights), cfg, sampler,
                   args.secondary)
    out = Path(args.out_dir)
    save_model(result.best_model, out / "model_best.csv")
    save_model(result.last_model, out / "model_last.csv")
    save_history(result.history, out / "history.csv")
    evals = result.history.evaluations
    best = max((w for _, w in evals), default=float("nan"))
    print(f"wrote {out}: {len(evals)} validation evaluations, best val WACC {best:.4f} at epoch {result.best_epoch}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = _manifest(args)
    ids, X = load_features(args.features, manifest)
    if args.folds is not None and args.fold is not None:
        fold_of = load_folds(args.folds).fold_of
        keep = [i for i, s in enumerate(ids) if fold_of.get(s) == args.fold]
        ids, X = [ids[i] for i in keep], X[keep]
    if not ids:
        raise ValidationError("no samples to evaluate")
    model = load_model(args.model)
    probs = predict_proba(model, X)
    tensor = PredictionTensor((args.model_id,), tuple(ids), probs[None, :, None, :])
    save_predictions(tensor, args.out)
    if args.report:
        truth = manifest.subset(ids).labels
        save_report(report_rows(truth, probs, manifest.n_classes), args.report)
    print(f"wrote {args.out}: {len(ids)} samples")
    return 0


def _labels_for(manifest, sample_ids) -> np.ndarray:
    return np.array([manifest.samples[manifest.index_of(s)].label for s in sample_ids], dtype=np.int64)


def _select(tensor: PredictionTensor, models: Optional[str]) -> PredictionTensor:
    if not models:
        return tensor
    wanted = [m.strip() for m in models.split(",") if m.strip()]
    unknown = [m for m in wanted if m not in tensor.model_ids]
    if unknown:
        raise ValidationError(f"unknown model id(s) {unknown}")
    return tensor.select_models(wanted)


def cmd_meta_train(args) -> int:
    manifest = _manifest(args)
    tensor = _select(load_predictions(args.predictions, manifest), args.models)
    labels = _labels_for(manifest, tensor.sample_ids)
    M, S, R, C = tensor.shape
    X = np.stack([flatten_crops(tensor.values[m, s]) for m in range(M) for s in range(S)])
    y = np.tile(labels, M)
    gamma = "auto" if args.gamma == "auto" else float(args.gamma)
    if args.cv:
        score = meta_cv(X, y, args.cv, args.c, gamma, args.seed, n_classes=C)
        print(f"meta {args.cv}-fold CV mean WACC {score:.4f}")
    model = meta_fit(X, y, args.c, gamma, n_classes=C, tol=args.tol, max_passes=args.max_passes, seed=args.seed)
    save_meta(model, args.out)
    print(f"wrote {args.out}: {C} one-vs-rest SVMs over {X.shape[1]} features")
    if not model.converged:
        raise NoConvergence("SMO did not converge for at least one class (model written)")
    return 0


def cmd_meta_predict(args) -> int:
    manifest = _manifest(args)
    tensor = _select(load_predictions(args.predictions, manifest), args.models)
    meta = load_meta(args.meta)
    M, S, R, C = tensor.shape
    if meta.n_classes != C:
        raise ShapeMismatch(f"meta-model has {meta.n_classes} classes, predictions have {C}")
    out = np.stack([
        meta.predict_onehot(np.stack([flatten_crops(tensor.values[m, s]) for s in range(S)]))
        for m in range(M)
    ])
    save_predictions(PredictionTensor(tensor.model_ids, tensor.sample_ids, out[:, :, None, :]), args.out)
    print(f"wrote {args.out}: meta predictions for {M} model(s), {S} samples")
    return 0


def cmd_ensemble_search(args) -> int:
    manifest = _manifest(args)
    tensor = load_predictions(args.predictions, manifest)
    truth = _labels_for(manifest, tensor.sample_ids)
    full = {m.strip() for m in (args.full_models or "").split(",") if m.strip()}
    kinds = [Kind.FULL if m in full else Kind.CV for m in tensor.model_ids]
    result = subset_search(tensor.values, truth, args.top_k, args.rule, tensor.model_ids, kinds)
    save_ensemble(result.spec, args.out)
    print(
        f"wrote {args.out}: {len(result.members)} of {len(tensor.model_ids)} models, "
        f"WACC {result.wacc:.4f}, {result.n_evaluated} subsets evaluated"
    )
    return 0


def _report_for(manifest, sample_ids, probs, path) -> None:
    save_report(report_rows(_labels_for(manifest, sample_ids), probs, manifest.n_classes), path)


def cmd_final(args) -> int:
    manifest = _manifest(args)
    full_t = load_predictions(args.full, manifest) if args.full else None
    cv_t = load_predictions(args.cv, manifest) if args.cv else None
    tensors = [t for t in (full_t, cv_t) if t is not None]
    if not tensors:
        raise ValidationError("final needs --full and/or --cv predictions")
    sample_ids = tensors[0].sample_ids
    if any(t.sample_ids != sample_ids for t in tensors):
        raise ShapeMismatch("prediction files cover different samples")
    if args.ensemble:
        spec = load_ensemble(args.ensemble)
        pool = {}
        for t in (full_t, cv_t):
            if t is not None:
                for i, m in enumerate(t.model_ids):
                    pool.setdefault(m, t.values[i])
        missing = [m for m in spec.model_ids if m not in pool]
        if missing:
            raise ValidationError(f"ensemble member(s) {missing} not in the prediction files")
        full_v = [pool[m.model_id] for m in spec.members if m.kind is Kind.FULL]
        cv_v = [pool[m.model_id] for m in spec.members if m.kind is Kind.CV]
    else:
        full_v = list(full_t.values) if full_t is not None else []
        cv_v = list(cv_t.values) if cv_t is not None else []

    def stack(vals):
        return np.stack(vals) if vals else None

    meta = load_meta(args.meta) if args.meta else None
    probs = final_predict(stack(full_v), stack(cv_v), meta, args.full_weight)
    out = Path(args.out_dir)
    save_final(sample_ids, probs, out / "final_predictions.csv")
    if not args.no_report:
        _report_for(manifest, sample_ids, probs, out / "report.csv")
    print(f"wrote {out / 'final_predictions.csv'}: {len(sample_ids)} samples from "
          f"{len(full_v)} full + {len(cv_v)} cv models")
    return 0


def cmd_report(args) -> int:
    manifest = _manifest(args)
    sample_ids, probs = load_final(args.final)
    for sid in sample_ids:
        manifest.index_of(sid)
    rows = report_rows(_labels_for(manifest, sample_ids), probs, manifest.n_classes)
    if args.folds:
        # per-fold plain accuracy and its mean, kept apart from the pooled accuracy
        fold_of = load_folds(args.folds).fold_of
        truth = _labels_for(manifest, sample_ids)
        pred = probs.argmax(axis=1)
        folds = np.array([fold_of.get(s, -1) for s in sample_ids])
        accs = []
        for f in sorted(set(folds.tolist()) - {-1}):
            sel = folds == f
            accs.append(accuracy(confusion_matrix(truth[sel], pred[sel], manifest.n_classes)))
            rows.append((f"accuracy_fold_{f}", accs[-1]))
        if accs:
            rows.append(("accuracy_fold_mean", float(np.mean(accs))))
    save_report(rows, args.out)
    for k, v in rows[:3]:
        print(f"{k}: {v:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lesionkit", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="key = value file supplying option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        return p

    def manifest_opts(p, required=True):
        p.add_argument("--manifest", required=required)
        p.add_argument("--classes", type=int, help="declared class count (default: max label + 1)")

    p = command("split", cmd_split, "group-aware stratified k-fold assignment -> folds.csv")
    manifest_opts(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="folds.csv")

    p = command("weights", cmd_weights, "class loss weights -> weights.csv")
    manifest_opts(p, required=False)
    p.add_argument("--counts", help="counts.csv instead of a manifest")
    p.add_argument("--mode", choices=sorted(CLI_MODES), default="invfreq")
    p.add_argument("--out", default="weights.csv")
    p.add_argument("--counts-out", help="also write the primary-dataset counts.csv")

    p = command("crops", cmd_crops, "evaluation crop grid -> offsets.csv")
    p.add_argument("--height", type=int, default=450)
    p.add_argument("--width", type=int, default=600)
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--n", type=int, default=36)
    p.add_argument("--out", default="offsets.csv")

    p = command("train", cmd_train, "train the softmax classifier -> model_best/model_last/history")
    manifest_opts(p)
    p.add_argument("--features", required=True)
    p.add_argument("--folds")
    p.add_argument("--fold", type=int)
    p.add_argument("--balance", choices=sorted(CLI_MODES) + ["batch"], default="invfreq")
    p.add_argument("--secondary", choices=["exclude", "add_to_train"], default="exclude")
    p.add_argument("--diagnosis-weights", help="e.g. histopathology=2,confocal=1.5")
    p.add_argument("--lr0", type=float, default=0.0005)
    p.add_argument("--decay", type=float, default=0.2)
    p.add_argument("--first-drop", type=int, default=50)
    p.add_argument("--drop-every", type=int, default=25)
    p.add_argument("--epochs", type=int, default=125)
    p.add_argument("--eval-every", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")

    p = command("evaluate", cmd_evaluate, "score features with a model -> predictions.csv")
    manifest_opts(p)
    p.add_argument("--model", required=True)
    p.add_argument("--model-id", default="model")
    p.add_argument("--features", required=True)
    p.add_argument("--folds")
    p.add_argument("--fold", type=int)
    p.add_argument("--out", default="predictions.csv")
    p.add_argument("--report", help="also write report.csv")

    p = command("meta-train", cmd_meta_train, "fit the SVM meta-learner on flattened crops -> meta.csv")
    manifest_opts(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--models", help="comma-separated model ids (default: all)")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--gamma", default="auto")
    p.add_argument("--tol", type=float, default=1e-3, help="KKT tolerance")
    p.add_argument("--max-passes", type=int, default=200, help="cap on full SMO sweeps")
    p.add_argument("--cv", type=int, default=0, help="also report k-fold CV WACC (0: skip)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="meta.csv")

    p = command("meta-predict", cmd_meta_predict, "apply a meta-model -> one-hot predictions.csv")
    manifest_opts(p)
    p.add_argument("--meta", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--models")
    p.add_argument("--out", default="meta_predictions.csv")

    p = command("ensemble-search", cmd_ensemble_search, "exhaustive top-k subset search -> ensemble.csv")
    manifest_opts(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--top-k", type=int, default=15)
    p.add_argument("--rule", choices=[r.value for r in Rule], default="average")
    p.add_argument("--full-models", help="comma-separated ids of fully trained models")
    p.add_argument("--out", default="ensemble.csv")

    p = command("final", cmd_final, "crop aggregation, meta prediction, weighted averaging, report")
    manifest_opts(p)
    p.add_argument("--full", help="predictions.csv of fully trained models")
    p.add_argument("--cv", help="predictions.csv of cross-validation models")
    p.add_argument("--meta")
    p.add_argument("--ensemble", help="ensemble.csv restricting members and their kind")
    p.add_argument("--full-weight", type=float, default=5.0)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--no-report", action="store_true")

    p = command("report", cmd_report, "metrics from final_predictions.csv -> report.csv")
    manifest_opts(p)
    p.add_argument("--final", required=True)
    p.add_argument("--folds", help="add per-fold accuracy rows")
    p.add_argument("--out", default="report.csv")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = _read_config(known.config)
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        for sp in action.choices.values():
            dests = {a.dest: a for a in sp._actions}  # noqa: SLF001
            defaults = {}
            for key, value in values.items():
                a = dests.get(key)
                if a is None:
                    continue
                if isinstance(a, argparse._StoreTrueAction):  # noqa: SLF001
                    defaults[key] = value.lower() in ("1", "true", "yes", "on")
                else:
                    defaults[key] = value
                    a.required = False
            sp.set_defaults(**defaults)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except LesionKitError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"InputOutputError: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
