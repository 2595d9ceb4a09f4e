"""Command-line interface: ``ascluster <subcommand> [options]``.

Exit codes: 0 success, 1 input error, 2 numerical failure, 3 configuration error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import ThreadpoolController

from ascluster import __version__, evaluation, similarity, spectral
from ascluster.clustering import METHODS, AscConfig, AscResult, lambda_search, run_asc
from ascluster.errors import AscError, ConfigError, InputError, PipelineError
from ascluster.ingest import (
    SyntheticSpec,
    generate_synthetic,
    load_constraints,
    load_numeric_csv,
    load_term_frequency,
    write_constraints,
    write_numeric_csv,
    write_term_frequency,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2, 3
METRICS_SCHEMA = "ascluster.metrics/1"
ARTIFACTS = ("assignments.csv", "metrics.json", "k_selection.csv", "lambda_grid.csv",
             "eigen_report.csv", "profile.csv", "config.echo")

# pipeline settings; None on the command line means "not given"
DEFAULTS = {
    "numeric": None,
    "text": None,
    "lexicon": None,
    "constraints": None,
    "lam": "optimize",
    "lambda_step": 0.05,
    "laplacian": "random_walk",
    "window": 20,
    "method": "kmeans",
    "restarts": 10,
    "seed": 0,
    "rescale": True,
    "eq7_literal": False,
    "eq10_literal": False,
    "max_triples": 10_000,
    "normalize_rows": False,
    "candidates": None,
    "metrics_space": "embedding",
    "threads": None,
}
_PIPELINE_KEYS = ("lam", "lambda_step", "laplacian", "window", "method", "restarts", "seed", "rescale",
                  "eq7_literal", "eq10_literal", "max_triples", "normalize_rows", "candidates",
                  "metrics_space")


class _Parser(argparse.ArgumentParser):
    # bad flags are configuration errors, not argparse's default status 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _lambda_arg(text: str):
    if text == "optimize":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'optimize', got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _groups(text: str) -> tuple[tuple[int, ...], ...]:
    """``"0|1,2"`` -> ((0,), (1, 2)); an empty string means no groups."""
    try:
        return tuple(tuple(int(c) for c in g.split(",")) for g in text.split("|") if g.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected groups like '0|1,2', got {text!r}") from None


def _add_inputs(p):
    g = p.add_argument_group("inputs")
    g.add_argument("--numeric", help="numeric CSV (id column + features)")
    g.add_argument("--text", help="sparse term-frequency CSV (doc_id,term_index,count)")
    g.add_argument("--lexicon", help="lexicon, one term per line")
    g.add_argument("--constraints", help="JSON with must_link / cannot_link index arrays")
    g.add_argument("--config", help="reload settings from a config.echo file; explicit flags win")


def _add_pipeline(p):
    g = p.add_argument_group("pipeline")
    g.add_argument("--lambda", dest="lam", type=_lambda_arg,
                   help="fusion weight in [0, 1] or 'optimize' (default)")
    g.add_argument("--lambda-step", type=float, help="grid step for the weight search (default 0.05)")
    g.add_argument("--laplacian", choices=spectral.LAPLACIAN_KINDS, help="default random_walk")
    g.add_argument("--window", type=int, help="eigenvalues inspected for gaps (default 20)")
    g.add_argument("--method", choices=METHODS, help="clustering backend (default kmeans)")
    g.add_argument("--restarts", type=int, help="k-means / k-medians restarts (default 10)")
    g.add_argument("--seed", type=int, help="master seed (default 0)")
    g.add_argument("--no-rescale", dest="rescale", action="store_const", const=False,
                   help="keep raw numeric similarities instead of min-max rescaling them")
    g.add_argument("--eq7-literal", action="store_const", const=True,
                   help="weight constraints compare against the numeric similarity only")
    g.add_argument("--eq10-literal", action="store_const", const=True,
                   help="choose k by the per-cluster gap + separation expression")
    g.add_argument("--max-triples", type=int, help="cap on sampled constraint triples (default 10000)")
    g.add_argument("--normalize-rows", action="store_const", const=True,
                   help="unit-normalize embedding rows before clustering")
    g.add_argument("--candidates", type=_int_list, help="explicit k candidates, e.g. 3,11,14")
    g.add_argument("--metrics-space", choices=("embedding", "numeric"),
                   help="space for internal metrics (default embedding)")
    g.add_argument("--threads", type=int, help="cap on BLAS/LAPACK threads (never raised above the default)")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ascluster", description="Spectral clustering of numeric + text data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("cluster", help="full pipeline, writes the seven artifacts")
    _add_inputs(p)
    _add_pipeline(p)
    p.set_defaults(handler=cmd_cluster)

    p = sub.add_parser("optimize-lambda", help="fusion-weight grid search only")
    _add_inputs(p)
    _add_pipeline(p)
    p.set_defaults(handler=cmd_optimize_lambda)

    p = sub.add_parser("select-k", help="eigengap candidates and the chosen cluster count")
    _add_inputs(p)
    _add_pipeline(p)
    p.set_defaults(handler=cmd_select_k)

    p = sub.add_parser("ablate", help="pipeline on a single modality")
    _add_inputs(p)
    _add_pipeline(p)
    p.add_argument("--modality", choices=("numeric", "text"), required=True)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("profile", help="per-cluster term frequency ratios")
    p.add_argument("--text", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--assignments", required=True, help="id,label CSV")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(handler=cmd_profile)

    p = sub.add_parser("synth", help="write a planted-cluster numeric + text bundle")
    p.add_argument("--n", type=int, default=150)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--numeric-groups", type=_groups,
                   help="clusters sharing a numeric distribution, e.g. '0|1,2'")
    p.add_argument("--text-groups", type=_groups, help="clusters sharing a vocabulary, e.g. '1|2'")
    p.add_argument("--proportions", help="comma-separated cluster weights")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--numeric-noise", type=float)
    p.add_argument("--separation", type=float, help="numeric group separation in noise units")
    p.add_argument("--dispersion", type=float, help="Dirichlet dispersion of term probabilities")
    p.add_argument("--doc-length", type=float)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("eval", help="ARI, raw-space metrics, dataset summary, run comparison")
    p.add_argument("--assignments", required=True, help="id,label CSV")
    p.add_argument("--truth", help="ground-truth id,label CSV")
    p.add_argument("--numeric", help="numeric CSV for raw-space metrics and the summary table")
    p.add_argument("--compare", nargs="+", metavar="RUN_DIR",
                   help="run directories whose silhouettes are reported side by side")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(handler=cmd_eval)
    return parser


# --------------------------------------------------------------------------
# settings resolution and loading
# --------------------------------------------------------------------------

def resolve_settings(args) -> dict:
    """Built-in defaults, overlaid by a reloaded config file, overlaid by explicit flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        saved = raw.get("settings", raw) if isinstance(raw, dict) else None
        if not isinstance(saved, dict):
            raise InputError(f"{path}: expected a JSON object")
        unknown = sorted(set(saved) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"{path}: unknown settings {', '.join(unknown)}")
        settings.update(saved)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if settings["threads"] is not None and int(settings["threads"]) < 1:
        raise ConfigError("--threads must be >= 1")
    return settings


def _config(settings: dict, modality: str = "fused") -> AscConfig:
    kwargs = {k: settings[k] for k in _PIPELINE_KEYS}
    if kwargs["candidates"] is not None:
        kwargs["candidates"] = tuple(kwargs["candidates"])
    return AscConfig(modality=modality, **kwargs).check()


def _load(settings: dict, need_numeric: bool, need_text: bool):
    if need_numeric and not settings["numeric"]:
        raise ConfigError("--numeric is required")
    if need_text and not (settings["text"] and settings["lexicon"]):
        raise ConfigError("--text and --lexicon are required")
    if bool(settings["text"]) != bool(settings["lexicon"]):
        raise ConfigError("--text and --lexicon must be given together")
    numeric = load_numeric_csv(settings["numeric"]) if settings["numeric"] else None
    text = None
    if settings["text"]:
        samples = numeric.samples if numeric is not None else None
        text = load_term_frequency(settings["text"], settings["lexicon"], samples)
    constraints = None
    if settings["constraints"]:
        n = numeric.n if numeric is not None else text.n
        constraints = load_constraints(settings["constraints"], n)
    return numeric, text, constraints


def effective_threads(requested: int) -> int:
    """Requested count clamped to the pools the BLAS libraries were started with.

    OpenBLAS cannot grow past its initial pool (it crashes), so the flag only
    ever lowers the thread count.
    """
    sizes = [lib.num_threads for lib in ThreadpoolController().lib_controllers]
    return max(1, min([int(requested), *sizes]))


def _threads(settings):
    t = settings["threads"]
    if t is None:
        return contextlib.nullcontext()
    return ThreadpoolController().limit(limits=effective_threads(t))


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x) -> str:
    return f"{x:.10g}"


# --------------------------------------------------------------------------
# artifact writers
# --------------------------------------------------------------------------

def write_config_echo(settings: dict, command: str, path, modality: str = "fused") -> None:
    doc = {"command": command, "modality": modality, "version": __version__, "settings": settings}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_assignments(samples, labels, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"])
        for sid, lab in zip(samples, labels):
            w.writerow([sid, int(lab) + 1])


def read_assignments(path) -> tuple[tuple[str, ...], np.ndarray]:
    """Ids and labels exactly as written (files from this package use 1-based labels)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"assignments file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or [c.strip() for c in rows[0][:2]] != ["id", "label"]:
        raise InputError(f"{path}: expected an 'id,label' header")
    ids, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise InputError(f"{path}: line {lineno} must have 2 fields")
        try:
            labels.append(int(row[1]))
        except ValueError:
            raise InputError(f"{path}: line {lineno}: non-integer label {row[1]!r}") from None
        ids.append(row[0].strip())
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate ids")
    return tuple(ids), np.asarray(labels)


def write_metrics(result: AscResult, path, space: str) -> None:
    doc = {
        "schema": METRICS_SCHEMA,
        "modality": result.modality,
        "n": len(result.samples),
        "k": result.k,
        "lambda": result.lam,
        "lambda_feasible": None if result.lambda_solution is None else result.lambda_solution.feasible,
        "candidates": list(result.eigengap.candidates),
        "zero_eigenvalues": result.decomposition.zero_multiplicity,
        "selection_mode": result.selection.mode,
        "selection_degenerate": result.selection.degenerate,
        "cluster_sizes": [int(s) for s in result.assignment.sizes],
        "metrics_space": space,
    }
    bundle = result.metrics.to_json() if result.metrics is not None else dict.fromkeys(
        ("silhouette", "intra_inter", "chc", "dbi"))
    doc.update(bundle)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_k_selection(result: AscResult, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "gap", "silhouette", "score", "degenerate", "chosen"])
        for r in result.selection.per_candidate:
            w.writerow([r.k, _fmt(r.gap), _fmt(r.silhouette), _fmt(r.score), int(r.degenerate),
                        int(r.k == result.selection.chosen_k)])


def _write_lambda_grid(result: AscResult, path) -> None:
    if result.lambda_solution is not None:
        similarity.write_lambda_grid(result.lambda_solution, path)
        return
    Path(path).write_text(
        "lambda,mean_must_link_sim,mean_cannot_link_sim,satisfied_fraction,feasible\n", encoding="utf-8")


def write_run(result: AscResult, text, settings: dict, command: str, out: Path) -> None:
    write_assignments(result.samples, result.labels, out / "assignments.csv")
    write_metrics(result, out / "metrics.json", settings["metrics_space"])
    write_k_selection(result, out / "k_selection.csv")
    _write_lambda_grid(result, out / "lambda_grid.csv")
    spectral.write_eigen_report(result.decomposition, result.eigengap, out / "eigen_report.csv")
    if text is not None:
        text = text.reorder(result.samples)
        evaluation.write_profile(evaluation.word_frequency_ratio(text, result.labels), out / "profile.csv")
    else:
        (out / "profile.csv").write_text("term\n", encoding="utf-8")
    write_config_echo(settings, command, out / "config.echo", result.modality)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _summary_line(result: AscResult) -> str:
    parts = [f"modality={result.modality}", f"k={result.k}"]
    if result.lam is not None:
        parts.append(f"lambda={result.lam:.2f}")
    parts.append("candidates=" + ",".join(str(k) for k in result.eigengap.candidates))
    if result.metrics is not None:
        parts.append(f"silhouette={result.metrics.silhouette:.4f}")
    return " ".join(parts)


def cmd_cluster(args) -> int:
    settings = resolve_settings(args)
    cfg = _config(settings)
    numeric, text, constraints = _load(settings, True, True)
    with _threads(settings):
        result = run_asc(numeric, text, constraints, cfg)
    out = _outdir(args.out)
    write_run(result, text, settings, "cluster", out)
    print(_summary_line(result))
    return EXIT_OK


def cmd_ablate(args) -> int:
    settings = resolve_settings(args)
    cfg = _config(settings, args.modality)
    numeric, text, _ = _load(settings, args.modality == "numeric", args.modality == "text")
    with _threads(settings):
        result = run_asc(numeric, text, None, cfg)
    out = _outdir(args.out)
    write_run(result, text, settings, "ablate", out)
    print(_summary_line(result))
    return EXIT_OK


def cmd_optimize_lambda(args) -> int:
    settings = resolve_settings(args)
    cfg = _config(settings)
    numeric, text, constraints = _load(settings, True, True)
    if constraints is None:
        raise ConfigError("--constraints is required")
    with _threads(settings):
        solution = lambda_search(numeric, text, constraints, cfg)
    out = _outdir(args.out)
    similarity.write_lambda_grid(solution, out / "lambda_grid.csv")
    write_config_echo(settings, "optimize-lambda", out / "config.echo")
    print(f"lambda={solution.lam:.2f} objective={solution.objective:.4f} "
          f"feasible={str(solution.feasible).lower()} satisfied_fraction={solution.satisfied_fraction:.4f} "
          f"triples={solution.n_triples}")
    return EXIT_OK


def cmd_select_k(args) -> int:
    settings = resolve_settings(args)
    cfg = _config(settings)
    numeric, text, constraints = _load(settings, True, True)
    with _threads(settings):
        result = run_asc(numeric, text, constraints, cfg)
    out = _outdir(args.out)
    spectral.write_eigen_report(result.decomposition, result.eigengap, out / "eigen_report.csv")
    write_k_selection(result, out / "k_selection.csv")
    write_config_echo(settings, "select-k", out / "config.echo")
    print(_summary_line(result))
    return EXIT_OK


def cmd_profile(args) -> int:
    ids, labels = read_assignments(args.assignments)
    text = load_term_frequency(args.text, args.lexicon, ids)
    _, lab = np.unique(labels, return_inverse=True)
    out = _outdir(args.out)
    evaluation.write_profile(evaluation.word_frequency_ratio(text, lab), out / "profile.csv")
    print(f"clusters={lab.max() + 1} terms={text.q}")
    return EXIT_OK


def cmd_synth(args) -> int:
    kwargs = {"n": args.n, "seed": args.seed}
    for key, name in (("numeric_noise", "numeric_noise"), ("numeric_separation", "separation"),
                      ("text_dispersion", "dispersion"), ("doc_length", "doc_length")):
        if getattr(args, name) is not None:
            kwargs[key] = getattr(args, name)
    if args.numeric_groups is not None:
        kwargs["numeric_separability"] = args.numeric_groups
    if args.text_groups is not None:
        kwargs["text_separability"] = args.text_groups
    if args.proportions is not None:
        try:
            kwargs["proportions"] = tuple(float(x) for x in args.proportions.split(","))
        except ValueError:
            raise ConfigError(f"bad --proportions {args.proportions!r}") from None
    if args.clusters < 2:
        raise ConfigError("clusters must be >= 2")
    spec = SyntheticSpec.planted(args.clusters, **kwargs)
    numeric, text, labels, constraints = generate_synthetic(spec)
    out = _outdir(args.out)
    write_numeric_csv(numeric, out / "numeric.csv")
    write_term_frequency(text, out / "text_counts.csv", out / "lexicon.txt")
    write_constraints(constraints, out / "constraints.json")
    write_assignments(numeric.samples, labels, out / "labels.csv")
    print(f"n={numeric.n} clusters={spec.clusters} sizes={','.join(map(str, spec.sizes()))} out={out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ids, labels = read_assignments(args.assignments)
    report: dict = {"n": len(ids), "k": int(len(np.unique(labels)))}
    out = _outdir(args.out)
    if args.truth:
        tids, truth = read_assignments(args.truth)
        pos = {s: i for i, s in enumerate(tids)}
        missing = [s for s in ids if s not in pos]
        if missing or len(tids) != len(ids):
            raise InputError(f"{args.truth}: ids do not match {args.assignments}")
        report["ari"] = float(_fmt(evaluation.adjusted_rand_index(labels, truth[[pos[s] for s in ids]])))
    if args.numeric:
        numeric = load_numeric_csv(args.numeric)
        order = {s: i for i, s in enumerate(numeric.samples)}
        if set(order) != set(ids):
            raise InputError(f"{args.numeric}: ids do not match {args.assignments}")
        values = numeric.values[[order[s] for s in ids]]
        if report["k"] >= 2:
            report["numeric_space"] = evaluation.metric_bundle(values, labels).to_json()
        evaluation.write_summary(evaluation.dataset_summary(numeric), out / "summary.csv")
    if args.compare:
        runs = []
        for run in args.compare:
            path = Path(run) / "metrics.json"
            if not path.is_file():
                raise InputError(f"metrics file not found: {path}")
            doc = json.loads(path.read_text(encoding="utf-8"))
            runs.append({"run": str(run), "modality": doc.get("modality"), "k": doc.get("k"),
                         "silhouette": doc.get("silhouette"), "metrics_space": doc.get("metrics_space")})
        base = runs[0]["silhouette"]
        for r in runs:
            s = r["silhouette"]
            r["silhouette_ratio_to_first"] = (float(_fmt(s / base)) if s is not None and base else None)
        report["runs"] = runs
    (out / "eval.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, PipelineError):
        return _exit_code(exc.cause)
    if isinstance(exc, (InputError, OSError)):
        return EXIT_INPUT
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.handler(args)
    except (AscError, OSError) as exc:
        code = _exit_code(exc)
        kind = {EXIT_INPUT: "input error", EXIT_CONFIG: "config error"}.get(code, "numerical failure")
        print(f"ascluster: {kind}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
