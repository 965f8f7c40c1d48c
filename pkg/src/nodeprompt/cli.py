"""Command-line front end.

Pipeline stages communicate through plain files (score matrices,
predictions), so an expensive scoring run can be cached once and reused
across zero-shot runs, few-shot runs, and sweeps:

    synth -> score -> zero-shot | few-shot | sweep -> eval | significance

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .backends import (
    HttpScoringBackend,
    MockBackend,
    PriorScoreBackend,
    load_prior_scores,
    save_prior_scores,
)
from .calibrate import TrainConfig, parse_train_config, train_config_from_mapping
from .errors import ConfigError
from .evaluate import (
    PipelineConfig,
    make_report,
    mann_whitney_u,
    run_experiment,
)
from .graph import build_normalized_adjacency, load_edge_list
from .prior import (
    PromptTemplate,
    assemble_score_matrix,
    load_labels,
    load_node_texts,
    load_predictions,
    refine_scores,
    save_predictions,
    zero_shot_predict,
)
from .synth import SynthParams, generate_synthetic, write_dataset

_FORMATS = """\
file formats:
  texts    JSON Lines, one {"id": int, "text": str} per line, ids covering 0..N-1
  labels   one label text per line; 0-based line number = class index
  tokens   JSON Lines {"label": str, "tokens": [str, ...]} tokenization override
  edges    one "src dst" pair per line; '#' comments and blank lines ignored
  prior    header "num_nodes<TAB>num_labels", then one row of scores per node
  pred/gt  one integer class index per line; line i = node i
  config   key=value per line, '#' comments; keys are calibrator settings
"""


def _make_backend(value: str, threads: int | None = None):
    if value == "mock":
        return MockBackend()
    if value.startswith("file:"):
        return PriorScoreBackend.from_file(value[len("file:") :])
    if value.startswith("http://") or value.startswith("https://"):
        return HttpScoringBackend(value, max_inflight=threads or 4)
    if value.startswith("http:"):
        return HttpScoringBackend(value[len("http:") :], max_inflight=threads or 4)
    raise ConfigError(
        f"unknown backend {value!r}; expected 'mock', 'file:<path>' or 'http:<url>'"
    )


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if getattr(args, "config", None):
        cfg = parse_train_config(args.config, cfg)
    overrides = {}
    for flag, key in (
        ("layers", "layers"),
        ("hidden", "hidden"),
        ("entropy_coef", "entropy_coef"),
        ("alpha", "alpha"),
        ("n_e", "n_ensemble"),
        ("lr", "lr"),
        ("epochs", "epochs"),
        ("entropy_sign", "entropy_sign"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    cfg = train_config_from_mapping(overrides, cfg)
    if getattr(args, "no_ens", False):
        cfg = replace(cfg, n_ensemble=1, alpha=1.0)
    if getattr(args, "no_id", False):
        cfg = replace(cfg, identity=False)
    return cfg


def _require_edges_flag(args) -> None:
    """Propagation needs an edge list; checked before any file is read."""
    if not args.edges and not args.no_prop and args.steps != 0:
        raise ConfigError("--edges is required unless --no-prop or --steps 0 is given")


def _load_adjacency(args, num_nodes: int):
    if args.edges:
        return build_normalized_adjacency(load_edge_list(args.edges, num_nodes))
    return None


def _emit_json(payload: dict, out_path=None) -> None:
    text = json.dumps(payload, indent=2)
    print(text)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def cmd_score(args) -> int:
    texts = load_node_texts(args.texts)
    vocab = load_labels(args.labels, args.tokens)
    backend = _make_backend(args.backend, args.threads)
    template = PromptTemplate(args.instruction, args.mask_token, args.mask_separator)
    raw = assemble_score_matrix(texts, vocab, template, backend, workers=args.threads)
    save_prior_scores(raw, args.out)
    return 0


def cmd_zero_shot(args) -> int:
    _require_edges_flag(args)
    prior = load_prior_scores(args.prior)
    adj = _load_adjacency(args, prior.num_nodes)
    scores = refine_scores(prior.scores, adj, args.steps, not args.no_prop, not args.no_norm)
    pred = zero_shot_predict(scores)
    save_predictions(pred, args.out)
    if args.gt:
        gt = load_predictions(args.gt)
        if gt.size != pred.size:
            raise ValueError(f"ground truth has {gt.size} entries for {pred.size} nodes")
        report = make_report(pred, gt, np.arange(pred.size), prior.num_labels, seed=0)
        _emit_json(report.as_dict(), args.metrics_out)
    return 0


def cmd_few_shot(args) -> int:
    _require_edges_flag(args)
    prior = load_prior_scores(args.prior)
    adj = _load_adjacency(args, prior.num_nodes)
    gt = load_predictions(args.gt)
    if gt.size != prior.num_nodes:
        raise ValueError(f"ground truth has {gt.size} entries for {prior.num_nodes} nodes")
    cfg = _train_config(args)
    pipeline = PipelineConfig(args.steps, not args.no_prop, not args.no_norm, cfg)
    result = run_experiment(
        prior.scores, adj, gt, pipeline, k=args.k, repeats=args.repeats, base_seed=args.seed
    )
    save_predictions(result.predictions[0], args.out)
    _emit_json(result.as_dict(), args.metrics_out)
    return 0


def cmd_eval(args) -> int:
    pred = load_predictions(args.pred)
    gt = load_predictions(args.gt)
    if pred.size != gt.size:
        raise ValueError("prediction and ground-truth files disagree in length")
    ids = load_predictions(args.ids) if args.ids else np.arange(gt.size)
    num_classes = args.num_classes or int(gt.max()) + 1
    report = make_report(pred, gt, ids, num_classes, seed=0)
    _emit_json(report.as_dict(), args.out)
    return 0


def _load_sample(path) -> list[float]:
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.strip()
            if not body:
                continue
            try:
                values.append(float(body))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: expected a number") from exc
    if not values:
        raise ConfigError(f"{path}: empty sample")
    return values


def cmd_significance(args) -> int:
    a = _load_sample(args.a)
    b = _load_sample(args.b)
    u, p = mann_whitney_u(a, b, method=args.method)
    _emit_json(
        {"u_a": u, "p_value": p, "n_a": len(a), "n_b": len(b), "method": args.method},
        args.out,
    )
    return 0


def cmd_synth(args) -> int:
    params = SynthParams(
        classes=args.classes,
        per_class=args.per_class,
        p_in=args.p_in,
        p_out=args.p_out,
        keywords_per_class=args.keywords,
        noise_words=args.noise,
    )
    dataset = generate_synthetic(params, args.seed)
    paths = write_dataset(dataset, args.out_dir)
    _emit_json({name: str(path) for name, path in paths.items()})
    return 0


def cmd_sweep(args) -> int:
    _require_edges_flag(args)
    prior = load_prior_scores(args.prior)
    adj = _load_adjacency(args, prior.num_nodes)
    gt = load_predictions(args.gt)
    cfg = _train_config(args)
    if args.param in ("n_e", "alpha") and args.k < 1:
        raise ConfigError(f"sweeping {args.param} requires --k >= 1")
    rows = []
    for raw_value in args.values.split(","):
        raw_value = raw_value.strip()
        if args.param == "steps":
            steps = int(raw_value)
            pipeline = PipelineConfig(steps, not args.no_prop, not args.no_norm, cfg)
            result = run_experiment(prior.scores, adj, gt, pipeline, k=0, repeats=1, base_seed=args.seed)
            value: float | int = steps
        else:
            if args.param == "n_e":
                member_cfg = replace(cfg, n_ensemble=int(raw_value))
                value = int(raw_value)
            else:  # alpha
                member_cfg = replace(cfg, alpha=float(raw_value))
                value = float(raw_value)
            pipeline = PipelineConfig(args.steps, not args.no_prop, not args.no_norm, member_cfg)
            result = run_experiment(prior.scores, adj, gt, pipeline, k=args.k, repeats=args.repeats, base_seed=args.seed)
        rows.append(
            {
                "value": value,
                "acc_mean": result.acc_mean,
                "acc_std": result.acc_std,
                "f1_mean": result.f1_mean,
                "f1_std": result.f1_std,
            }
        )
    print("value\tacc_mean\tacc_std\tf1_mean\tf1_std")
    for row in rows:
        print(
            f"{row['value']}\t{row['acc_mean']!r}\t{row['acc_std']!r}"
            f"\t{row['f1_mean']!r}\t{row['f1_std']!r}"
        )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"param": args.param, "rows": rows}, indent=2) + "\n")
    return 0


def _add_prop_flags(sub) -> None:
    sub.add_argument("--edges", help="edge list file")
    sub.add_argument("--steps", type=int, default=10, help="graph propagation steps (default 10)")
    sub.add_argument("--no-prop", action="store_true", help="skip graph propagation")
    sub.add_argument("--no-norm", action="store_true", help="skip per-class normalization")


def _add_train_flags(sub) -> None:
    sub.add_argument("--config", help="key=value calibrator config file")
    sub.add_argument("--layers", type=int, help="calibrator layer count (default 3)")
    sub.add_argument("--hidden", type=int, help="hidden width (default 16)")
    sub.add_argument("--entropy-coef", dest="entropy_coef", type=float, help="entropy term weight (default 0.3)")
    sub.add_argument("--alpha", type=float, help="shrinkage coefficient (default 0.9)")
    sub.add_argument("--n-e", dest="n_e", type=int, help="ensemble size (default 5)")
    sub.add_argument("--lr", type=float, help="Adam learning rate (default 1e-2)")
    sub.add_argument("--epochs", type=int, help="training epochs (default 50)")
    sub.add_argument("--entropy-sign", dest="entropy_sign", choices=["verbatim", "minimize"], help="entropy term sign convention")
    sub.add_argument("--no-id", action="store_true", help="remove the identity connection")
    sub.add_argument("--no-ens", action="store_true", help="single non-shrunk model (n_e=1, alpha=1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nodeprompt",
        description="Zero- and few-shot node classification on text-attributed graphs.",
        epilog=_FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subs = parser.add_subparsers(dest="command", required=True)

    score = subs.add_parser(
        "score",
        help="assemble raw prior scores and write a score file",
        epilog=_FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    score.add_argument("--texts", required=True, help="node texts JSONL")
    score.add_argument("--labels", required=True, help="label texts file")
    score.add_argument("--tokens", help="optional label tokenization JSONL")
    score.add_argument("--backend", default="mock", help="'mock', 'file:<path>' or 'http:<url>'")
    score.add_argument("--instruction", default="Topic", help="prompt instruction text (default 'Topic')")
    score.add_argument("--mask-token", dest="mask_token", default="<mask>", help="mask token string")
    score.add_argument("--mask-separator", dest="mask_separator", default=" ", help="separator between mask tokens")
    score.add_argument("--threads", type=int, default=None, help="max concurrent scoring requests")
    score.add_argument("--out", required=True, help="output score file")
    score.set_defaults(func=cmd_score)

    zero = subs.add_parser(
        "zero-shot",
        help="predict from a score file via propagation + normalization",
        epilog=_FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    zero.add_argument("--prior", required=True, help="score file from 'score'")
    _add_prop_flags(zero)
    zero.add_argument("--gt", help="ground-truth file; prints metrics when given")
    zero.add_argument("--metrics-out", dest="metrics_out", help="also write metrics JSON here")
    zero.add_argument("--out", required=True, help="output predictions file")
    zero.set_defaults(func=cmd_zero_shot)

    few = subs.add_parser(
        "few-shot",
        help="calibrate the prior on K labels per class and evaluate",
        epilog=_FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    few.add_argument("--prior", required=True, help="score file from 'score'")
    _add_prop_flags(few)
    few.add_argument("--gt", required=True, help="ground-truth file")
    few.add_argument("--k", type=int, required=True, help="labeled nodes per class")
    few.add_argument("--repeats", type=int, default=5, help="independent repetitions (default 5)")
    few.add_argument("--seed", type=int, default=0, help="base seed; repeat r uses seed+r")
    _add_train_flags(few)
    few.add_argument("--out", required=True, help="predictions file (first repeat)")
    few.add_argument("--metrics-out", dest="metrics_out", help="also write metrics JSON here")
    few.set_defaults(func=cmd_few_shot)

    ev = subs.add_parser(
        "eval",
        help="score a predictions file against ground truth",
        epilog=_FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    ev.add_argument("--pred", required=True, help="predictions file")
    ev.add_argument("--gt", required=True, help="ground-truth file")
    ev.add_argument("--ids", help="optional file of node ids to restrict to")
    ev.add_argument("--num-classes", dest="num_classes", type=int, help="class count (default max(gt)+1)")
    ev.add_argument("--out", help="also write metrics JSON here")
    ev.set_defaults(func=cmd_eval)

    sig = subs.add_parser(
        "significance",
        help="one-sided Mann-Whitney U test (a greater)",
        epilog="input files hold one number per line",
    )
    sig.add_argument("--a", required=True, help="sample A file")
    sig.add_argument("--b", required=True, help="sample B file")
    sig.add_argument("--method", choices=["auto", "exact", "approx"], default="auto")
    sig.add_argument("--out", help="also write the result JSON here")
    sig.set_defaults(func=cmd_significance)

    synth = subs.add_parser(
        "synth",
        help="generate a synthetic dataset (edges, texts, labels, ground truth)",
        epilog=_FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    synth.add_argument("--classes", type=int, default=4)
    synth.add_argument("--per-class", dest="per_class", type=int, default=50)
    synth.add_argument("--p-in", dest="p_in", type=float, default=0.3, help="intra-class edge probability")
    synth.add_argument("--p-out", dest="p_out", type=float, default=0.02, help="inter-class edge probability")
    synth.add_argument("--keywords", type=int, default=3, help="keywords per class")
    synth.add_argument("--noise", type=int, default=12, help="noise tokens per node text")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out-dir", dest="out_dir", required=True)
    synth.set_defaults(func=cmd_synth)

    sweep = subs.add_parser(
        "sweep",
        help="rerun zero- or few-shot across one parameter and tabulate",
        epilog=_FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sweep.add_argument("--param", required=True, choices=["steps", "n_e", "alpha"])
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--prior", required=True)
    _add_prop_flags(sweep)
    sweep.add_argument("--gt", required=True)
    sweep.add_argument("--k", type=int, default=0, help="shots (required for n_e/alpha sweeps)")
    sweep.add_argument("--repeats", type=int, default=5)
    sweep.add_argument("--seed", type=int, default=0)
    _add_train_flags(sweep)
    sweep.add_argument("--out", help="also write the table as JSON here")
    sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())
