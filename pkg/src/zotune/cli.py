"""Command-line orchestration.

Subcommands: generate (synthetic task), rewrite (build the rephrased
corpus), judge (verdicts for a pair or a pair file), calibrate (judge
calibration loop), annotate (terminal review of rewrite candidates), train
(one condition), sweep (full six-condition grid), report (render a result
table).

A shared JSON config file supplies the schema, template paths, backend
selection, and grids. All randomness flows from --seed (default 0). The
live backend credential comes from the ZOTUNE_API_KEY environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import calibration, grid as grid_mod, pipeline, synth
from .backends import (
    Backend,
    CachingBackend,
    FixtureBackend,
    HTTPBackend,
    RewriteRules,
    RuleRewriterBackend,
)
from .data import (
    Dataset,
    FeatureExtractor,
    FieldSpec,
    TaskSchema,
    builtin_schemas,
    featurize,
    load_jsonl,
    load_split_file,
    save_jsonl,
    save_split_file,
    split,
)
from .templates import Annotation, load_template, save_annotations, save_template

__all__ = ["main"]


def _load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _resolve_schema(cfg: dict) -> TaskSchema:
    spec = cfg.get("schema", "synthetic")
    if isinstance(spec, str):
        schemas = builtin_schemas()
        if spec not in schemas:
            raise ValueError(f"unknown schema {spec!r}; built in: {sorted(schemas)}")
        return schemas[spec]
    return TaskSchema(
        name=spec["name"],
        fields=tuple(FieldSpec(name, role) for name, role in spec["fields"]),
        label_space=tuple(spec["label_space"]),
    )


def _build_backend(spec: dict | None) -> Backend:
    if not spec:
        raise ValueError("config has no backend section")
    kind = spec.get("kind")
    if kind == "rule":
        backend: Backend = RuleRewriterBackend(RewriteRules.load(spec["rules_path"]))
    elif kind == "fixture":
        backend = FixtureBackend(spec.get("reply", "Same"))
    elif kind == "http":
        backend = HTTPBackend(
            endpoint_url=spec["endpoint_url"],
            model=spec["model"],
            timeout=float(spec.get("timeout", 60.0)),
        )
    else:
        raise ValueError(f"unknown backend kind {kind!r}")
    if spec.get("cache_dir"):
        backend = CachingBackend(spec["cache_dir"], backend)
    return backend


def _resolve_grid(cfg: dict, seed: int) -> grid_mod.ExperimentGrid:
    spec = cfg.get("grid", "desk")
    if spec == "desk":
        return replace(grid_mod.DESK_GRID, seed=seed)
    if spec == "paper":
        return replace(grid_mod.PAPER_GRID, seed=seed)
    return grid_mod.ExperimentGrid(
        zo=grid_mod.ZOGrid(
            learning_rates=tuple(spec["zo"]["learning_rates"]),
            batch_sizes=tuple(spec["zo"]["batch_sizes"]),
            steps=int(spec["zo"]["steps"]),
            delta=float(spec["zo"].get("delta", 1e-3)),
        ),
        fo_full=grid_mod.FOGrid(
            learning_rates=tuple(spec["fo_full"]["learning_rates"]),
            batch_sizes=tuple(spec["fo_full"]["batch_sizes"]),
            steps=int(spec["fo_full"]["steps"]),
        ),
        fo_lora=grid_mod.LoRAGrid(
            learning_rates=tuple(spec["fo_lora"]["learning_rates"]),
            ranks=tuple(spec["fo_lora"]["ranks"]),
            batch_size=int(spec["fo_lora"].get("batch_size", 16)),
            steps=int(spec["fo_lora"]["steps"]),
        ),
        seed=seed,
    )


def _extractor(cfg: dict) -> FeatureExtractor:
    spec = cfg.get("extractor", {})
    return FeatureExtractor(dimension=int(spec.get("dimension", 64)))


def _load_corpus(corpus_path, splits_path, schema: TaskSchema) -> Dataset:
    dataset = load_jsonl(corpus_path, schema)
    if splits_path:
        dataset = load_split_file(dataset, splits_path)
    return dataset


def _cmd_generate(args) -> int:
    spec = synth.SyntheticTaskSpec(
        n_classes=args.classes,
        exclusive_vocab_size=args.exclusive_vocab,
        filler_vocab_size=args.filler_vocab,
        distractor_vocab_size=args.distractor_vocab,
        tokens_per_span=args.tokens_per_span,
        exclusive_rate=args.exclusive_rate,
        injection_rate=args.injection_rate,
        corpus_size=args.size,
        feature_dimension=args.feature_dimension,
        seed=args.seed,
    )
    dataset, rules = synth.generate_synthetic_task(spec)
    sizes = None
    if args.split_sizes:
        sizes = tuple(int(s) for s in args.split_sizes.split(","))
    dataset = split(dataset, seed=args.seed, sizes=sizes)
    save_jsonl(dataset, args.out)
    save_split_file(dataset, args.splits_out)
    rules.save(args.rules_out)
    print(f"wrote {len(dataset)} instances to {args.out}")
    return 0


def _cmd_rewrite(args) -> int:
    cfg = _load_config(args.config)
    schema = _resolve_schema(cfg)
    dataset = _load_corpus(args.corpus, args.splits, schema)
    backend = _build_backend(cfg.get("backend"))
    judge_backend = _build_backend(cfg["judge_backend"]) if "judge_backend" in cfg else None
    rewriter_template = load_template(cfg["templates"]["rewriter"])
    judge_template = load_template(cfg["templates"]["judge"])
    rephrased, report = pipeline.build_corpus(
        backend,
        rewriter_template,
        judge_template,
        dataset,
        retries=args.retries,
        judge_backend=judge_backend,
    )
    save_jsonl(rephrased, args.out)
    if args.splits:
        save_split_file(rephrased, args.splits_out or args.splits)
    report.save(args.report)
    if args.candidates:
        candidates = [
            pipeline.RewriteResult(
                instance_id=r.instance_id,
                target_field=r.target_field,
                original_span=r.original_span,
                rewritten_span=r.candidate_span if r.candidate_span is not None else "",
                backend_name="",
            )
            for r in report.records
            if r.candidate_span is not None
        ]
        pipeline.save_candidates(candidates, args.candidates)
    print(
        f"rewriter_accuracy = {report.rewriter_accuracy:.4f} "
        f"({report.accepted}/{report.total} accepted)"
    )
    return 0


def _cmd_judge(args) -> int:
    cfg = _load_config(args.config)
    schema = _resolve_schema(cfg)
    backend = _build_backend(cfg.get("judge_backend") or cfg.get("backend"))
    judge_template = load_template(cfg["templates"]["judge"])
    if args.pairs:
        pairs = calibration.load_pairs(args.pairs, schema)
        for pair in pairs:
            verdict = pipeline.judge_pair(
                backend, judge_template, schema, pair.original, pair.rewritten_span
            )
            print(f"{pair.pair_id}\t{verdict.value}")
        return 0
    if not (args.original and args.rewritten):
        raise ValueError("judge needs --pairs, or both --original and --rewritten")
    schema_target = schema.rewritable_fields[0]
    values = {name: "" for name in schema.span_fields}
    values[schema_target] = args.original
    from .data import Instance

    instance = Instance(id="cli_pair", field_values=values, label=0)
    verdict = pipeline.judge_pair(backend, judge_template, schema, instance, args.rewritten)
    print(verdict.value)
    return 0


def _cmd_calibrate(args) -> int:
    cfg = _load_config(args.config)
    schema = _resolve_schema(cfg)
    backend = _build_backend(cfg.get("judge_backend") or cfg.get("backend"))
    judge_template = load_template(cfg["templates"]["judge"])
    pairs = calibration.load_pairs(args.pairs, schema)
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    def request_revision(report, worksheet_path):
        prompt = (
            f"round scored {report.judge_acc:.4f} (< {report.threshold}); "
            f"see {worksheet_path}.\n"
            "Path to revised template (empty to stop): "
        )
        answer = input(prompt).strip()
        return load_template(answer) if answer else None

    outcome = calibration.calibration_loop(
        backend,
        judge_template,
        schema,
        pairs,
        threshold=args.threshold,
        max_rounds=args.max_rounds,
        worksheet_dir=workdir,
        request_revision=request_revision if not args.no_input else None,
    )
    for i, report in enumerate(outcome.reports, start=1):
        report.save(workdir / f"calibration_round_{i}.jsonl")
        print(f"round {i}: judge_acc = {report.judge_acc:.4f} passed = {report.passed}")
    status = "calibrated" if outcome.calibrated else "NOT calibrated"
    print(f"{status}: template {outcome.template.name} v{outcome.template.version}")
    return 0 if outcome.calibrated else 1


def _cmd_annotate(args) -> int:
    candidates = pipeline.load_candidates(args.candidates)
    annotations = []
    print(f"{len(candidates)} candidates; answer a (approve), r (reject), q (stop early)")
    for i, cand in enumerate(candidates, start=1):
        print(f"\n[{i}/{len(candidates)}] id = {cand.instance_id}")
        print(f"  original:  {cand.original_span}")
        print(f"  rewritten: {cand.rewritten_span}")
        while True:
            answer = input("approve? [a/r/q] ").strip().lower()
            if answer in ("a", "r", "q"):
                break
        if answer == "q":
            break
        annotations.append(
            Annotation(
                candidate_id=cand.instance_id,
                decision="approve" if answer == "a" else "reject",
            )
        )
    save_annotations(annotations, args.out)
    print(f"wrote {len(annotations)} annotations to {args.out}")
    return 0


def _cmd_assemble(args) -> int:
    from .templates import load_annotations

    template = load_template(args.template)
    candidates = pipeline.load_candidates(args.candidates)
    annotations = load_annotations(args.annotations)
    assembled = pipeline.assemble_few_shot(template, candidates, annotations)
    save_template(assembled, args.out)
    approved = len(assembled.exemplars)
    print(f"assembled {approved} exemplars into {args.out} (v{assembled.version})")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    schema = _resolve_schema(cfg)
    dataset = _load_corpus(args.corpus, args.splits, schema)
    splits = featurize(dataset, _extractor(cfg))
    if args.method == "zo":
        result = grid_mod.run_zo_condition(
            splits, args.lr, args.batch_size, args.steps, args.seed, args.delta
        )
    elif args.method == "fo_full":
        result = grid_mod.run_fo_condition(splits, args.lr, args.batch_size, args.steps, args.seed)
    elif args.method == "fo_lora":
        result = grid_mod.run_lora_condition(
            splits, args.lr, args.rank, args.batch_size, args.steps, args.seed
        )
    else:
        raise ValueError(f"unknown method {args.method!r}")
    if args.trace_out:
        result.trace.save(args.trace_out)
    print(f"dev_accuracy = {result.dev_accuracy:.4f}")
    print(f"test_accuracy = {result.test_accuracy:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    schema = _resolve_schema(cfg)
    original = _load_corpus(args.original, args.splits, schema)
    rephrased = _load_corpus(args.rephrased, args.splits, schema)
    experiment = _resolve_grid(cfg, args.seed)
    table = grid_mod.run_grid(
        experiment, original, rephrased, task_name=args.task or schema.name,
        extractor=_extractor(cfg),
    )
    table.save(args.out)
    print(grid_mod.emit_report(table, "plain"), end="")
    return 0


def _cmd_report(args) -> int:
    table = grid_mod.ResultTable.load(args.table)
    text = grid_mod.emit_report(table, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zotune")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate the synthetic noisy-phrasing task")
    p.add_argument("--out", required=True)
    p.add_argument("--splits-out", required=True)
    p.add_argument("--rules-out", required=True)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--exclusive-vocab", type=int, default=4)
    p.add_argument("--filler-vocab", type=int, default=40)
    p.add_argument("--distractor-vocab", type=int, default=48)
    p.add_argument("--tokens-per-span", type=int, default=12)
    p.add_argument("--exclusive-rate", type=float, default=0.15)
    p.add_argument("--injection-rate", type=float, default=0.10)
    p.add_argument("--size", type=int, default=1400)
    p.add_argument("--feature-dimension", type=int, default=64)
    p.add_argument("--split-sizes", default=None, help="e.g. 1000,200,200")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("rewrite", help="run the rewrite-judge-gate pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--splits", default=None)
    p.add_argument("--splits-out", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--candidates", default=None)
    p.add_argument("--retries", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_rewrite)

    p = sub.add_parser("judge", help="judge one pair or a pair file")
    p.add_argument("--config", required=True)
    p.add_argument("--pairs", default=None)
    p.add_argument("--original", default=None)
    p.add_argument("--rewritten", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_judge)

    p = sub.add_parser("calibrate", help="judge calibration loop")
    p.add_argument("--config", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--threshold", type=float, default=0.90)
    p.add_argument("--max-rounds", type=int, default=3)
    p.add_argument("--no-input", action="store_true", help="single round, no revision prompt")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("annotate", help="review rewrite candidates in the terminal")
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("assemble", help="insert approved candidates as few-shot exemplars")
    p.add_argument("--template", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_assemble)

    p = sub.add_parser("train", help="train one condition")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--method", required=True, choices=["zo", "fo_full", "fo_lora"])
    p.add_argument("--lr", type=float, required=True)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--trace-out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="run the full six-condition grid")
    p.add_argument("--config", required=True)
    p.add_argument("--original", required=True)
    p.add_argument("--rephrased", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="render a result table")
    p.add_argument("--table", required=True)
    p.add_argument("--format", default="plain", choices=["plain", "delimited"])
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
