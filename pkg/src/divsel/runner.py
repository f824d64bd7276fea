"""End-to-end ``select`` runs: load inputs, select, write artifacts."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

from .config import RunConfig, objective_config
from .embeddings import (
    EmbeddingSet,
    SimilarityKernel,
    cosine_kernel,
    dispersion_stats,
    load_embeddings,
)
from .errors import ConfigError, DataError, InvariantViolation
from .objective import ObjectiveConfig, objective_value
from .prompt import DEFAULT_TEMPLATE, PromptBundle, assemble_prompt, check_template
from .selector import SelectionReport, retrieve_stage1, select_demonstrations

REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
STAGE1_IDS = "stage1_ids.txt"
STAGE2_IDS = "stage2_ids.txt"
PROMPTS = "prompts.jsonl"
PER_QUERY = "stage2_per_query.tsv"
KERNEL = "kernel.bin"


@dataclass
class RunResult:
    report: SelectionReport
    document: dict
    artifacts: dict[str, Path]
    prompts: PromptBundle | None = None


def _read_bytes(path, what) -> bytes:
    if path is None:
        raise ConfigError(f"no {what} path given")
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {what} file {path}: {exc.strerror}") from None


def read_text_table(path) -> dict[str, str]:
    """``id<TAB>text`` lines; the text is kept verbatim apart from the line break."""
    raw = _read_bytes(path, "text table")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from None
    table = {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line:
            continue
        rid, sep, payload = line.partition("\t")
        if not sep:
            raise DataError(f"{path}:{lineno}: expected 'id<TAB>text'")
        if rid in table:
            raise DataError(f"{path}:{lineno}: duplicate id {rid!r}")
        table[rid] = payload
    return table


def load_inputs(cfg: RunConfig) -> tuple[EmbeddingSet, EmbeddingSet, bytes, bytes]:
    corpus_raw = _read_bytes(cfg.corpus_path, "corpus")
    query_raw = _read_bytes(cfg.query_path, "query")
    corpus = load_embeddings(corpus_raw, cfg.format, role="corpus", name=cfg.corpus_path)
    queries = load_embeddings(query_raw, cfg.format, role="query", name=cfg.query_path)
    if len(corpus) == 0:
        raise DataError(f"{cfg.corpus_path}: corpus is empty")
    if len(queries) and queries.dimension != corpus.dimension:
        raise DataError(f"query dimension {queries.dimension} does not match "
                        f"corpus dimension {corpus.dimension}")
    clash = set(corpus.ids) & set(queries.ids)
    if clash:
        raise DataError(f"ids present in both corpus and query set: {sorted(clash)[:5]}")
    return corpus, queries, corpus_raw, query_raw


def _dispersion(kernel, S, cfg):
    return dispersion_stats(kernel, S, cfg.residual_floor) if len(S) >= 2 else None


def _check_invariants(report: SelectionReport, ocfg: ObjectiveConfig) -> None:
    S = report.stage1_indices
    if len(S) > ocfg.k1 or len(set(S)) != len(S):
        raise InvariantViolation(f"Stage 1 returned {len(S)} indices for k1 = {ocfg.k1}")
    if len(S) < ocfg.k1 and not report.warnings:
        raise InvariantViolation("Stage 1 stopped short of k1 without a warning")
    chosen = [report.stage2_indices] + [[e["index"] for e in q["stage2"]]
                                        for q in report.per_query or []]
    for T in chosen:
        if len(T) > ocfg.k or not set(T) <= set(S):
            raise InvariantViolation(f"Stage 2 selection {T} is not a subset of S* of size <= k")


def build_document(cfg: RunConfig, report: SelectionReport, kernel: SimilarityKernel,
                   n_corpus: int, dimension: int, corpus_raw: bytes, query_raw: bytes) -> dict:
    ocfg = objective_config(cfg)
    corpus_idx = list(range(n_corpus))
    S = report.stage1_indices
    stage1_cfg = ocfg.for_stage(1)
    if stage1_cfg.lam == 0 and cfg.method != "random_similar":
        plain = S
    else:
        plain = retrieve_stage1(kernel, corpus_idx, replace(ocfg, lambda_stage1=0.0)).selected
    ids = kernel.ids
    doc = report.to_dict()
    for entry in doc["stage1"]:
        entry["id"] = ids[entry["index"]]
    for entry in doc["stage2"]:
        entry["id"] = ids[entry["index"]]
    for q in doc.get("per_query", []):
        q["query_id"] = ids[q["query"]]
        for entry in q["stage2"]:
            entry["id"] = ids[entry["index"]]
    doc["objective"] = objective_value(kernel, corpus_idx, S, stage1_cfg) if S else None
    doc["dispersion"] = {
        "selected": _dispersion(kernel, S, ocfg),
        "without_diversity": _dispersion(kernel, plain, ocfg),
    }
    doc["inputs"] = {
        "n_corpus": n_corpus,
        "n_query": kernel.size - n_corpus,
        "dimension": dimension,
        "format": cfg.format,
        "corpus_sha256": hashlib.sha256(corpus_raw).hexdigest(),
        "query_sha256": hashlib.sha256(query_raw).hexdigest(),
    }
    doc["config"]["demo_order"] = cfg.demo_order
    doc["config"]["per_query"] = cfg.per_query
    return doc


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return "inf" if math.isinf(x) else f"{x:.6f}"
    return str(x)


def render_text(doc: dict) -> str:
    c = doc["config"]
    lines = [
        "selection report",
        f"corpus: {doc['inputs']['n_corpus']} records, queries: {doc['inputs']['n_query']}, "
        f"dimension: {doc['inputs']['dimension']}",
        f"stage 1: {c['stage1']} (lambda {c['lambda_stage1']:g}, k1 {c['k1']})",
        f"stage 2: {c['stage2']} (lambda {c['lambda_stage2']:g}, k {c['k']})",
        "",
        f"stage 1 selection ({len(doc['stage1'])}):",
    ]
    for rank, e in enumerate(doc["stage1"], 1):
        lines.append(f"  {rank:4d}  {e['id']}  gain={_fmt(e['gain'])}  "
                     f"dC={_fmt(e['coverage_delta'])}  dD={_fmt(e['diversity_delta'])}")
    lines += ["", f"stage 2 selection ({len(doc['stage2'])}):"]
    for rank, e in enumerate(doc["stage2"], 1):
        lines.append(f"  {rank:4d}  {e['id']}  score={_fmt(e['gain'])}")
    for q in doc.get("per_query", []):
        picks = ", ".join(e["id"] for e in q["stage2"])
        lines.append(f"  query {q['query_id']}: {picks}")
    if doc["objective"]:
        o = doc["objective"]
        lines += ["", f"objective: f={_fmt(o['f'])}  C={_fmt(o['coverage'])}  D={_fmt(o['diversity'])}"]
    lines += ["", "dispersion (mean / min pairwise cosine, logdet):"]
    for name, st in doc["dispersion"].items():
        if st is None:
            lines.append(f"  {name}: -")
        else:
            lines.append(f"  {name}: {_fmt(st['mean_pairwise_sim'])} / "
                         f"{_fmt(st['min_pairwise_sim'])}, {_fmt(st['logdet'])}")
    lines += ["", "warnings:"] + [f"  {w}" for w in doc["warnings"] or ["none"]]
    return "\n".join(lines) + "\n"


def build_prompts(cfg: RunConfig, doc: dict, corpus: EmbeddingSet,
                  queries: EmbeddingSet) -> PromptBundle:
    if cfg.template_path:
        try:
            template = Path(cfg.template_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read template {cfg.template_path}: {exc.strerror}") from None
    else:
        template = DEFAULT_TEMPLATE
    check_template(template)
    corpus_text = read_text_table(cfg.corpus_text) if cfg.corpus_text else {}
    query_text = read_text_table(cfg.query_text) if cfg.query_text else {}
    shared = [e["id"] for e in doc["stage2"]]
    per_query = {q["query_id"]: [e["id"] for e in q["stage2"]] for q in doc.get("per_query", [])}
    bundle = PromptBundle()
    for qid in queries.ids:
        demo_ids = per_query.get(qid, shared)
        if cfg.demo_order == "ascending":
            demo_ids = demo_ids[::-1]
        demos = [(corpus_text.get(d, d), corpus.labels[corpus.index_of(d)] or "") for d in demo_ids]
        text = assemble_prompt(template, cfg.task_description, demos, query_text.get(qid, qid))
        bundle.add(qid, demo_ids, text)
    return bundle


def _write(path: Path, data: str | bytes) -> Path:
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.write_bytes(data)
    return path


def run_select(cfg: RunConfig) -> RunResult:
    ocfg = objective_config(cfg)
    if cfg.template_path and cfg.emit_prompt:
        # fail on a broken template before any compute
        try:
            check_template(Path(cfg.template_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read template {cfg.template_path}: {exc.strerror}") from None
    corpus, queries, corpus_raw, query_raw = load_inputs(cfg)
    kernel = cosine_kernel(corpus, queries)
    report = select_demonstrations(kernel, len(corpus), ocfg, method=cfg.method,
                                   seed=cfg.seed, per_query=cfg.per_query)
    _check_invariants(report, ocfg)
    doc = build_document(cfg, report, kernel, len(corpus), corpus.dimension,
                         corpus_raw, query_raw)

    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc.strerror}") from None
    artifacts = {
        "report_json": _write(out / REPORT_JSON, json.dumps(doc, indent=2, sort_keys=True) + "\n"),
        "report_txt": _write(out / REPORT_TXT, render_text(doc)),
        "stage1_ids": _write(out / STAGE1_IDS, "".join(e["id"] + "\n" for e in doc["stage1"])),
        "stage2_ids": _write(out / STAGE2_IDS, "".join(e["id"] + "\n" for e in doc["stage2"])),
    }
    if cfg.per_query:
        rows = [f"{q['query_id']}\t{rank}\t{e['id']}\t{e['gain']!r}\n"
                for q in doc["per_query"] for rank, e in enumerate(q["stage2"], 1)]
        artifacts["per_query"] = _write(out / PER_QUERY, "query_id\trank\tid\tscore\n" + "".join(rows))
    bundle = None
    if cfg.emit_prompt:
        bundle = build_prompts(cfg, doc, corpus, queries)
        lines = [json.dumps(p, ensure_ascii=False, sort_keys=True) + "\n" for p in bundle.prompts]
        artifacts["prompts"] = _write(out / PROMPTS, "".join(lines))
    if cfg.emit_kernel:
        artifacts["kernel"] = _write(out / KERNEL, kernel.to_bytes())
    return RunResult(report, doc, artifacts, bundle)
