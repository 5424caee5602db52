"""Config-driven end-to-end runs and report rendering.

A run goes ingest -> count -> clean -> train -> eval -> align -> sweeps and
leaves its artifacts plus ``manifest.json`` in the output directory. The
manifest records the config hash, the tool version and a sha256 per
artifact. In deterministic mode per-stage wall times go to
``timings.json`` instead, so two identical runs produce byte-identical
manifests.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import io as rio
from .catalog import (
    INSTACART_SCHEMA,
    SyntheticSpec,
    build_session_graph,
    generate_synthetic,
    ingest_transactions,
    random_walk_pairs,
    sequence_pairs,
)
from .confidence import filter_false_associations
from .cooccur import CooccurrenceTable, accumulate_sharded, relatedness, thread_cap
from .embed import EmbeddingPair, SgnsConfig, factorization_weights, train_ldr, train_sgns
from .evalharness import evaluate_classification, evaluate_recommendation, format_mean_std, leave_last_split
from .spectral import alignment_score, left_singular_basis, relatedness_matrix

_logger = logging.getLogger(__name__)

STAGES = ("ingest", "count", "clean", "train", "eval", "align", "sweeps")


class ConfigError(ValueError):
    """Invalid pipeline configuration."""


class StageError(RuntimeError):
    """A stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class ReportError(ValueError):
    """A requested report section is missing from the manifest."""


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass
class DataConfig:
    source: str = "synthetic"
    path: str | None = None
    schema: dict = field(default_factory=lambda: dict(INSTACART_SCHEMA))
    labels: str | None = None
    min_frequency: int = 1
    synthetic: dict = field(default_factory=dict)


@dataclass
class MechanismConfig:
    kind: str = "sequence"
    window: int = 5
    symmetric: bool = False
    walk_length: int = 20
    walks_per_node: int = 10
    p: float = 1.0
    q: float = 1.0
    context_size: int = 5


@dataclass
class FilterConfig:
    alpha: float | None = None
    kind: str = "confidence"
    inversion: str = "lower"


@dataclass
class TrainConfig:
    method: str = "sgns"
    d: int = 32
    k: int = 5
    epochs: int = 5
    lr: float = 0.025
    batch_size: int = 256
    iterations: int = 200
    ldr_method: str = "gd"


@dataclass
class EvalConfig:
    tasks: list = field(default_factory=lambda: ["rec", "cls", "align"])
    k: int = 10
    candidates: str = "full"
    repetitions: int = 1
    alpha_sweep: list = field(default_factory=list)
    dim_sweep: list = field(default_factory=list)


_SECTIONS = {
    "data": DataConfig,
    "mechanism": MechanismConfig,
    "filter": FilterConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


@dataclass
class PipelineConfig:
    output_dir: str
    seed: int
    data: DataConfig = field(default_factory=DataConfig)
    mechanism: MechanismConfig = field(default_factory=MechanismConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    deterministic: bool = True

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        allowed = {"output_dir", "seed", "deterministic", *_SECTIONS}
        unknown = set(raw) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("output_dir", "seed"):
            if key not in raw:
                raise ConfigError(f"missing required key {key!r}")
        kw = {"output_dir": raw["output_dir"], "seed": raw["seed"], "deterministic": raw.get("deterministic", True)}
        for name, typ in _SECTIONS.items():
            sub = raw.get(name, {})
            names = {f.name for f in dataclasses.fields(typ)}
            bad = set(sub) - names
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            kw[name] = typ(**sub)
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def identity(self) -> dict:
        """Everything that affects results; the output location does not."""
        d = self.to_dict()
        d.pop("output_dir")
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.identity(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        d = self.data
        if d.source == "csv":
            if not d.path or not Path(d.path).is_file():
                raise ConfigError(f"data path not found: {d.path}")
        elif d.source == "synthetic":
            names = {f.name for f in dataclasses.fields(SyntheticSpec)}
            bad = set(d.synthetic) - names
            if bad:
                raise ConfigError(f"unknown synthetic keys: {sorted(bad)}")
            try:
                self.synthetic_spec().validate()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid synthetic spec: {exc}") from None
        else:
            raise ConfigError(f"unknown data source {d.source!r}")
        if d.labels is not None and not Path(d.labels).is_file():
            raise ConfigError(f"label file not found: {d.labels}")
        if "cls" in self.eval.tasks and d.source == "csv" and d.labels is None:
            raise ConfigError("classification needs a label file for csv data")
        m = self.mechanism
        if m.kind not in ("sequence", "graph"):
            raise ConfigError(f"unknown mechanism {m.kind!r}")
        if min(m.window, m.walk_length, m.walks_per_node, m.context_size) < 1 or m.p <= 0 or m.q <= 0:
            raise ConfigError("mechanism parameters must be positive")
        f = self.filter
        for a in ([f.alpha] if f.alpha is not None else []) + list(self.eval.alpha_sweep):
            if not 0 < a < 1:
                raise ConfigError("filter alpha must lie in (0, 1)")
        if f.kind not in ("confidence", "significance") or f.inversion not in ("lower", "upper"):
            raise ConfigError("unknown filter kind or inversion")
        t = self.train
        if t.method not in ("sgns", "ldr"):
            raise ConfigError(f"unknown training method {t.method!r}")
        try:
            self.sgns_config(0).validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if t.ldr_method not in ("gd", "als") or t.iterations < 1:
            raise ConfigError("invalid least-squares settings")
        e = self.eval
        bad = set(e.tasks) - {"rec", "cls", "align"}
        if bad:
            raise ConfigError(f"unknown eval tasks: {sorted(bad)}")
        if e.candidates not in ("full", "sampled") or e.k < 1 or e.repetitions < 1:
            raise ConfigError("invalid eval settings")
        if any(int(x) < 1 for x in e.dim_sweep):
            raise ConfigError("dimensions must be positive")

    def synthetic_spec(self) -> SyntheticSpec:
        raw = dict(self.data.synthetic)
        if "independent_pairs" in raw:
            raw["independent_pairs"] = [tuple(p) for p in raw["independent_pairs"]]
        raw.setdefault("seed", self.seed)
        return SyntheticSpec(**raw)

    def sgns_config(self, seed: int, d: int | None = None, epochs: int | None = None) -> SgnsConfig:
        t = self.train
        return SgnsConfig(
            d=t.d if d is None else d,
            k=t.k,
            epochs=t.epochs if epochs is None else epochs,
            lr=t.lr,
            batch_size=t.batch_size,
            seed=seed,
            workers=1 if self.deterministic else thread_cap(),
        )


def substream(seed: int, name: str, index: int = 0) -> int:
    """Seed for the named sub-stream ``name`` (stable across platforms)."""
    ss = np.random.SeedSequence([seed, zlib.crc32(name.encode()), index])
    return int(ss.generate_state(1)[0])


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    config: dict
    artifacts: dict = field(default_factory=dict)
    wall_time: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)
    completed: list = field(default_factory=list)
    deterministic: bool = True

    def to_json(self, include_timing: bool | None = None) -> dict:
        include = (not self.deterministic) if include_timing is None else include_timing
        out = {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "config": self.config,
            "artifacts": dict(sorted(self.artifacts.items())),
            "sections": self.sections,
            "completed": list(self.completed),
            "deterministic": self.deterministic,
        }
        if include:
            out["wall_time"] = self.wall_time
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, raw: dict) -> "RunManifest":
        return cls(
            raw["config_hash"],
            raw["tool_version"],
            raw["config"],
            raw.get("artifacts", {}),
            raw.get("wall_time", {}),
            raw.get("sections", {}),
            raw.get("completed", []),
            raw.get("deterministic", True),
        )

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_json(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _pairs_for(log, cfg: PipelineConfig):
    m = cfg.mechanism
    if m.kind == "sequence":
        return sequence_pairs(log, m.window, m.symmetric)
    graph = build_session_graph(log)
    return random_walk_pairs(
        graph, m.walk_length, m.walks_per_node, m.p, m.q, m.context_size, substream(cfg.seed, "walks")
    )


def _fit(table: CooccurrenceTable, cfg: PipelineConfig, seed: int, d: int | None = None, epochs: int | None = None):
    t = cfg.train
    if t.method == "sgns":
        return train_sgns(table, cfg.sgns_config(seed, d, epochs)).pair
    est = relatedness(table, clip_negative=True)
    w = factorization_weights(table, t.k)
    return train_ldr(est, w, t.d if d is None else d, t.iterations, seed, t.ldr_method).pair


def _summary(reports: list, names) -> dict:
    out = {}
    for name in names:
        v = np.array([getattr(r, name) for r in reports], dtype=float)
        out[name] = {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if len(v) > 1 else None}
    out["repetitions"] = len(reports)
    return out


class _Run:
    def __init__(self, cfg: PipelineConfig, resume: bool):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(cfg.config_hash(), __version__, cfg.identity(), deterministic=cfg.deterministic)
        self.previous = None
        path = self.out / "manifest.json"
        if resume and path.exists():
            prev = RunManifest.load(path)
            if prev.config_hash == self.manifest.config_hash:
                self.previous = prev
        self.state: dict = {}

    def _reusable(self, stage: str, files: list[str]) -> bool:
        prev = self.previous
        if prev is None or stage not in prev.completed:
            return False
        for f in files:
            p = self.out / f
            if not p.exists() or prev.artifacts.get(f) != sha256_file(p):
                return False
        return True

    def _record(self, *files: str) -> None:
        for f in files:
            self.manifest.artifacts[f] = sha256_file(self.out / f)

    # each stage returns the artifact names it owns and fills self.state

    def ingest(self, reuse: bool):
        cfg, out = self.cfg, self.out
        files = _STAGE_FILES["ingest"](cfg)
        if reuse:
            self.state["vocab"] = rio.read_vocab(out / "vocab.tsv")
            self.state["log"] = rio.read_log(out / "log.csv")
            if "labels.csv" in files:
                self.state["labels"] = rio.read_labels(out / "labels.csv", self.state["vocab"])
            return files
        labels = None
        if cfg.data.source == "synthetic":
            corpus = generate_synthetic(cfg.synthetic_spec())
            vocab, log, labels = corpus.vocab, corpus.log, corpus.classes
        else:
            vocab, log = ingest_transactions(cfg.data.path, cfg.data.schema, cfg.data.min_frequency)
        if cfg.data.labels is not None:
            labels = rio.read_labels(cfg.data.labels, vocab)
        rio.write_vocab(vocab, out / "vocab.tsv")
        rio.write_log(log, out / "log.csv")
        if "labels.csv" in files:
            rio.write_labels(labels, vocab, out / "labels.csv")
        self.state.update(vocab=vocab, log=log, labels=labels)
        return files

    def count(self, reuse: bool):
        files = _STAGE_FILES["count"](self.cfg)
        split = leave_last_split(self.state["log"])
        self.state["split"] = split
        if reuse:
            self.state["table"] = rio.read_table(self.out / "table.rlnc")
            return files
        stream = _pairs_for(split.train, self.cfg)
        table = accumulate_sharded(stream, len(self.state["vocab"]))
        if table.n == 0:
            raise ValueError("no training pairs after the leave-last split; sessions need at least three items")
        rio.write_table(table, self.out / "table.rlnc")
        self.state["table"] = table
        return files

    def clean(self, reuse: bool):
        f = self.cfg.filter
        if f.alpha is None:
            self.state["clean"] = self.state["table"]
            return []
        files = ["table.clean.rlnc", "drops.json"]
        if reuse:
            self.state["clean"] = rio.read_table(self.out / "table.clean.rlnc")
            return files
        clean, reports = filter_false_associations(self.state["table"], f.alpha, f.kind, f.inversion)
        rio.write_table(clean, self.out / "table.clean.rlnc")
        _dump_json([r.to_json() for r in reports], self.out / "drops.json")
        self.state["clean"] = clean
        self.manifest.sections["clean"] = {
            "alpha": f.alpha,
            "pairs_before": int(self.state["table"].pair_counts.nnz),
            "pairs_after": int(clean.pair_counts.nnz),
        }
        return files

    def train(self, reuse: bool):
        reps = self.cfg.eval.repetitions
        files = _train_files(self.cfg)
        if reuse:
            self.state["pairs"] = [
                EmbeddingPair(rio.read_embeddings(self.out / f"emb.{r}.rlne"), rio.read_embeddings(self.out / f"emb_ctx.{r}.rlne"))
                for r in range(reps)
            ]
            return files
        pairs = []
        for r in range(reps):
            pair = _fit(self.state["clean"], self.cfg, substream(self.cfg.seed, "train", r))
            rio.write_embeddings(pair.Z, self.out / f"emb.{r}.rlne")
            rio.write_embeddings(pair.Zt, self.out / f"emb_ctx.{r}.rlne")
            # downstream stages see exactly what was persisted
            pairs.append(EmbeddingPair(rio.read_embeddings(self.out / f"emb.{r}.rlne"), rio.read_embeddings(self.out / f"emb_ctx.{r}.rlne")))
        rio.write_embeddings_tsv(pairs[0].Z, self.state["vocab"], self.out / "emb.tsv")
        self.state["pairs"] = pairs
        return files

    def eval(self, reuse: bool):
        cfg, e = self.cfg, self.cfg.eval
        if reuse:
            return []
        pairs = self.state["pairs"]
        if "rec" in e.tasks:
            reps = [
                evaluate_recommendation(self.state["split"], p, e.k, e.candidates, seed=substream(cfg.seed, "eval-rec", r))
                for r, p in enumerate(pairs)
            ]
            self.manifest.sections["rec"] = _summary(reps, ("auc", "ndcg_full", "recall_at_k", "ndcg_at_k"))
        if "cls" in e.tasks:
            labels = self.state["labels"]
            keep = labels >= 0
            reps = [
                evaluate_classification(p.Z[keep], labels[keep], seed=substream(cfg.seed, "eval-cls", r))
                for r, p in enumerate(pairs)
            ]
            self.manifest.sections["cls"] = _summary(reps, ("micro_f1", "macro_f1"))
        return []

    def align(self, reuse: bool):
        if "align" not in self.cfg.eval.tasks:
            return []
        files = ["align.json"]
        if reuse:
            return files
        X = relatedness_matrix(relatedness(self.state["clean"]))
        Z = self.state["pairs"][0].Z
        r = min(Z.shape[1], *X.shape)
        bz, bx = left_singular_basis(Z, r, "Z"), left_singular_basis(X, r, "X")
        report = {
            "rank": r,
            "score": alignment_score(bz, bx),
            "singular_values_Z": bz.singular_values.tolist(),
            "singular_values_X": bx.singular_values.tolist(),
        }
        _dump_json(report, self.out / "align.json")
        self.manifest.sections["align"] = {"rank": r, "score": report["score"]}
        return files

    def sweeps(self, reuse: bool):
        cfg, e = self.cfg, self.cfg.eval
        if reuse or not (e.alpha_sweep or e.dim_sweep):
            return []
        table, split = self.state["table"], self.state["split"]
        seed = substream(cfg.seed, "sweep")
        if e.alpha_sweep:
            base = _fit(table, cfg, seed)
            rows = [{"alpha": 0.0, "drop_rate": 0.0, "pairs": int(table.pair_counts.nnz),
                     "auc": evaluate_recommendation(split, base, e.k).auc}]
            planted = self._planted_pairs()
            for a in sorted(e.alpha_sweep):
                clean, reports = filter_false_associations(table, a, cfg.filter.kind, cfg.filter.inversion)
                # same number of updates as the unfiltered fit
                epochs = max(1, int(round(cfg.train.epochs * table.n / max(clean.n, 1))))
                pair = _fit(clean, cfg, seed, epochs=epochs)
                row = {
                    "alpha": a,
                    "drop_rate": 1.0 - clean.pair_counts.nnz / max(table.pair_counts.nnz, 1),
                    "pairs": int(clean.pair_counts.nnz),
                    "auc": evaluate_recommendation(split, pair, e.k).auc,
                }
                if planted:
                    dropped = {(r.i, r.j) for r in reports}
                    present = [p for p in planted if table.count(*p) > 0]
                    row["planted_drop_rate"] = float(np.mean([p in dropped for p in present])) if present else None
                rows.append(row)
            self.manifest.sections["alpha_sweep"] = rows
        if e.dim_sweep:
            X = relatedness_matrix(relatedness(self.state["clean"]))
            labels = self.state.get("labels")
            rows = []
            for d in sorted(int(x) for x in e.dim_sweep):
                pair = _fit(self.state["clean"], cfg, seed, d=d)
                r = min(d, *X.shape)
                row = {"d": d, "score": alignment_score(left_singular_basis(pair.Z, r), left_singular_basis(X, r, "X"))}
                if labels is not None:
                    keep = labels >= 0
                    rep = evaluate_classification(pair.Z[keep], labels[keep], seed=seed)
                    row.update(micro_f1=rep.micro_f1, macro_f1=rep.macro_f1)
                rows.append(row)
            self.manifest.sections["alignment_vs_dim"] = rows
        return []

    def _planted_pairs(self):
        if self.cfg.data.source != "synthetic":
            return []
        out = []
        for i, j in self.cfg.data.synthetic.get("independent_pairs", []):
            out += [(int(i), int(j)), (int(j), int(i))]
        return out

    def execute(self) -> RunManifest:
        for stage in STAGES:
            start = time.perf_counter()
            owned = _STAGE_FILES.get(stage, lambda c: [])(self.cfg)
            reuse = self._reusable(stage, owned)
            if reuse and stage in ("clean", "eval", "align", "sweeps"):
                for key in _STAGE_SECTIONS[stage]:
                    if key in self.previous.sections:
                        self.manifest.sections[key] = self.previous.sections[key]
            try:
                files = getattr(self, stage)(reuse)
            except Exception as exc:
                self._write()
                raise StageError(stage, exc) from exc
            self._record(*files)
            self.manifest.completed.append(stage)
            self.manifest.wall_time[stage] = time.perf_counter() - start
            _logger.info("stage %s done in %.2fs%s", stage, self.manifest.wall_time[stage], " (reused)" if reuse else "")
            self._write()
        return self.manifest

    def _write(self):
        (self.out / "manifest.json").write_text(self.manifest.dumps())
        if self.cfg.deterministic:
            _dump_json(self.manifest.wall_time, self.out / "timings.json")


def _has_labels(cfg) -> bool:
    return cfg.data.source == "synthetic" or cfg.data.labels is not None


def _train_files(cfg):
    reps = cfg.eval.repetitions
    return [f"emb.{r}.rlne" for r in range(reps)] + [f"emb_ctx.{r}.rlne" for r in range(reps)] + ["emb.tsv"]


_STAGE_FILES = {
    "ingest": lambda c: ["vocab.tsv", "log.csv"] + (["labels.csv"] if _has_labels(c) else []),
    "count": lambda c: ["table.rlnc"],
    "clean": lambda c: [] if c.filter.alpha is None else ["table.clean.rlnc", "drops.json"],
    "train": _train_files,
    "align": lambda c: ["align.json"] if "align" in c.eval.tasks else [],
}

_STAGE_SECTIONS = {
    "clean": ("clean",),
    "eval": ("rec", "cls"),
    "align": ("align",),
    "sweeps": ("alpha_sweep", "alignment_vs_dim"),
}


def run_pipeline(config: PipelineConfig, resume: bool = False) -> RunManifest:
    """Run every stage in order; with ``resume`` reuse stages whose artifacts still match the manifest."""
    config.validate()
    return _Run(config, resume).execute()


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

METRIC_SECTIONS = ("rec", "cls")
REPORT_FORMATS = ("json", "csv", "plot")


def metric_rows(manifest: RunManifest, sections=None) -> list[dict]:
    """One row per (section, metric) with mean, std (None for single runs) and a formatted cell."""
    wanted = [s for s in METRIC_SECTIONS if s in manifest.sections] if sections is None else sections
    rows = []
    for sec in wanted:
        if sec not in manifest.sections:
            raise ReportError(f"missing section {sec!r}")
        block = manifest.sections[sec]
        for name, v in block.items():
            if name == "repetitions":
                continue
            std = v["std"]
            cell = format_mean_std(v["mean"], std) if std is not None else f"{v['mean']:.3f}"
            rows.append({"section": sec, "metric": name, "mean": v["mean"], "std": std, "formatted": cell})
    return rows


def emit_report(manifest: RunManifest | str | Path, fmt: str, out_dir, sections=None) -> list[Path]:
    """Render metric tables and sweep tables as json, csv or plots.

    The std column is dropped when every metric comes from a single run.
    """
    if not isinstance(manifest, RunManifest):
        manifest = RunManifest.load(manifest)
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metric_secs = None if sections is None else [s for s in sections if s in METRIC_SECTIONS]
    sweep_secs = [s for s in ("alpha_sweep", "alignment_vs_dim") if sections is None or s in sections]
    for s in sweep_secs:
        if s not in manifest.sections and sections is not None:
            raise ReportError(f"missing section {s!r}")
    sweep_secs = [s for s in sweep_secs if s in manifest.sections]
    rows = metric_rows(manifest, metric_secs)
    single = all(r["std"] is None for r in rows)
    if single:
        rows = [{k: v for k, v in r.items() if k != "std"} for r in rows]
    if not rows and not sweep_secs:
        raise ReportError("manifest has no reportable sections")

    written = []
    if fmt == "json":
        doc = {"metrics": rows}
        for s in sweep_secs:
            doc[s] = manifest.sections[s]
        path = out / "report.json"
        _dump_json(doc, path)
        written.append(path)
    elif fmt == "csv":
        path = out / "metrics.csv"
        _write_csv(rows, path, ["section", "metric", "mean"] + ([] if single else ["std"]) + ["formatted"])
        written.append(path)
        for s in sweep_secs:
            table = manifest.sections[s]
            cols = list(dict.fromkeys(k for row in table for k in row))
            path = out / f"{s}.csv"
            _write_csv(table, path, cols)
            written.append(path)
    else:
        if not sweep_secs:
            raise ReportError("plots need an alpha_sweep or alignment_vs_dim section")
        written += _plots(manifest, sweep_secs, out)
    return written


def _write_csv(rows, path, cols) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else ("" if v is None else v)) for k, v in row.items()})


def _plots(manifest: RunManifest, sections, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    if "alpha_sweep" in sections:
        rows = manifest.sections["alpha_sweep"]
        a = [r["alpha"] for r in rows]
        fig, ax = plt.subplots(1, 2, figsize=(8, 3))
        ax[0].plot(a, [r["drop_rate"] for r in rows], marker="o", label="all pairs")
        if any("planted_drop_rate" in r for r in rows[1:]):
            ax[0].plot(a[1:], [r.get("planted_drop_rate") for r in rows[1:]], marker="s", label="planted independent")
        ax[0].set_xlabel("alpha")
        ax[0].set_ylabel("drop rate")
        ax[0].legend()
        ax[1].plot(a, [r["auc"] for r in rows], marker="o")
        ax[1].set_xlabel("alpha")
        ax[1].set_ylabel("AUC")
        fig.tight_layout()
        path = out / "alpha_sweep.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    if "alignment_vs_dim" in sections:
        rows = manifest.sections["alignment_vs_dim"]
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot([r["d"] for r in rows], [r["score"] for r in rows], marker="o", label="S")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("d")
        ax.set_ylabel("alignment score")
        if all("micro_f1" in r for r in rows):
            ax2 = ax.twinx()
            ax2.plot([r["d"] for r in rows], [r["micro_f1"] for r in rows], marker="s", color="C1")
            ax2.set_ylabel("micro-F1")
        fig.tight_layout()
        path = out / "alignment_vs_dim.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written

