"""Seeded episodic evaluation with paired comparisons and reporting.

Every cell of an experiment plan evaluates the same episode stream (seeds
``base_seed + i``), so accuracy differences between configurations are paired
rather than resampled. Reports carry a config fingerprint, per-episode flags
and a normal-approximation 95% confidence interval, and are written
atomically. Published full-scale accuracies are recorded alongside measured
desk-scale numbers, clearly labeled apart.
"""

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import fsl_backbones
from .augmenters import AugmenterSpec, augment_episode
from .data_pipeline import DatasetHandle, sample_episode
from .errors import ConfigError
from .rectifier import RectifierConfig, predict_from_representations, rectify_many
from .seeding import rng_for
from .selector import kl_oracle_batch, sample_pool, select_neighbours

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# published full-scale reference accuracies (for side-by-side reporting only)
# ---------------------------------------------------------------------------

# main comparison, 5-way-1-shot: (method, encoder, metric, dataset) -> %
REFERENCE_MAIN: dict[tuple[str, str, str, str], float] = {
    ("one_shot", "conv4", "cos", "traffic"): 50.25,
    ("one_shot", "conv4", "cos", "animals"): 40.40,
    ("one_shot", "conv4", "euc", "traffic"): 51.00,
    ("one_shot", "conv4", "euc", "animals"): 41.27,
    ("one_shot", "res12", "cos", "traffic"): 64.24,
    ("one_shot", "res12", "cos", "animals"): 61.07,
    ("one_shot", "res12", "euc", "traffic"): 65.95,
    ("one_shot", "res12", "euc", "animals"): 62.87,
    ("mixup", "conv4", "cos", "traffic"): 51.24,
    ("mixup", "conv4", "cos", "animals"): 34.33,
    ("mixup", "conv4", "euc", "traffic"): 51.93,
    ("mixup", "conv4", "euc", "animals"): 35.01,
    ("mixup", "res12", "cos", "traffic"): 65.55,
    ("mixup", "res12", "euc", "traffic"): 66.81,
    ("crop_rotate", "conv4", "cos", "traffic"): 51.76,
    ("crop_rotate", "conv4", "cos", "animals"): 36.07,
    ("crop_rotate", "conv4", "euc", "traffic"): 55.89,
    ("crop_rotate", "conv4", "euc", "animals"): 35.94,
    ("crop_rotate", "res12", "cos", "traffic"): 61.27,
    ("crop_rotate", "res12", "cos", "animals"): 55.92,
    ("crop_rotate", "res12", "euc", "traffic"): 61.50,
    ("crop_rotate", "res12", "euc", "animals"): 55.47,
    ("affine", "conv4", "cos", "traffic"): 51.49,
    ("affine", "conv4", "cos", "animals"): 38.01,
    ("affine", "conv4", "euc", "traffic"): 52.20,
    ("affine", "conv4", "euc", "animals"): 39.43,
    ("affine", "res12", "cos", "traffic"): 64.87,
    ("affine", "res12", "cos", "animals"): 55.58,
    ("affine", "res12", "euc", "traffic"): 64.58,
    ("affine", "res12", "euc", "animals"): 55.99,
    ("color_jitter", "conv4", "cos", "traffic"): 42.97,
    ("color_jitter", "conv4", "cos", "animals"): 36.48,
    ("color_jitter", "conv4", "euc", "traffic"): 43.28,
    ("color_jitter", "conv4", "euc", "animals"): 36.50,
    ("color_jitter", "res12", "cos", "traffic"): 56.39,
    ("color_jitter", "res12", "cos", "animals"): 52.40,
    ("color_jitter", "res12", "euc", "traffic"): 55.89,
    ("color_jitter", "res12", "euc", "animals"): 53.11,
    ("rectifier", "conv4", "cos", "traffic"): 52.85,
    ("rectifier", "conv4", "cos", "animals"): 42.26,
    ("rectifier", "conv4", "euc", "traffic"): 53.33,
    ("rectifier", "conv4", "euc", "animals"): 43.41,
    ("rectifier", "res12", "cos", "traffic"): 66.38,
    ("rectifier", "res12", "cos", "animals"): 62.96,
    ("rectifier", "res12", "euc", "traffic"): 67.85,
    ("rectifier", "res12", "euc", "animals"): 64.50,
}

# copies grid (query copies, support copies) -> (%, ±)
REFERENCE_COPIES_GRID: dict[tuple[int, int], tuple[float, float]] = {
    (0, 0): (50.04, 0.87), (0, 1): (51.83, 0.86), (0, 2): (51.94, 0.94), (0, 3): (52.26, 0.97),
    (1, 0): (65.73, 0.87), (1, 1): (94.80, 0.63), (1, 2): (93.46, 0.69), (1, 3): (91.92, 0.75),
    (2, 0): (70.80, 0.94), (2, 1): (96.80, 0.50), (2, 2): (99.74, 0.14), (2, 3): (99.54, 0.19),
    (3, 0): (72.82, 1.16), (3, 1): (96.84, 0.48), (3, 2): (99.70, 0.15), (3, 3): (99.98, 0.14),
}

# component ablation (selector, translator, crop_rotate) -> %
REFERENCE_ABLATION: dict[tuple[bool, bool, bool], float] = {
    (True, True, False): 52.80,
    (False, True, False): 50.55,
    (True, False, True): 51.75,
    (True, False, False): 50.25,
    (False, False, False): 49.90,
    (True, True, True): 53.40,
}


# ---------------------------------------------------------------------------
# report types
# ---------------------------------------------------------------------------

def confidence_interval(correct_flags) -> float:
    """95% half-width in percentage points: 1.96 * sample std / sqrt(N)."""
    flags = np.asarray(list(correct_flags), dtype=np.float64)
    if flags.size == 0:
        raise ValueError("confidence interval needs at least one flag")
    if flags.size == 1:
        return 0.0
    return float(1.96 * flags.std(ddof=1) / np.sqrt(flags.size) * 100.0)


@dataclass
class EvalReport:
    """Accuracy of one configuration over a seeded episode stream."""

    fingerprint: str
    n_episodes: int
    accuracy: float
    ci95: float
    per_episode: list[tuple[int, bool]] | None = None
    diagnostics: dict | None = None
    config: dict | None = None

    def recomputed_accuracy(self) -> float:
        flags = [bool(c) for _, c in self.per_episode]
        return float(np.mean(flags) * 100.0)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "fingerprint": self.fingerprint,
            "n_episodes": self.n_episodes,
            "accuracy": self.accuracy,
            "ci95": self.ci95,
            "per_episode": [
                {"episode_seed": int(s), "correct": bool(c)} for s, c in self.per_episode
            ] if self.per_episode is not None else None,
            "diagnostics": self.diagnostics,
            "config": self.config,
        }

    def save(self, path: str | Path) -> Path:
        return atomic_write_json(self.to_dict(), path)

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        with open(path) as fh:
            d = json.load(fh)
        per_episode = None
        if d.get("per_episode") is not None:
            per_episode = [(e["episode_seed"], e["correct"]) for e in d["per_episode"]]
        return cls(
            fingerprint=d["fingerprint"],
            n_episodes=d["n_episodes"],
            accuracy=d["accuracy"],
            ci95=d["ci95"],
            per_episode=per_episode,
            diagnostics=d.get("diagnostics"),
            config=d.get("config"),
        )


def atomic_write_json(payload: dict, path: str | Path) -> Path:
    """Write via a temp file and rename so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# ---------------------------------------------------------------------------
# experiment plans
# ---------------------------------------------------------------------------

@dataclass
class PlanCell:
    """One fully specified evaluation configuration."""

    name: str
    support_spec: dict = field(default_factory=lambda: {"kind": "one_shot", "copies": 0})
    query_spec: dict = field(default_factory=lambda: {"kind": "one_shot", "copies": 0})
    predictor: str = "model"          # model|random|oracle
    n_episodes: int = 5000
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 1
    base_seed: int = 0
    paper_reference: float | None = None
    measured: bool = True             # reference-only rows set this False

    def settings_dict(self) -> dict:
        d = asdict(self)
        d.pop("paper_reference")
        d.pop("measured")
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.settings_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ExperimentPlan:
    name: str
    cells: list[PlanCell]

    def __post_init__(self):
        names = [c.name for c in self.cells]
        if len(set(names)) != len(names):
            raise ConfigError("plan cell names must be unique")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        cells = [PlanCell(**c) for c in d["cells"]]
        return cls(name=d.get("name", "plan"), cells=cells)


@dataclass
class Components:
    """Frozen pieces an evaluation runs against."""

    test_handle: DatasetHandle
    train_handle: DatasetHandle | None = None
    model: object | None = None
    translator: object | None = None
    selector: object | None = None
    caches: dict = field(default_factory=lambda: {"recon_img": {}, "base_emb": {}})


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def episode_stream(dataset: DatasetHandle, cell: PlanCell):
    """The paired stream: episode i is seeded base_seed + i for every cell."""
    for i in range(cell.n_episodes):
        yield sample_episode(
            dataset, cell.n_way, cell.k_shot, cell.n_query, cell.base_seed + i
        )


def _predict_cell(cell: PlanCell, episode, components: Components) -> list[str]:
    if cell.predictor == "oracle":
        return [q.class_id for q in episode.queries]
    if cell.predictor == "random":
        rng = rng_for(cell.base_seed, "random-predictor", episode.episode_seed)
        classes = episode.support_classes
        return [classes[int(rng.integers(len(classes)))] for _ in episode.queries]
    if cell.predictor != "model":
        raise ConfigError(f"unknown predictor: {cell.predictor}")
    rep = augment_episode(
        episode,
        AugmenterSpec.from_dict(cell.support_spec),
        components.model,
        components.translator,
        components.selector,
        components.train_handle,
        query_spec=AugmenterSpec.from_dict(cell.query_spec),
        caches=components.caches,
    )
    return predict_from_representations(episode, rep.support, rep.queries, components.model)


def run_eval(
    cell: PlanCell,
    components: Components,
    out_path: str | Path | None = None,
    keep_flags: bool = True,
) -> EvalReport:
    """Evaluate one cell over its seeded episode stream.

    With multiple queries per episode each query contributes one correctness
    flag (the episode seed repeats). Accuracy is exactly the flag mean.
    """
    if cell.predictor == "model":
        for component in ("model", "translator", "selector", "train_handle"):
            if getattr(components, component) is None:
                raise ConfigError(f"cell {cell.name} needs components.{component}")
    flags: list[tuple[int, bool]] = []
    for episode in episode_stream(components.test_handle, cell):
        predictions = _predict_cell(cell, episode, components)
        for pred, q in zip(predictions, episode.queries):
            flags.append((episode.episode_seed, pred == q.class_id))

    correct = [c for _, c in flags]
    report = EvalReport(
        fingerprint=cell.fingerprint(),
        n_episodes=cell.n_episodes,
        accuracy=float(np.mean(correct) * 100.0),
        ci95=confidence_interval(correct),
        per_episode=flags if keep_flags else None,
        config=cell.settings_dict(),
    )
    if out_path is not None:
        report.save(out_path)
    return report


def run_table(
    plan: ExperimentPlan,
    components: Components,
    out_dir: str | Path,
    keep_flags: bool = False,
) -> dict[str, EvalReport | None]:
    """Run every measured cell of a plan with paired seeds and render the grid.

    Completed cells persist even when later cells fail; failed cells are
    marked in the rendered table. Reference-only cells carry the published
    number without a measurement.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports: dict[str, EvalReport | None] = {}
    status: dict[str, str] = {}
    for cell in plan.cells:
        if not cell.measured:
            reports[cell.name] = None
            status[cell.name] = "reference_only"
            continue
        try:
            report = run_eval(
                cell, components,
                out_path=out_dir / "reports" / f"{cell.name}.json",
                keep_flags=keep_flags,
            )
            reports[cell.name] = report
            status[cell.name] = "ok"
        except Exception:
            logger.exception("cell %s failed", cell.name)
            reports[cell.name] = None
            status[cell.name] = "failed"

    rows = []
    for cell in plan.cells:
        report = reports[cell.name]
        rows.append(
            {
                "cell": cell.name,
                "status": status[cell.name],
                "measured": report.accuracy if report else None,
                "ci95": report.ci95 if report else None,
                "paper_reference": cell.paper_reference,
                "n_episodes": cell.n_episodes if cell.measured else None,
                "fingerprint": cell.fingerprint(),
            }
        )
    atomic_write_json({"plan": plan.name, "rows": rows}, out_dir / f"{plan.name}.json")
    _write_csv(rows, out_dir / f"{plan.name}.csv")
    _write_markdown(plan.name, rows, out_dir / f"{plan.name}.md")
    return reports


_TABLE_FIELDS = ["cell", "status", "measured", "ci95", "paper_reference", "n_episodes", "fingerprint"]


def _write_csv(rows: list[dict], path: Path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_TABLE_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def _format_cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def _write_markdown(title: str, rows: list[dict], path: Path) -> None:
    lines = [f"# {title}", ""]
    lines.append("| " + " | ".join(_TABLE_FIELDS) + " |")
    lines.append("|" + "|".join(["---"] * len(_TABLE_FIELDS)) + "|")
    for row in rows:
        lines.append("| " + " | ".join(_format_cell(row[f]) for f in _TABLE_FIELDS) + " |")
    path.write_text("\n".join(lines) + "\n")


def render_report_dir(in_dir: str | Path, fmt: str = "md") -> str:
    """Re-render the per-cell reports of a finished run in one table."""
    in_dir = Path(in_dir)
    report_files = sorted(in_dir.glob("*.json"))
    if not report_files:
        raise ConfigError(f"no reports under {in_dir}")
    rows = []
    for f in report_files:
        r = EvalReport.load(f)
        rows.append(
            {
                "cell": f.stem,
                "status": "ok",
                "measured": r.accuracy,
                "ci95": r.ci95,
                "paper_reference": None,
                "n_episodes": r.n_episodes,
                "fingerprint": r.fingerprint,
            }
        )
    if fmt == "json":
        return json.dumps({"rows": rows}, indent=2)
    if fmt == "csv":
        lines = [",".join(_TABLE_FIELDS)]
        for row in rows:
            lines.append(",".join(_format_cell(row[f]) for f in _TABLE_FIELDS))
        return "\n".join(lines)
    if fmt == "md":
        lines = ["| " + " | ".join(_TABLE_FIELDS) + " |"]
        lines.append("|" + "|".join(["---"] * len(_TABLE_FIELDS)) + "|")
        for row in rows:
            lines.append("| " + " | ".join(_format_cell(row[f]) for f in _TABLE_FIELDS) + " |")
        return "\n".join(lines)
    raise ConfigError(f"unknown report format: {fmt}")


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def centroid_pull_report(
    model,
    rectifier_config: RectifierConfig,
    test_handle: DatasetHandle,
    translator,
    selector,
    train_handle: DatasetHandle,
    n_points: int = 500,
    k: int = 5,
    seed: int = 0,
) -> dict:
    """Distance to the class centroid before and after rectification.

    Centroids are the mean raw embedding of each class's available samples.
    Points are counted as moved closer only on a strict decrease, so an
    identity rectifier reports 0%.
    """
    config = RectifierConfig(
        mode=rectifier_config.mode,
        k=k,
        weighting=rectifier_config.weighting,
        beta=rectifier_config.beta,
        pool_size=max(rectifier_config.pool_size, k),
        selector_mode=rectifier_config.selector_mode if k > 0 else "none",
    )
    all_samples = test_handle.all_samples()
    raw_emb = {}
    batch = 64
    for start in range(0, len(all_samples), batch):
        chunk = all_samples[start:start + batch]
        vecs = _embed_images(chunk, model)
        for s, v in zip(chunk, vecs):
            raw_emb[s.source_id] = v

    centroids = {}
    flagged = []
    for class_id in test_handle.classes:
        ids = test_handle.index[class_id]
        if len(ids) == 1:
            flagged.append(class_id)
        centroids[class_id] = np.mean([raw_emb[sid] for sid in ids], axis=0)

    rng = rng_for(seed, "centroid-pull")
    idx = rng.choice(len(all_samples), size=min(n_points, len(all_samples)), replace=False)
    points = [all_samples[i] for i in idx]

    closer = 0
    before_d, after_d = [], []
    for start in range(0, len(points), batch):
        chunk = points[start:start + batch]
        reps = rectify_many(
            chunk, config, model, selector, translator, train_handle,
            seed=seed,
        )
        for z, rep in zip(chunk, reps):
            c = centroids[z.class_id]
            b = float(np.linalg.norm(raw_emb[z.source_id] - c))
            a = float(np.linalg.norm(rep.embedding - c))
            before_d.append(b)
            after_d.append(a)
            if a < b:
                closer += 1

    return {
        "n_points": len(points),
        "k": k,
        "seed": seed,
        "mean_distance_before": float(np.mean(before_d)),
        "mean_distance_after": float(np.mean(after_d)),
        "fraction_moved_closer": closer / len(points),
        "single_sample_classes": flagged,
    }


def _embed_images(images, model):
    if hasattr(model, "embed_batch"):
        return np.asarray(model.embed_batch(images))
    return fsl_backbones.embed(images, model)


def selection_quality_report(
    selector_model,
    translator,
    test_handle: DatasetHandle,
    train_handle: DatasetHandle,
    n_images: int = 100,
    pool_size: int = 20,
    k: int = 1,
    seed: int = 0,
) -> dict:
    """Mean divergence target of selected vs random neighbours.

    For each sampled test image, picks the best k of a seeded pool with the
    selector and k uniformly at random, then compares the mean divergence
    oracle over both choices. Lower is better for the selector.
    """
    all_test = test_handle.all_samples()
    rng = rng_for(seed, "selection-quality")
    idx = rng.choice(len(all_test), size=min(n_images, len(all_test)), replace=False)
    best_x, best_y, rand_x, rand_y = [], [], [], []
    for i in idx:
        y = all_test[i]
        pool = sample_pool(train_handle, pool_size, int(rng.integers(2**62)))
        chosen = select_neighbours(pool, y, k, selector_model, mode="best")
        random_idx = rng.choice(pool_size, size=k, replace=False)
        best_x += chosen
        best_y += [y] * k
        rand_x += [pool.candidates[j] for j in random_idx]
        rand_y += [y] * k

    best_kl, rand_kl = [], []
    batch = 32
    for start in range(0, len(best_x), batch):
        best_kl += kl_oracle_batch(best_x[start:start + batch], best_y[start:start + batch], translator)
        rand_kl += kl_oracle_batch(rand_x[start:start + batch], rand_y[start:start + batch], translator)

    return {
        "n_images": int(len(idx)),
        "pool_size": pool_size,
        "k": k,
        "seed": seed,
        "mean_kl_selected": float(np.mean(best_kl)),
        "mean_kl_random": float(np.mean(rand_kl)),
    }


# ---------------------------------------------------------------------------
# desk-scale plan builders
# ---------------------------------------------------------------------------

def _rectifier_spec(k, mode, selector_mode="best", weighting="simple_average",
                    beta=None, pool_size=20, compose=False) -> dict:
    spec = {
        "kind": "rectifier",
        "copies": k,
        "weighting": weighting,
        "beta": beta,
        "params": {"mode": mode, "pool_size": pool_size, "selector_mode": selector_mode},
    }
    if compose:
        spec["params"]["compose_crop_rotate"] = True
    return spec


def plan_main_comparison(
    mode: str = "style_from_train",
    encoder: str = "conv4",
    metric: str = "cos",
    dataset_key: str = "traffic",
    n_episodes: int = 2000,
    base_seed: int = 0,
) -> ExperimentPlan:
    """Desk-scale analogue of the headline method comparison.

    One generated copy per support sample, queries untouched; published
    full-scale numbers ride along as references.
    """
    def ref(method):
        return REFERENCE_MAIN.get((method, encoder, metric, dataset_key))

    cells = [
        PlanCell(
            name="one_shot",
            support_spec={"kind": "one_shot", "copies": 0},
            n_episodes=n_episodes, base_seed=base_seed,
            paper_reference=ref("one_shot"),
        )
    ]
    for kind in ("mixup", "crop_rotate", "affine", "color_jitter"):
        cells.append(
            PlanCell(
                name=kind,
                support_spec={"kind": kind, "copies": 1},
                n_episodes=n_episodes, base_seed=base_seed,
                paper_reference=ref(kind),
            )
        )
    cells.append(
        PlanCell(
            name="rectifier",
            support_spec=_rectifier_spec(1, mode),
            n_episodes=n_episodes, base_seed=base_seed,
            paper_reference=ref("rectifier"),
        )
    )
    return ExperimentPlan(name="main_comparison", cells=cells)


def plan_copies_grid(
    mode: str = "style_from_train",
    max_copies: int = 3,
    n_episodes: int = 2000,
    base_seed: int = 0,
) -> ExperimentPlan:
    """Support-copies x query-copies grid under simple averaging."""
    cells = []
    for q in range(max_copies + 1):
        for s in range(max_copies + 1):
            ref = REFERENCE_COPIES_GRID.get((q, s))
            cells.append(
                PlanCell(
                    name=f"query{q}_support{s}",
                    support_spec=_rectifier_spec(s, mode),
                    query_spec=_rectifier_spec(q, mode),
                    n_episodes=n_episodes, base_seed=base_seed,
                    paper_reference=ref[0] if ref else None,
                )
            )
    return ExperimentPlan(name="copies_grid", cells=cells)


def plan_component_ablation(
    mode: str = "style_from_train",
    n_episodes: int = 2000,
    base_seed: int = 0,
    k: int = 1,
) -> ExperimentPlan:
    """Selector/translator/crop-rotate on-off grid at desk scale."""
    cells = [
        PlanCell(
            name="selector_translator",
            support_spec=_rectifier_spec(k, mode, selector_mode="best"),
            n_episodes=n_episodes, base_seed=base_seed,
            paper_reference=REFERENCE_ABLATION[(True, True, False)],
        ),
        PlanCell(
            name="translator_random_neighbours",
            support_spec=_rectifier_spec(k, mode, selector_mode="random"),
            n_episodes=n_episodes, base_seed=base_seed,
            paper_reference=REFERENCE_ABLATION[(False, True, False)],
        ),
        PlanCell(
            name="crop_rotate_only",
            support_spec={"kind": "crop_rotate", "copies": k},
            n_episodes=n_episodes, base_seed=base_seed,
            paper_reference=REFERENCE_ABLATION[(True, False, True)],
        ),
        PlanCell(
            name="one_shot",
            support_spec={"kind": "one_shot", "copies": 0},
            n_episodes=n_episodes, base_seed=base_seed,
            paper_reference=REFERENCE_ABLATION[(True, False, False)],
        ),
        PlanCell(
            name="raw_one_shot",
            support_spec={"kind": "one_shot", "copies": 0, "use_reconstruction": False},
            query_spec={"kind": "one_shot", "copies": 0, "use_reconstruction": False},
            n_episodes=n_episodes, base_seed=base_seed,
            paper_reference=REFERENCE_ABLATION[(False, False, False)],
        ),
        PlanCell(
            name="all_components",
            support_spec=_rectifier_spec(k, mode, selector_mode="best", compose=True),
            n_episodes=n_episodes, base_seed=base_seed,
            paper_reference=REFERENCE_ABLATION[(True, True, True)],
        ),
    ]
    return ExperimentPlan(name="component_ablation", cells=cells)
