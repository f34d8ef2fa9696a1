"""Benchmark protocol: per-dataset experiments and the cross-dataset report.

One experiment loads a dataset, binarizes the target, makes a stratified
train/validation/calibration/test split standardized by train statistics,
then

* trains a plain network by ADAM ascent on the log-likelihood, keeping the
  epoch with the lowest validation log-loss, and fits each calibrator on that
  network's calibration-split probabilities;
* trains the variational BNN with the same epoch selection;

and finally scores all methods once on the test split. Output files are a
pure function of the configuration.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import calibration, data, metrics, nn, stats, vi
from .errors import AssemblyError, BnncalError, ConfigError, DivergenceError
from .optim import AdamState, adam_step
from .rng import make_rng

log = logging.getLogger(__name__)

METHOD_ORDER = ("Uncalibrated", "Beta", "Isotonic", "Logistic", "VarBayes")
CALIBRATED = ("Beta", "Isotonic", "Logistic")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one dataset run depends on.

    ``dataset`` is either a path to a schema JSON or ``{"toy": {"n": ...}}``.
    ``baseline.max_epochs`` defaults to half of ``bnn.max_epochs``.
    """

    dataset: object
    name: str | None = None
    seed: int = 0
    fractions: tuple = data.DEFAULT_FRACTIONS
    hidden: tuple = (4, 4)
    bnn: vi.TrainConfig = field(default_factory=vi.TrainConfig)
    baseline: vi.TrainConfig = field(
        default_factory=lambda: vi.TrainConfig(max_epochs=1000, learning_rate=1e-3))
    calibrators: tuple = CALIBRATED
    bins: int = 10
    alpha: float = 0.05
    floor: float = calibration.DEFAULT_FLOOR
    out: str = "results"

    @property
    def is_toy(self) -> bool:
        return isinstance(self.dataset, dict) and "toy" in self.dataset

    @property
    def dataset_name(self) -> str:
        if self.name:
            return self.name
        if self.is_toy:
            return "Toy"
        return data.read_schema(self.dataset)["name"]

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "ExperimentConfig":
        doc = dict(doc)
        if "dataset" not in doc:
            raise ConfigError("experiment config needs a 'dataset' entry")
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        seed = int(doc.get("seed", 0))
        dataset = doc["dataset"]
        if isinstance(dataset, str) and base_dir is not None:
            dataset = str((Path(base_dir) / dataset).resolve())
        bnn_doc = {"seed": seed, **doc.get("bnn", {})}
        bnn = _train_config(bnn_doc)
        base_doc = {"seed": seed, "learning_rate": 1e-3,
                    "max_epochs": max(bnn.max_epochs // 2, 0), **doc.get("baseline", {})}
        fractions = tuple(doc.get("fractions", data.DEFAULT_FRACTIONS))
        if len(fractions) != 4 or min(fractions) <= 0 or abs(sum(fractions) - 1) > 1e-9:
            raise ConfigError(f"invalid split fractions {fractions}")
        calibrators = tuple(doc.get("calibrators", CALIBRATED))
        bad = [c for c in calibrators if c not in calibration.FITTERS]
        if bad:
            raise ConfigError(f"unknown calibrators {bad}; choose from {list(calibration.FITTERS)}")
        return cls(dataset=dataset, name=doc.get("name"), seed=seed, fractions=fractions,
                   hidden=tuple(doc.get("hidden", (4, 4))), bnn=bnn,
                   baseline=_train_config(base_doc), calibrators=calibrators,
                   bins=int(doc.get("bins", 10)), alpha=float(doc.get("alpha", 0.05)),
                   floor=float(doc.get("floor", calibration.DEFAULT_FLOOR)),
                   out=str(doc.get("out", "results")))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = cls.from_dict(doc, base_dir=path.parent)
        if not cfg.is_toy and not Path(cfg.dataset).exists():
            raise ConfigError(f"schema file {cfg.dataset} does not exist")
        return cfg

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["fractions"] = list(self.fractions)
        doc["hidden"] = list(self.hidden)
        doc["calibrators"] = list(self.calibrators)
        return doc


def _train_config(doc: dict) -> vi.TrainConfig:
    unknown = set(doc) - set(vi.TrainConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown training keys: {sorted(unknown)}")
    return vi.TrainConfig(**doc)


def toy_config(seed: int = 0, n: int = 10000, out: str = "results") -> ExperimentConfig:
    """The simulated example: 10000 draws, 80/20 train/test, lr 1e-2 for both nets."""
    return ExperimentConfig.from_dict({
        "dataset": {"toy": {"n": n}}, "seed": seed, "out": out,
        "bnn": {"learning_rate": 1e-2, "max_epochs": 2000},
        "baseline": {"learning_rate": 1e-2, "max_epochs": 1000},
    })


@dataclass(frozen=True)
class MethodResult:
    method: str
    log_loss: float
    brier: float
    ece: float
    curve: metrics.ReliabilityCurve
    tau: int

    def summary(self) -> dict:
        return {"log_loss": self.log_loss, "brier": self.brier, "ece": self.ece, "tau": self.tau}


@dataclass
class ExperimentResult:
    dataset: str
    methods: dict
    tau_baseline: int
    tau_bnn: int
    test_index: np.ndarray
    test_labels: np.ndarray
    test_features: np.ndarray
    probabilities: dict
    calibrators: dict
    split_sizes: dict
    test_reads: int = 0
    histories: dict = field(default_factory=dict)

    def losses(self) -> dict:
        return {m: r.log_loss for m, r in self.methods.items()}


class ExperimentError(BnncalError):
    """A dataset run failed; ``record`` is the structured error document."""

    def __init__(self, dataset, stage, cause):
        self.record = {"dataset": dataset, "stage": stage,
                       "error": type(cause).__name__, "message": str(cause)}
        super().__init__(f"{dataset}: {stage} failed: {type(cause).__name__}: {cause}")


def _val_loss(probs: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(probs, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def fit_network(splits, arch: nn.NetworkArch, config: vi.TrainConfig):
    """Maximum-likelihood network by full-batch ADAM ascent.

    Starts from the same initialization as the BNN mean and returns the
    parameters of the epoch with the lowest validation log-loss together
    with the list of per-epoch validation losses (index = epoch).
    """
    theta = nn.glorot_uniform(arch, make_rng(config.seed, 0)).theta
    state = AdamState.zeros(theta.size, learning_rate=config.learning_rate,
                            beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon)
    val = splits.validation
    losses = []
    best, best_loss = theta, np.inf
    for epoch in range(config.max_epochs + 1):
        params = nn.NetworkParams(theta, arch)
        loss = _val_loss(nn.predict_proba(params, val.X), val.y)
        losses.append(loss)
        if loss < best_loss:
            best, best_loss = theta, loss
        if epoch == config.max_epochs:
            break
        g, _ = vi.clip_gradient(nn.grad_log_likelihood(params, splits.train), config.clip_norm)
        new_theta, state = adam_step(state, theta, g)
        if not np.all(np.isfinite(new_theta)):
            raise DivergenceError(f"baseline network diverged at epoch {epoch}",
                                  last_state=params, epoch=epoch)
        theta = new_theta
    return nn.NetworkParams(best, arch), losses


def load_dataset(config: ExperimentConfig):
    """Return ``(Dataset, raw_features)`` for the configured source."""
    if config.is_toy:
        n = int(config.dataset["toy"].get("n", 10000))
        raw = data.generate_toy(n, config.seed)
        return data.to_dataset(raw, binarize=False), raw.features
    schema = data.read_schema(config.dataset)
    raw = data.load_csv(schema.get("path"), schema)
    return data.to_dataset(raw, binarize=True), raw.features


def _method_result(method, probs, y, bins, tau):
    return MethodResult(method, metrics.log_loss(probs, y), metrics.brier_score(probs, y),
                        metrics.ece(probs, y, bins), metrics.reliability_curve(probs, y, bins), tau)


def run_experiment(config: ExperimentConfig, write: bool = True,
                   update_lossmatrix: bool = True) -> ExperimentResult:
    """Run the full protocol for one dataset and (optionally) write its files."""
    name = config.dataset_name
    stage = "load"
    try:
        dataset, raw_features = load_dataset(config)
        stage = "split"
        splits = data.standardize(data.stratified_split(dataset, config.fractions, config.seed))
        arch = nn.NetworkArch.mlp(dataset.X.shape[1], config.hidden)

        stage = "baseline"
        base_params, base_losses = fit_network(splits, arch, config.baseline)
        tau_base = int(np.argmin(base_losses))
        cal_scores = nn.predict_proba(base_params, splits.calibration.X)
        fitted = {}
        for cname in config.calibrators:
            stage = f"calibrate:{cname}"
            fitted[cname] = calibration.FITTERS[cname](cal_scores, splits.calibration.y)

        stage = "bnn"
        lam, history = vi.fit_bnn(splits, arch, config.bnn)
        tau_bnn = history.best_epoch

        stage = "evaluate"
        test = splits.test  # the only read of the test split
        floor = config.floor
        raw_scores = nn.predict_proba(base_params, test.X)
        probs = {"Uncalibrated": np.clip(raw_scores, floor, 1.0 - floor)}
        for cname in METHOD_ORDER:
            if cname in fitted:
                probs[cname] = calibration.apply(fitted[cname], raw_scores, floor)
        vb = vi.predictive_probabilities(lam, arch, test.X, config.bnn.draws_test,
                                         make_rng(config.bnn.seed, 3))
        probs["VarBayes"] = np.clip(vb, floor, 1.0 - floor)
        results = {}
        for method in METHOD_ORDER:
            if method in probs:
                tau = tau_bnn if method == "VarBayes" else tau_base
                results[method] = _method_result(method, probs[method], test.y, config.bins, tau)
    except BnncalError as exc:
        raise ExperimentError(name, stage, exc) from exc
    except (ValueError, ArithmeticError, OSError, np.linalg.LinAlgError) as exc:
        raise ExperimentError(name, stage, exc) from exc

    test_index = splits.indices["test"]
    result = ExperimentResult(
        dataset=name, methods=results, tau_baseline=tau_base, tau_bnn=tau_bnn,
        test_index=test_index, test_labels=np.asarray(test.y),
        test_features=raw_features[test_index], probabilities=probs,
        calibrators={k: v.to_dict() for k, v in fitted.items()},
        split_sizes={k: int(v.size) for k, v in splits.indices.items()},
        test_reads=splits.test_reads,
        histories={"bnn": history, "baseline": base_losses})
    if write:
        write_experiment(result, config, update_lossmatrix=update_lossmatrix)
    return result


def _dump_json(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def experiment_dir(config: ExperimentConfig, dataset: str) -> Path:
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in dataset)
    return Path(config.out) / safe


def write_experiment(result: ExperimentResult, config: ExperimentConfig,
                     update_lossmatrix: bool = True) -> Path:
    out = experiment_dir(config, result.dataset)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json({
        "dataset": result.dataset,
        "seed": config.seed,
        "split_sizes": result.split_sizes,
        "tau_baseline": result.tau_baseline,
        "tau_bnn": result.tau_bnn,
        "methods": {m: r.summary() for m, r in result.methods.items()},
        "calibrators": result.calibrators,
        "config": config.to_dict(),
    }, out / "results.json")
    emit_reliability(result, out)
    write_predictions(result, out / "predictions.csv")
    hist = result.histories
    with open(out / "training_history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "bnn_elbo", "bnn_val_loss", "baseline_val_loss"])
        base = hist["baseline"]
        for rec in hist["bnn"].records:
            b = repr(base[rec.epoch]) if rec.epoch < len(base) else ""
            w.writerow([rec.epoch, repr(rec.elbo), repr(rec.val_loss), b])
    if update_lossmatrix:
        upsert_lossmatrix_row(Path(config.out) / "lossmatrix.csv", result.dataset, result.losses())
    return out


def write_predictions(result: ExperimentResult, path) -> None:
    methods = list(result.probabilities)
    n_feat = result.test_features.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "label", *[f"x{j}" for j in range(n_feat)], *methods])
        for i, row in enumerate(result.test_index):
            w.writerow([int(row), int(result.test_labels[i]),
                        *(repr(float(v)) for v in result.test_features[i]),
                        *(repr(float(result.probabilities[m][i])) for m in methods)])


def read_predictions(path):
    """``(labels, {method: probs})`` from a ``predictions.csv``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    methods = [h for h in header if h in METHOD_ORDER]
    cols = {h: i for i, h in enumerate(header)}
    body = rows[1:]
    labels = np.array([float(r[cols["label"]]) for r in body])
    probs = {m: np.array([float(r[cols[m]]) for r in body]) for m in methods}
    return labels, probs


def emit_reliability(result, out_dir, bins: int | None = None) -> list[Path]:
    """One ``reliability_<method>.csv`` per method plus ``reliability_legend.csv``.

    ``result`` is an :class:`ExperimentResult`; with ``bins`` given the curves
    are recomputed from its test probabilities at that resolution.
    """
    out_dir = Path(out_dir)
    written = []
    legend = []
    for method, res in result.methods.items():
        curve = res.curve
        if bins is not None:
            curve = metrics.reliability_curve(result.probabilities[method], result.test_labels, bins)
        path = out_dir / f"reliability_{method}.csv"
        try:
            curve.to_csv(path)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
        legend.append((method, res.log_loss))
    path = out_dir / "reliability_legend.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "log_loss", "file"])
        for method, ll in legend:
            w.writerow([method, repr(ll), f"reliability_{method}.csv"])
    written.append(path)
    return written


def reemit_reliability(result_dir, bins: int = 10) -> list[Path]:
    """Rebuild reliability files of a finished run from its ``predictions.csv``."""
    result_dir = Path(result_dir)
    labels, probs = read_predictions(result_dir / "predictions.csv")
    methods = {m: _method_result(m, p, labels, bins, -1) for m, p in probs.items()}
    shim = ExperimentResult(result_dir.name, methods, -1, -1, np.arange(labels.size), labels,
                            np.zeros((labels.size, 0)), probs, {}, {})
    return emit_reliability(shim, result_dir)


def upsert_lossmatrix_row(path: Path, dataset: str, losses: dict) -> None:
    """Insert or replace one dataset row, keeping rows sorted by dataset name."""
    rows = {}
    methods = [m for m in METHOD_ORDER if m in losses]
    if path.exists():
        with open(path, newline="") as fh:
            existing = list(csv.reader(fh))
        if existing and existing[0][1:] == methods:
            rows = {r[0]: r[1:] for r in existing[1:] if r}
    rows[dataset] = [repr(float(losses[m])) for m in methods]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", *methods])
        for name in sorted(rows):
            w.writerow([name, *rows[name]])


def assemble_lossmatrix(results) -> stats.LossMatrix:
    """Stack per-dataset log-losses; every dataset must report the same methods."""
    results = list(results)
    if len(results) < 2:
        raise AssemblyError(f"need at least 2 completed datasets, got {len(results)}")
    reference = list(results[0].losses())
    offenders = [r.dataset for r in results if list(r.losses()) != reference]
    if offenders:
        raise AssemblyError(f"method sets differ from {reference} for datasets {offenders}")
    values = np.array([[r.losses()[m] for m in reference] for r in results])
    return stats.LossMatrix(values, [r.dataset for r in results], reference)


def stats_report(L: stats.LossMatrix, alpha: float = 0.05, out_dir=None) -> dict:
    """Ranks, Friedman test, Wilcoxon-Holm pairs and CD groups for ``L``."""
    ranks = stats.average_ranks(L)
    fr = stats.friedman_test(L)
    sig = stats.wilcoxon_holm(L, alpha)
    cd = stats.critical_difference_data(ranks, sig)
    report = {
        "datasets": list(L.datasets),
        "methods": list(L.methods),
        "avg_ranks": ranks.as_dict(),
        "friedman": {"statistic": fr.statistic, "p_value": fr.p_value,
                     "uncorrected_statistic": fr.uncorrected_statistic,
                     "uncorrected_p_value": fr.uncorrected_p_value, "df": fr.df,
                     "reject_null": bool(fr.p_value < alpha)},
        "pairwise": [{"a": a, "b": b, "raw_p": r.raw_p, "adjusted_p": r.adjusted_p,
                      "significant": r.significant, "degenerate": r.degenerate}
                     for (a, b), r in sig.items()],
        "cd": cd,
        "alpha": alpha,
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        L.to_csv(out_dir / "lossmatrix.csv")
        _dump_json(report, out_dir / "report.json")
        stats.dump_cd_summary(cd, out_dir / "cd.json")
        with open(out_dir / "ranks.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", *L.methods])
            for name, row in zip(L.datasets, ranks.rank_rows):
                w.writerow([name, *(repr(float(x)) for x in row)])
            w.writerow(["Rank", *(repr(float(x)) for x in ranks.average)])
    return report


def _run_quietly(config: ExperimentConfig):
    try:
        return run_experiment(config, write=True, update_lossmatrix=False), None
    except ExperimentError as exc:
        return None, exc.record


def run_benchmark(configs, out=None, alpha: float = 0.05, jobs: int = 1):
    """Run every experiment, then the statistics over the successful ones.

    Failed datasets leave an ``error.json`` and are excluded from the matrix.
    Returns ``(LossMatrix, report, errors)``.
    """
    configs = [replace(c, out=str(out)) if out is not None else c for c in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_quietly, configs))
    else:
        outcomes = [_run_quietly(c) for c in configs]
    results, errors = [], []
    for cfg, (res, err) in zip(configs, outcomes):
        if err is not None:
            errors.append(err)
            d = experiment_dir(cfg, err["dataset"])
            d.mkdir(parents=True, exist_ok=True)
            _dump_json(err, d / "error.json")
            log.error("%s failed during %s: %s", err["dataset"], err["stage"], err["message"])
        else:
            results.append(res)
    L = assemble_lossmatrix(results)
    out_dir = Path(out) if out is not None else Path(configs[0].out)
    report = stats_report(L, alpha, out_dir)
    return L, report, errors


def load_configs(paths) -> list[ExperimentConfig]:
    """Expand config paths; a file with an ``experiments`` list names other configs."""
    configs = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            configs.extend(load_configs(sorted(p.glob("*.json"))))
            continue
        try:
            doc = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        if "experiments" in doc:
            configs.extend(load_configs([p.parent / e for e in doc["experiments"]]))
        else:
            configs.append(ExperimentConfig.from_file(p))
    return configs


def cpu_count() -> int:
    return os.cpu_count() or 1
