"""Evaluation protocols: repeated-trial benchmarking, selective prediction,
and group-shift studies.

The unit of evaluation is the query.  Each query contributes one deployment
response — the logged generation with the lowest sample index — and the
remaining samples exist only to form agreement targets and the test-time
majority-vote baseline.  A trial splits queries into a calibration side and a
test side, fits whatever the scored methods need on the calibration side
(the distilled calibrator on agreement targets, the supervised reference on
correctness labels), scores the test side, and reports calibration metrics.
Trials differ only in their seed-derived splits; aggregation averages the
per-trial reports.

Correctness of a response comes from the labels file when it covers the
(query, sample) pair and otherwise falls back to matching the extracted
answer against the query's gold answers; having neither is an error.

Method identifiers:

* ``distilled``     — the trained feature calibrator, scored on deployment
                      responses;
* ``token_prob``    — exponentiated mean token log-probability;
* ``answer_prob``   — the same, restricted to the answer span;
* ``verbal_conf``   — self-stated confidence with batch-mean imputation;
* ``supervised``    — logistic recalibration of ``token_prob`` fit on
                      calibration-side correctness labels (a supervised
                      reference point, not an unsupervised competitor);
* ``tt_sc``         — test-time majority vote: confidence is the modal
                      answer's share, correctness is the modal answer's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import seeding
from .baselines import (
    answer_prob_score,
    apply_platt,
    fit_platt,
    impute_verbal,
    parse_verbal_confidence,
    token_prob_score,
)
from .calibrator import FEATURE_SOURCES, fit_pipeline, predict
from .consistency import AnswerKey, build_target, canonical_answer, is_match, subsample_targets
from .errors import ConfigError, DataError
from .metrics import REPORT_FORMAT, MetricReport, compute_report
from .records import CorrectnessLabel, SampleSet

DEFAULT_METHODS = (
    "distilled",
    "token_prob",
    "answer_prob",
    "verbal_conf",
    "supervised",
    "tt_sc",
)
METHOD_IDS = frozenset(DEFAULT_METHODS)
UNSUPERVISED_METHODS = ("distilled", "token_prob", "answer_prob", "verbal_conf")

# Per-trial sub-stream tags (fixed forever; changing them changes all results).
_S_SPLIT = 1
_S_PIPELINE = 2
_S_SUBSAMPLE = 3


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EvalDataset:
    """Per-query arrays precomputed once so trials stay cheap."""

    sets: tuple[SampleSet, ...]
    query_ids: tuple[str, ...]
    groups: tuple[str, ...]
    feature_source: str
    features: np.ndarray
    targets_s: np.ndarray
    token_prob: np.ndarray
    answer_prob: np.ndarray | None
    verbal_conf: np.ndarray
    verbal_imputed: np.ndarray
    tt_confidence: np.ndarray
    deploy_correct: np.ndarray
    tt_correct: np.ndarray

    @property
    def n(self) -> int:
        return len(self.sets)

    def subset(self, indices: Sequence[int] | np.ndarray) -> "EvalDataset":
        idx = np.asarray(indices, dtype=int)
        return EvalDataset(
            sets=tuple(self.sets[i] for i in idx),
            query_ids=tuple(self.query_ids[i] for i in idx),
            groups=tuple(self.groups[i] for i in idx),
            feature_source=self.feature_source,
            features=self.features[idx],
            targets_s=self.targets_s[idx],
            token_prob=self.token_prob[idx],
            answer_prob=None if self.answer_prob is None else self.answer_prob[idx],
            verbal_conf=self.verbal_conf[idx],
            verbal_imputed=self.verbal_imputed[idx],
            tt_confidence=self.tt_confidence[idx],
            deploy_correct=self.deploy_correct[idx],
            tt_correct=self.tt_correct[idx],
        )


def feature_row(sample_set: SampleSet, feature_source: str) -> tuple[float, ...]:
    """The feature vector a trained calibrator consumes for one query."""
    if feature_source in ("response_embedding", "external_embedding"):
        row = sample_set.samples[0].embedding
        if not row:
            raise DataError(
                f"query {sample_set.query_id}: deployment response has no embedding"
            )
        return row
    if feature_source == "question_embedding":
        row = sample_set.query.question_embedding
        if row is None or not row:
            raise DataError(f"query {sample_set.query_id}: query has no question_embedding")
        return row
    raise ConfigError(f"unknown feature_source {feature_source!r}")


def _correctness(
    labels_map: Mapping[tuple[str, int], int] | None,
    key: AnswerKey | None,
    query_id: str,
    sample_index: int,
    answer: str | None,
) -> float:
    if labels_map is not None:
        z = labels_map.get((query_id, sample_index))
        if z is not None:
            return float(z)
    if key is not None:
        return float(answer is not None and is_match(answer, key))
    raise DataError(
        f"query {query_id} sample {sample_index}: no correctness source "
        "(provide labels or gold_answers)"
    )


def build_dataset(
    sets: Sequence[SampleSet],
    labels: Sequence[CorrectnessLabel] | None = None,
    *,
    feature_source: str = "response_embedding",
) -> EvalDataset:
    """Precompute every per-query quantity the trial loop needs."""
    if len(sets) == 0:
        raise DataError("evaluation needs at least one query with generations")
    if feature_source not in FEATURE_SOURCES:
        raise ConfigError(f"unknown feature_source {feature_source!r}")
    labels_map = None
    if labels is not None:
        labels_map = {(l.query_id, l.sample_index): l.z for l in labels}
    rows: list[tuple[float, ...]] = []
    tp: list[float] = []
    ap: list[float] = []
    ap_missing = False
    vc_raw: list[float | None] = []
    s_vals: list[float] = []
    tt_conf: list[float] = []
    deploy_z: list[float] = []
    tt_z: list[float] = []
    for sample_set in sets:
        deploy = sample_set.samples[0]
        rows.append(feature_row(sample_set, feature_source))
        tp.append(token_prob_score(deploy.token_logprobs))
        if deploy.answer_token_logprobs is None:
            ap_missing = True
        elif not ap_missing:
            ap.append(answer_prob_score(deploy.answer_token_logprobs))
        vc_raw.append(parse_verbal_confidence(deploy.response_text))
        target = build_target(sample_set)
        s_vals.append(target.s)
        tt_conf.append(target.s)
        key = (
            AnswerKey.from_gold(sample_set.query.gold_answers)
            if sample_set.query.gold_answers
            else None
        )
        deploy_z.append(
            _correctness(
                labels_map, key, sample_set.query_id, deploy.sample_index,
                canonical_answer(deploy),
            )
        )
        tt_z.append(
            _correctness(
                labels_map, key, sample_set.query_id, target.selected_sample_index,
                target.answer,
            )
        )
    try:
        features = np.array(rows, dtype=float)
    except ValueError as exc:
        raise DataError(f"inconsistent feature dimensions across queries: {exc}") from None
    if features.ndim != 2:
        raise DataError("inconsistent feature dimensions across queries")
    imputed = impute_verbal(vc_raw)
    return EvalDataset(
        sets=tuple(sets),
        query_ids=tuple(s.query_id for s in sets),
        groups=tuple(s.query.group for s in sets),
        feature_source=feature_source,
        features=features,
        targets_s=np.array(s_vals, dtype=float),
        token_prob=np.array(tp, dtype=float),
        answer_prob=None if ap_missing else np.array(ap, dtype=float),
        verbal_conf=np.array([v.value for v in imputed], dtype=float),
        verbal_imputed=np.array([v.imputed for v in imputed], dtype=bool),
        tt_confidence=np.array(tt_conf, dtype=float),
        deploy_correct=np.array(deploy_z, dtype=float),
        tt_correct=np.array(tt_z, dtype=float),
    )


# ---------------------------------------------------------------------------
# trial configuration and splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialConfig:
    n_trials: int = 200
    cal_fraction: float = 0.4
    master_seed: int = 0
    bins: int = 12
    methods: tuple[str, ...] = DEFAULT_METHODS
    feature_source: str = "response_embedding"
    k_subsample: int | None = None
    alpha: float = 1.0
    split_frac: float = 0.5
    selective_rates: tuple[float, ...] = ()

    def validate(self) -> None:
        if self.n_trials < 1:
            raise ConfigError(f"n_trials must be >= 1, got {self.n_trials}")
        if not 0.0 < self.cal_fraction < 1.0:
            raise ConfigError(f"cal_fraction must be inside (0, 1), got {self.cal_fraction!r}")
        if self.bins < 1:
            raise ConfigError(f"bins must be >= 1, got {self.bins}")
        if not self.methods:
            raise ConfigError("methods must not be empty")
        unknown = [m for m in self.methods if m not in METHOD_IDS]
        if unknown:
            raise ConfigError(f"unknown methods: {', '.join(sorted(unknown))}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods contains duplicates")
        if self.feature_source not in FEATURE_SOURCES:
            raise ConfigError(f"unknown feature_source {self.feature_source!r}")
        if self.k_subsample is not None and self.k_subsample < 1:
            raise ConfigError(f"k_subsample must be >= 1, got {self.k_subsample}")
        if self.alpha <= 0 or not math.isfinite(self.alpha):
            raise ConfigError("alpha must be a positive real")
        if not 0.0 < self.split_frac < 1.0:
            raise ConfigError(f"split_frac must be inside (0, 1), got {self.split_frac!r}")
        for r in self.selective_rates:
            if not 0.0 <= r < 1.0:
                raise ConfigError(f"abstention rate must lie in [0, 1), got {r!r}")


def split_cal_test(n: int, cal_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded disjoint split over ``range(n)``; both sides sorted, size >= 2."""
    if not 0.0 < cal_fraction < 1.0:
        raise DataError(f"cal_fraction must be inside (0, 1), got {cal_fraction!r}")
    n_cal = int(np.floor(cal_fraction * n))
    n_test = n - n_cal
    if n_cal < 2 or n_test < 2:
        raise DataError(
            f"cal_fraction {cal_fraction!r} leaves too little data ({n_cal} cal / "
            f"{n_test} test of {n}); both sides need at least 2 queries"
        )
    perm = seeding.generator(seed).permutation(n)
    return np.sort(perm[:n_cal]), np.sort(perm[n_cal:])


# ---------------------------------------------------------------------------
# selective prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectivePoint:
    """One abstention rate: counts, then mean confidence and accuracy of the
    answered and abstained sides (absent when a side is empty)."""

    rate: float
    abstained: int
    answered: int
    accuracy: float | None
    confidence: float | None
    abstained_accuracy: float | None
    abstained_confidence: float | None
    gain: float | None


def selective_curve(
    confidences: Any,
    labels: Any,
    rates: Sequence[float],
    query_ids: Sequence[str] | None = None,
) -> list[SelectivePoint]:
    """Accuracy among answered queries after abstaining on the least
    confident ``ceil(rate * n)``.

    Ties in confidence break by ascending ``query_ids`` (original order when
    ids are not given) so the abstention set is deterministic.  ``gain`` is
    answered accuracy minus the accuracy with no abstention, exactly 0.0 at
    rate 0.  Both sides' mean confidence and accuracy are recorded; empty
    sides report them as absent.
    """
    conf = np.asarray(confidences, dtype=float)
    lab = np.asarray(labels, dtype=float)
    if conf.ndim != 1 or conf.shape != lab.shape:
        raise DataError("confidences and labels must be 1-d and the same length")
    n = conf.shape[0]
    if n == 0:
        raise DataError("selective prediction needs at least one query")
    if query_ids is None:
        order = np.argsort(conf, kind="stable")
    else:
        if len(query_ids) != n:
            raise DataError("query_ids must align with confidences")
        order = np.lexsort((np.array(query_ids, dtype=str), conf))
    sorted_labels = lab[order]
    sorted_conf = conf[order]
    base_accuracy = float(sorted_labels.mean())
    points: list[SelectivePoint] = []
    for rate in rates:
        if not 0.0 <= rate < 1.0:
            raise DataError(f"abstention rate must lie in [0, 1), got {rate!r}")
        abstained = int(math.ceil(round(rate * n, 9)))
        kept = sorted_labels[abstained:]
        dropped = sorted_labels[:abstained]
        accuracy = float(kept.mean()) if kept.size else None
        points.append(
            SelectivePoint(
                rate=float(rate),
                abstained=abstained,
                answered=int(kept.size),
                accuracy=accuracy,
                confidence=float(sorted_conf[abstained:].mean()) if kept.size else None,
                abstained_accuracy=float(dropped.mean()) if dropped.size else None,
                abstained_confidence=float(sorted_conf[:abstained].mean())
                if dropped.size
                else None,
                gain=None if accuracy is None else accuracy - base_accuracy,
            )
        )
    return points


@dataclass(frozen=True)
class SelectiveSummary:
    rate: float
    answered: int
    accuracy: float
    confidence: float
    abstained_accuracy: float | None
    gain: float


# ---------------------------------------------------------------------------
# the trial loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodSummary:
    method: str
    ece1: float
    ece2: float
    mce: float
    brier: float
    auroc: float | None
    accuracy: float
    reliability: tuple[dict[str, float], ...]
    histogram: tuple[float, ...]
    selective: tuple[SelectiveSummary, ...] = ()
    per_trial: tuple[MetricReport, ...] = ()


@dataclass(frozen=True)
class EvalResult:
    kind: str
    n_queries: int
    n_cal: int
    n_test: int
    n_trials: int
    bins: int
    feature_source: str
    methods: dict[str, MethodSummary] = field(default_factory=dict)


def _trial_confidences(
    data: EvalDataset,
    config: TrialConfig,
    tseed: int,
    cal_idx: np.ndarray,
    test_idx: np.ndarray,
) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for method in config.methods:
        if method == "distilled":
            if config.k_subsample is None:
                s_cal = data.targets_s[cal_idx]
            else:
                s_cal = np.array(
                    [
                        subsample_targets(
                            data.sets[i],
                            config.k_subsample,
                            seed=seeding.mix(tseed, _S_SUBSAMPLE, int(i)),
                        ).s
                        for i in cal_idx
                    ]
                )
            model = fit_pipeline(
                data.features[cal_idx],
                s_cal,
                split_frac=config.split_frac,
                seed=seeding.mix(tseed, _S_PIPELINE),
                alpha=config.alpha,
                feature_source=data.feature_source,
            )
            out[method] = np.asarray(predict(model, data.features[test_idx]), dtype=float)
        elif method == "token_prob":
            out[method] = data.token_prob[test_idx]
        elif method == "answer_prob":
            if data.answer_prob is None:
                raise ConfigError(
                    "answer_prob requires answer-span log-probabilities on every "
                    "deployment response"
                )
            out[method] = data.answer_prob[test_idx]
        elif method == "verbal_conf":
            out[method] = data.verbal_conf[test_idx]
        elif method == "supervised":
            platt = fit_platt(data.token_prob[cal_idx], data.deploy_correct[cal_idx])
            out[method] = np.asarray(
                apply_platt(platt, data.token_prob[test_idx]), dtype=float
            )
        elif method == "tt_sc":
            out[method] = data.tt_confidence[test_idx]
        else:  # pragma: no cover - guarded by TrialConfig.validate
            raise ConfigError(f"unknown method {method!r}")
    return out


def _labels_for(data: EvalDataset, method: str, test_idx: np.ndarray) -> np.ndarray:
    if method == "tt_sc":
        return data.tt_correct[test_idx]
    return data.deploy_correct[test_idx]


def _aggregate(
    method: str,
    reports: list[MetricReport],
    accuracies: list[float],
    selective: list[list[SelectivePoint]],
    bins: int,
) -> MethodSummary:
    aurocs = [r.auroc for r in reports if r.auroc is not None]
    reliability: list[dict[str, float]] = []
    for pos in range(bins):
        stats = [r.bins[pos] for r in reports]
        weights = np.array([s.count for s in stats], dtype=float)
        total = weights.sum()
        reliability.append(
            {
                "lower": float(np.mean([s.lower for s in stats])),
                "upper": float(np.mean([s.upper for s in stats])),
                "count": float(weights.mean()),
                "mean_confidence": float(
                    np.dot(weights, [s.mean_confidence for s in stats]) / total
                ),
                "accuracy": float(np.dot(weights, [s.accuracy for s in stats]) / total),
            }
        )
    histogram = tuple(
        float(v) for v in np.mean([r.histogram for r in reports], axis=0)
    )
    selective_rows: list[SelectiveSummary] = []
    if selective:
        for pos in range(len(selective[0])):
            rows = [curve[pos] for curve in selective]
            gains = [p.gain for p in rows if p.gain is not None]
            accs = [p.accuracy for p in rows if p.accuracy is not None]
            confs = [p.confidence for p in rows if p.confidence is not None]
            abst = [p.abstained_accuracy for p in rows if p.abstained_accuracy is not None]
            selective_rows.append(
                SelectiveSummary(
                    rate=rows[0].rate,
                    answered=rows[0].answered,
                    accuracy=float(np.mean(accs)) if accs else float("nan"),
                    confidence=float(np.mean(confs)) if confs else float("nan"),
                    abstained_accuracy=float(np.mean(abst)) if abst else None,
                    gain=float(np.mean(gains)) if gains else float("nan"),
                )
            )
    return MethodSummary(
        method=method,
        ece1=float(np.mean([r.ece1 for r in reports])),
        ece2=float(np.mean([r.ece2 for r in reports])),
        mce=float(np.mean([r.mce for r in reports])),
        brier=float(np.mean([r.brier for r in reports])),
        auroc=float(np.mean(aurocs)) if aurocs else None,
        accuracy=float(np.mean(accuracies)),
        reliability=tuple(reliability),
        histogram=histogram,
        selective=tuple(selective_rows),
        per_trial=tuple(reports),
    )


def _evaluate(
    data: EvalDataset,
    config: TrialConfig,
    splits: Callable[[int, int], tuple[np.ndarray, np.ndarray]],
    kind: str,
) -> EvalResult:
    config.validate()
    if data.feature_source != config.feature_source:
        raise ConfigError(
            f"dataset was built with feature_source {data.feature_source!r} but the "
            f"trial config asks for {config.feature_source!r}"
        )
    reports: dict[str, list[MetricReport]] = {m: [] for m in config.methods}
    accuracies: dict[str, list[float]] = {m: [] for m in config.methods}
    selective: dict[str, list[list[SelectivePoint]]] = {m: [] for m in config.methods}
    n_cal = n_test = 0
    for t in range(config.n_trials):
        tseed = seeding.mix(config.master_seed, t)
        cal_idx, test_idx = splits(t, tseed)
        n_cal, n_test = len(cal_idx), len(test_idx)
        if n_test < config.bins:
            raise DataError(
                f"test side has {n_test} queries but {config.bins} equal-mass bins "
                "need at least one query each"
            )
        confidences = _trial_confidences(data, config, tseed, cal_idx, test_idx)
        for method in config.methods:
            labels = _labels_for(data, method, test_idx)
            reports[method].append(
                compute_report(confidences[method], labels, bins=config.bins)
            )
            accuracies[method].append(float(labels.mean()))
            if config.selective_rates:
                selective[method].append(
                    selective_curve(
                        confidences[method],
                        labels,
                        config.selective_rates,
                        query_ids=[data.query_ids[i] for i in test_idx],
                    )
                )
    summaries = {
        m: _aggregate(m, reports[m], accuracies[m], selective[m], config.bins)
        for m in config.methods
    }
    return EvalResult(
        kind=kind,
        n_queries=data.n,
        n_cal=n_cal,
        n_test=n_test,
        n_trials=config.n_trials,
        bins=config.bins,
        feature_source=config.feature_source,
        methods=summaries,
    )


def run_trials(data: EvalDataset, config: TrialConfig) -> EvalResult:
    """The main protocol: seeded random cal/test splits, retrained per trial."""

    def splits(t: int, tseed: int) -> tuple[np.ndarray, np.ndarray]:
        return split_cal_test(data.n, config.cal_fraction, seeding.mix(tseed, _S_SPLIT))

    return _evaluate(data, config, splits, kind="eval")


def shift_eval(
    data: EvalDataset,
    config: TrialConfig,
    train_groups: Sequence[str],
    test_groups: Sequence[str],
) -> dict[str, EvalResult]:
    """Out-of-domain protocol: calibrate on some groups, test on others.

    Returns ``{"in_domain": ..., "shifted": ...}``.  The in-domain arm runs
    the random-split protocol inside the training groups; the shifted arm
    keeps the group split fixed and varies only fitting randomness across
    trials.
    """
    train = set(train_groups)
    test = set(test_groups)
    if not train or not test:
        raise ConfigError("train_groups and test_groups must both be nonempty")
    overlap = train & test
    if overlap:
        raise ConfigError(f"groups cannot be on both sides: {', '.join(sorted(overlap))}")
    present = set(data.groups)
    missing = (train | test) - present
    if missing:
        raise ConfigError(f"unknown groups: {', '.join(sorted(missing))}")
    train_idx = np.array([i for i, g in enumerate(data.groups) if g in train], dtype=int)
    test_idx = np.array([i for i, g in enumerate(data.groups) if g in test], dtype=int)

    in_domain = run_trials(data.subset(train_idx), config)

    def splits(t: int, tseed: int) -> tuple[np.ndarray, np.ndarray]:
        return train_idx, test_idx

    shifted = _evaluate(data, config, splits, kind="shift")
    return {"in_domain": in_domain, "shifted": shifted}


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------


def _method_object(summary: MethodSummary) -> dict[str, Any]:
    return {
        "ece1": summary.ece1,
        "ece2": summary.ece2,
        "mce": summary.mce,
        "brier": summary.brier,
        "auroc": summary.auroc,
        "accuracy": summary.accuracy,
        "reliability": list(summary.reliability),
        "histogram": list(summary.histogram),
        "selective": [
            {
                "rate": row.rate,
                "answered": row.answered,
                "accuracy": row.accuracy,
                "confidence": row.confidence,
                "abstained_accuracy": row.abstained_accuracy,
                "gain": row.gain,
            }
            for row in summary.selective
        ],
    }


def report_document(result: EvalResult, config_echo: Mapping[str, Any]) -> dict[str, Any]:
    """The JSON report body; ``config_echo`` records the exact run settings."""
    return {
        "format": REPORT_FORMAT,
        "kind": result.kind,
        "config": dict(config_echo),
        "n_queries": result.n_queries,
        "n_cal": result.n_cal,
        "n_test": result.n_test,
        "n_trials": result.n_trials,
        "bins": result.bins,
        "feature_source": result.feature_source,
        "methods": {m: _method_object(s) for m, s in result.methods.items()},
    }


def trial_table(result: EvalResult) -> str:
    """Per-trial metrics as a TSV table (one row per trial x method)."""
    lines = ["trial\tmethod\tece1\tece2\tmce\tbrier\tauroc"]
    for method, summary in result.methods.items():
        for t, report in enumerate(summary.per_trial):
            auroc = "" if report.auroc is None else f"{report.auroc:.6f}"
            lines.append(
                f"{t}\t{method}\t{report.ece1:.6f}\t{report.ece2:.6f}"
                f"\t{report.mce:.6f}\t{report.brier:.6f}\t{auroc}"
            )
    return "\n".join(lines) + "\n"


def config_echo(config: TrialConfig, **extra: Any) -> dict[str, Any]:
    """A JSON-friendly snapshot of the trial settings for report headers."""
    echo: dict[str, Any] = {
        "n_trials": config.n_trials,
        "cal_fraction": config.cal_fraction,
        "master_seed": config.master_seed,
        "bins": config.bins,
        "methods": list(config.methods),
        "feature_source": config.feature_source,
        "k_subsample": config.k_subsample,
        "alpha": config.alpha,
        "split_frac": config.split_frac,
    }
    if config.selective_rates:
        echo["selective_rates"] = list(config.selective_rates)
    echo.update(extra)
    return echo
