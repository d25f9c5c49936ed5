"""
Per-model feature selection (NSGA-II over boolean genomes with a nested
random hyperparameter search) and TPE hyperparameter tuning.

Both searches run on optuna samplers through the ask/tell interface: trials
of one batch are asked in order, evaluated in parallel on isolated seeds and
told back in order, so the ledger does not depend on the worker count.
"""
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import optuna
from joblib import Parallel, delayed
from optuna.samplers import NSGAIISampler, TPESampler
from optuna.samplers.nsgaii import UniformCrossover
from sklearn.model_selection import StratifiedKFold, train_test_split

from base import ModelFamily, ProbabilisticClassifier
from tools.metric_tools import confusion, normed_mcc
from tools.model_tools import HyperParamSpace, make_classifier, search_space
from utils.errors import CrossValidationError, SearchConfigError
from utils.logging import get_logger
from utils.seeding import derive_seed, rng_for

logger = get_logger(__name__)

ClassifierFactory = Callable[[Dict[str, Any], int], ProbabilisticClassifier]

PENALTY_LAMBDA = 0.0005
INNER_VAL_FRACTION = 0.1
FAILURE_LOSS = 1.0


@dataclass
class Genome:
    """Feature-inclusion bits with the loss they scored (None until evaluated)."""

    bits: np.ndarray
    fitness: Optional[float] = None

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)

    @property
    def n_selected(self) -> int:
        return int(self.bits.sum())

    @property
    def indices(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.bits)]

    def selected(self, names: Sequence[str]) -> List[str]:
        return [names[i] for i in self.indices]


class TrialLedger:
    """
    Append-only record of evaluated trials, optionally mirrored to JSON-lines.

    Entries: index, kind (genome | hp-point), payload, fold_scores, penalty,
    loss, status, wall_time.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path else None
        self.entries: List[Dict[str, Any]] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def append(self, entry: Dict[str, Any]) -> None:
        entry = dict(entry, index=len(self.entries))
        self.entries.append(entry)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(entry, sort_keys=True, default=float) + "\n")

    def __len__(self) -> int:
        return len(self.entries)

    def losses(self) -> np.ndarray:
        return np.array([e["loss"] for e in self.entries], dtype=np.float64)

    def running_min(self) -> np.ndarray:
        return np.minimum.accumulate(self.losses()) if self.entries else np.array([])

    def best(self) -> Dict[str, Any]:
        # first of equal losses
        return self.entries[int(np.argmin(self.losses()))]

    def fingerprint(self) -> str:
        """Hash of the ledger content without wall times."""
        stable = [{k: v for k, v in e.items() if k != "wall_time"} for e in self.entries]
        return hashlib.sha256(json.dumps(stable, sort_keys=True, default=float).encode()).hexdigest()

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrialLedger":
        ledger = cls()
        with open(path) as f:
            ledger.entries = [json.loads(line) for line in f if line.strip()]
        ledger.path = Path(path)
        return ledger


def family_factory(family: ModelFamily, fixed: Optional[Dict[str, Any]] = None) -> ClassifierFactory:
    """(hp, seed) -> unfitted classifier, with `fixed` overriding sampled values."""
    def factory(hp: Dict[str, Any], seed: int) -> ProbabilisticClassifier:
        return make_classifier(family, {**hp, **(fixed or {})}, seed)
    return factory


def _folds(y: np.ndarray, k: int, seed: int) -> Optional[List[Tuple[np.ndarray, np.ndarray]]]:
    try:
        folds = list(StratifiedKFold(n_splits=k, shuffle=True, random_state=seed).split(np.zeros(len(y)), y))
    except ValueError:
        return None
    for train_idx, test_idx in folds:
        if len(np.unique(y[test_idx])) < 2 or len(np.unique(y[train_idx])) < 2:
            return None
    return folds


def cross_validate(model_factory: Callable[[int], ProbabilisticClassifier], X: np.ndarray, y: np.ndarray,
                   k: int, seed: int) -> np.ndarray:
    """
    Stratified k-fold normed MCC.

    Families that early-stop get an inner stratified 10% validation split of
    the training folds.

    Args:
        model_factory: seed -> unfitted classifier
        X: Features
        y: Labels
        k: Number of folds
        seed: Fold assignment seed

    Returns:
        Array of k fold scores

    Raises:
        CrossValidationError: If k < 2 or a fold lacks a class after one re-stratification
    """
    if k < 2:
        raise CrossValidationError(f"k must be at least 2, got {k}")
    y = np.asarray(y).astype(np.int64)
    folds = _folds(y, k, seed)
    if folds is None:
        logger.debug(f"Fold without both classes at seed {seed}, re-stratifying")
        folds = _folds(y, k, seed + 1)
    if folds is None:
        raise CrossValidationError(f"cannot build {k} folds with both classes from {np.bincount(y, minlength=2)}")

    scores = np.empty(k)
    for f, (train_idx, test_idx) in enumerate(folds):
        model = model_factory(derive_seed(seed, f))
        X_tr, y_tr = X[train_idx], y[train_idx]
        X_val = y_val = None
        if model.needs_validation:
            stratify = y_tr if np.bincount(y_tr, minlength=2).min() >= 2 else None
            X_tr, X_val, y_tr, y_val = train_test_split(X_tr, y_tr, test_size=INNER_VAL_FRACTION,
                                                        random_state=seed, stratify=stratify)
        model.fit(X_tr, y_tr, X_val, y_val)
        scores[f] = normed_mcc(confusion(y[test_idx], model.positive_proba(X[test_idx])))
    return scores


@dataclass
class SubsetEvaluation:
    loss: float
    fold_scores: List[float]
    penalty: float
    hp_points: List[Dict[str, Any]] = field(default_factory=list)


def evaluate_feature_subset(genome: Genome, model_family: Union[ModelFamily, str], X: np.ndarray, y: np.ndarray,
                            seed: int, inner_trials: int = 10, folds: int = 3, penalty: float = PENALTY_LAMBDA,
                            space: Optional[HyperParamSpace] = None,
                            classifier_factory: Optional[ClassifierFactory] = None) -> SubsetEvaluation:
    """
    Score a feature subset by random hyperparameter search.

    Draws `inner_trials` points from the family's space, scores each by
    `folds`-fold cross-validation and returns
    mean(1 - normed MCC) + penalty * n_selected. An empty genome scores the
    worst loss 1.0. Hyperparameter points that fail to fit count as
    normed MCC 0 on every fold.

    Returns:
        SubsetEvaluation
    """
    if genome.n_selected == 0:
        return SubsetEvaluation(FAILURE_LOSS, [], 0.0)

    family = ModelFamily(model_family)
    space = space or search_space(family)
    factory = classifier_factory or family_factory(family)
    X_sel = X[:, genome.bits]
    rng = rng_for(seed, "hp")

    scores: List[float] = []
    points = []
    for t in range(inner_trials):
        hp = space.sample(rng)
        points.append(hp)
        try:
            fold_scores = cross_validate(lambda s, hp=hp: factory(hp, s), X_sel, y, folds, derive_seed(seed, t))
        except CrossValidationError:
            raise
        except Exception as e:
            logger.debug(f"{family.value} hp point failed: {e}")
            fold_scores = np.zeros(folds)
        scores.extend(float(s) for s in fold_scores)

    cost = penalty * genome.n_selected
    loss = float(np.mean(1.0 - np.asarray(scores))) + cost
    return SubsetEvaluation(loss, scores, cost, points)


@dataclass
class SelectionResult:
    best: Genome
    feature_names: List[str]
    ledger: TrialLedger

    @property
    def selected(self) -> List[str]:
        return self.best.selected(self.feature_names)


def _gene(j: int) -> str:
    return f"x{j:04d}"


def nsga2_feature_search(model_family: Union[ModelFamily, str], X: np.ndarray, y: np.ndarray,
                         feature_names: Sequence[str], budget: int = 1000, population: int = 50, seed: int = 0,
                         penalty: float = PENALTY_LAMBDA, inner_trials: int = 10, folds: int = 3,
                         n_jobs: int = 1, ledger: Optional[TrialLedger] = None,
                         space: Optional[HyperParamSpace] = None,
                         classifier_factory: Optional[ClassifierFactory] = None,
                         crossover_prob: float = 0.9, mutation_prob: Optional[float] = None) -> SelectionResult:
    """
    Single-objective NSGA-II over feature-inclusion genomes.

    The first generation is `population` uniform random genomes; later
    generations come from binary tournaments, uniform crossover and bit-flip
    mutation (default rate 1/genome length). Exactly `budget` genomes are
    evaluated, one generation per batch.

    Returns:
        SelectionResult with the lowest-loss genome ever evaluated

    Raises:
        SearchConfigError: If budget < population
    """
    if budget < population:
        raise SearchConfigError(f"budget ({budget}) must be at least the population size ({population})")
    family = ModelFamily(model_family)
    n_features = X.shape[1]
    ledger = ledger if ledger is not None else TrialLedger()
    distributions = {_gene(j): optuna.distributions.CategoricalDistribution([False, True])
                     for j in range(n_features)}

    sampler = NSGAIISampler(population_size=population, crossover=UniformCrossover(),
                            crossover_prob=crossover_prob, mutation_prob=mutation_prob, seed=seed)
    study = optuna.create_study(direction="minimize", sampler=sampler)

    best: Optional[Genome] = None
    done = 0
    generation = 0
    while done < budget:
        batch = min(population, budget - done)
        trials = [study.ask(fixed_distributions=distributions) for _ in range(batch)]
        genomes = [Genome([t.params[_gene(j)] for j in range(n_features)]) for t in trials]

        def run(genome: Genome, number: int):
            started = time.time()
            result = evaluate_feature_subset(genome, family, X, y, derive_seed(seed, "select", number),
                                             inner_trials, folds, penalty, space, classifier_factory)
            return result, time.time() - started

        outcomes = Parallel(n_jobs=n_jobs)(delayed(run)(g, t.number) for g, t in zip(genomes, trials))

        for trial, genome, (result, wall) in zip(trials, genomes, outcomes):
            study.tell(trial, result.loss)
            genome.fitness = result.loss
            ledger.append({"kind": "genome", "trial": trial.number, "payload": {"selected": genome.indices},
                           "fold_scores": result.fold_scores, "penalty": result.penalty,
                           "loss": result.loss, "status": "ok", "wall_time": round(wall, 3)})
            if best is None or result.loss < best.fitness:
                best = genome
        done += batch
        logger.info(f"{family.value} generation {generation}: {done}/{budget} genomes, "
                    f"best loss {best.fitness:.4f} with {best.n_selected} features")
        generation += 1

    return SelectionResult(best, list(feature_names), ledger)


@dataclass
class TPEState:
    """Observed history of a TPE run and its partition settings."""

    history: List[Tuple[Dict[str, Any], float]] = field(default_factory=list)
    gamma: float = 0.25
    n_startup: int = 10
    n_candidates: int = 24

    def n_good(self) -> int:
        return int(np.ceil(self.gamma * len(self.history)))

    def split(self) -> Tuple[List[Tuple[Dict[str, Any], float]], List[Tuple[Dict[str, Any], float]]]:
        """Good (lowest-loss ceil(gamma*n)) and bad observations."""
        order = sorted(range(len(self.history)), key=lambda i: (self.history[i][1], i))
        n_good = self.n_good()
        return [self.history[i] for i in order[:n_good]], [self.history[i] for i in order[n_good:]]


@dataclass
class TuningResult:
    best_point: Dict[str, Any]
    best_loss: float
    state: TPEState
    ledger: TrialLedger


def tpe_optimize(space: HyperParamSpace, objective: Callable[[Dict[str, Any]], float], n_trials: int = 300,
                 seed: int = 0, n_startup: int = 10, n_candidates: int = 24, gamma: float = 0.25,
                 n_jobs: int = 1, ledger: Optional[TrialLedger] = None,
                 failure_loss: float = FAILURE_LOSS) -> TuningResult:
    """
    Minimize an objective over a hyperparameter space with TPE.

    The first `n_startup` trials are random and evaluated as one parallel
    batch; later trials are sequential. A non-finite or raising objective is
    recorded as a failed trial with `failure_loss`.

    Returns:
        TuningResult with the lowest-loss point (earliest on ties)
    """
    if n_trials < 1:
        raise SearchConfigError("n_trials must be at least 1")
    ledger = ledger if ledger is not None else TrialLedger()
    state = TPEState(gamma=gamma, n_startup=n_startup, n_candidates=n_candidates)
    sampler = TPESampler(n_startup_trials=n_startup, n_ei_candidates=n_candidates,
                         gamma=lambda n: int(np.ceil(gamma * n)), seed=seed)
    study = optuna.create_study(direction="minimize", sampler=sampler)
    distributions = space.distributions()

    def run(point: Dict[str, Any]):
        started = time.time()
        try:
            loss = float(objective(point))
            status = "ok" if np.isfinite(loss) else "failed"
        except Exception as e:
            logger.debug(f"TPE trial failed: {e}")
            loss, status = float("nan"), "failed"
        if status == "failed":
            loss = failure_loss
        return loss, status, time.time() - started

    done = 0
    while done < n_trials:
        batch = min(n_startup - done, n_trials - done) if done < n_startup else 1
        trials = [study.ask(fixed_distributions=distributions) for _ in range(batch)]
        outcomes = Parallel(n_jobs=n_jobs if batch > 1 else 1)(delayed(run)(dict(t.params)) for t in trials)
        for trial, (loss, status, wall) in zip(trials, outcomes):
            study.tell(trial, loss)
            state.history.append((dict(trial.params), loss))
            ledger.append({"kind": "hp-point", "trial": trial.number, "payload": dict(trial.params),
                           "fold_scores": [], "penalty": 0.0, "loss": loss, "status": status,
                           "wall_time": round(wall, 3)})
        done += batch
        if done % 10 == 0 or done == n_trials:
            logger.info(f"TPE {done}/{n_trials} trials, best loss {min(l for _, l in state.history):.4f}")

    best = ledger.best()
    return TuningResult(dict(best["payload"]), float(best["loss"]), state, ledger)


def cv_objective(family: Union[ModelFamily, str], X: np.ndarray, y: np.ndarray, folds: int, seed: int,
                 fixed: Optional[Dict[str, Any]] = None) -> Callable[[Dict[str, Any]], float]:
    """Objective 1 - mean k-fold normed MCC for a hyperparameter point."""
    factory = family_factory(ModelFamily(family), fixed)

    def objective(point: Dict[str, Any]) -> float:
        scores = cross_validate(lambda s: factory(point, s), X, y, folds, seed)
        return 1.0 - float(np.mean(scores))
    return objective
