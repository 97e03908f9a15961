import logging
from dataclasses import dataclass, field, replace
from itertools import combinations
from math import comb, floor
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from classifier import FitnessEvaluator, FitnessProtocol
from dataset import Dataset

Bounds = Tuple[int, int]
Evaluator = Callable[[np.ndarray], float]

STOP_MAX_ITERATIONS = "max_iterations"
STOP_PERFECT = "perfect_fitness"
STOP_STALLED = "stalled"


class ColonyConfigError(ValueError):
    """Raised when a colony configuration is infeasible; lists every violation"""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ColonyInvariantError(RuntimeError):
    """An internal colony invariant was broken; always a defect"""


# ---- feature masks -------------------------------------------------------

def popcount(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


def mask_from_indices(n_features: int, indices: Sequence[int]) -> np.ndarray:
    mask = np.zeros(n_features, dtype=bool)
    mask[list(indices)] = True
    return mask


def mask_indices(mask: np.ndarray) -> List[int]:
    return [int(i) for i in np.flatnonzero(mask)]


def _random_mask(n_features: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return mask_from_indices(n_features, rng.choice(n_features, size=k, replace=False))


# ---- colony types --------------------------------------------------------

@dataclass(frozen=True)
class ColonyConfig:
    population_size: int = 20
    limit: int = 10
    lower_bound: int = 1
    upper_bound: Optional[int] = None  # None means every feature
    max_iterations: int = 100
    seed: int = 0
    stall_iterations: Optional[int] = None

    def bounds(self, n_features: int) -> Bounds:
        """Effective popcount window; an evaluated subset always keeps one feature"""
        upper = n_features if self.upper_bound is None else self.upper_bound
        return max(self.lower_bound, 1), upper

    def violations(self, n_features: int) -> List[str]:
        lower = self.lower_bound
        upper = n_features if self.upper_bound is None else self.upper_bound
        problems = []
        if self.population_size < 2:
            problems.append(f"population_size must be at least 2, got {self.population_size}")
        if self.limit < 0:
            problems.append(f"limit must be non-negative, got {self.limit}")
        if self.max_iterations < 0:
            problems.append(f"max_iterations must be non-negative, got {self.max_iterations}")
        if self.seed < 0:
            problems.append(f"seed must be non-negative, got {self.seed}")
        # Fixed-size windows (lower == upper) pin the subset size and are exempt from n/2.
        if lower < 0 or (lower != upper and lower > n_features / 2):
            problems.append(
                f"lower_bound must lie in [0, n/2] = [0, {n_features / 2:g}] "
                f"unless it equals upper_bound, got {lower}"
            )
        if not lower <= upper <= n_features:
            problems.append(
                f"upper_bound must lie in [lower_bound, n] = [{lower}, {n_features}], got {upper}"
            )
        if upper < 1:
            problems.append("upper_bound must allow at least one selected feature")
        if self.stall_iterations is not None and self.stall_iterations < 1:
            problems.append(f"stall_iterations must be at least 1, got {self.stall_iterations}")
        return problems

    def check(self, n_features: int):
        problems = self.violations(n_features)
        if problems:
            raise ColonyConfigError(problems)


@dataclass
class FoodSource:
    mask: np.ndarray
    fitness: Optional[float] = None
    trials: int = 0


@dataclass
class RunResult:
    best_mask: np.ndarray
    best_fitness: float
    history: List[float] = field(default_factory=list)
    evaluations: int = 0
    unique_evaluations: int = 0
    scout_events: int = 0
    iterations_run: int = 0
    stop_reason: str = STOP_MAX_ITERATIONS

    @property
    def selected(self) -> List[int]:
        return mask_indices(self.best_mask)

    def to_dict(self) -> dict:
        return {
            "best_fitness": self.best_fitness,
            "selected_indices": self.selected,
            "n_selected": len(self.selected),
            "history": list(self.history),
            "evaluations": self.evaluations,
            "unique_evaluations": self.unique_evaluations,
            "scout_events": self.scout_events,
            "iterations_run": self.iterations_run,
            "stop_reason": self.stop_reason,
        }


# ---- phase operations ----------------------------------------------------

def init_colony(config: ColonyConfig, n_features: int, rng: np.random.Generator) -> List[FoodSource]:
    """population_size unevaluated sources, each with a popcount drawn uniformly from the bounds"""
    config.check(n_features)
    lower, upper = config.bounds(n_features)
    colony = []
    for _ in range(config.population_size):
        k = int(rng.integers(lower, upper + 1))
        colony.append(FoodSource(mask=_random_mask(n_features, k, rng)))
    return colony


def repair_bounds(mask: np.ndarray, bounds: Bounds, rng: np.random.Generator) -> np.ndarray:
    """Set or clear uniformly chosen bits until the popcount is inside bounds"""
    lower, upper = bounds
    mask = np.array(mask, dtype=bool)
    count = popcount(mask)
    if count < lower:
        unset = np.flatnonzero(~mask)
        mask[rng.choice(unset, size=lower - count, replace=False)] = True
    elif count > upper:
        chosen = np.flatnonzero(mask)
        mask[rng.choice(chosen, size=count - upper, replace=False)] = False
    return mask


def crossover_bits(own: np.ndarray, partner: np.ndarray, v: float, rng: np.random.Generator) -> np.ndarray:
    """Child of own that adopts each differing bit of partner with probability |v|"""
    own = np.asarray(own, dtype=bool)
    partner = np.asarray(partner, dtype=bool)
    if own.shape != partner.shape:
        raise ValueError(f"Mask length mismatch: {own.shape[0]} vs {partner.shape[0]}")
    adopt = (own != partner) & (rng.random(own.shape[0]) < abs(v))
    return np.where(adopt, partner, own)


def generate_neighbor(own: np.ndarray, partner: np.ndarray, bounds: Bounds, rng: np.random.Generator) -> np.ndarray:
    """Discrete neighbour V_i = x_i + v * (x_i - x_j) over bit positions.

    v is uniform in [-1, 1]; |v| is how far the child moves from own toward
    partner. The child is repaired back into the cardinality window.
    """
    v = rng.uniform(-1.0, 1.0)
    return repair_bounds(crossover_bits(own, partner, v, rng), bounds, rng)


def greedy_select(current: FoodSource, candidate_mask: np.ndarray, evaluator: Evaluator) -> FoodSource:
    """Keep the candidate only on strict improvement; otherwise count a failed trial"""
    fitness = evaluator(candidate_mask)
    if current.fitness is None or fitness > current.fitness:
        return FoodSource(mask=candidate_mask, fitness=fitness, trials=0)
    return replace(current, trials=current.trials + 1)


def onlooker_probabilities(colony: Sequence[FoodSource]) -> np.ndarray:
    """Roulette weights proportional to fitness; uniform when every fitness is 0"""
    fitness = np.array([source.fitness for source in colony], dtype=np.float64)
    total = fitness.sum()
    if total <= 0:
        return np.full(len(colony), 1.0 / len(colony))
    return fitness / total


def scout_reset(config: ColonyConfig, n_features: int, rng: np.random.Generator) -> np.ndarray:
    """Fresh random mask with k = round(lower + v' * (upper - lower)), v' uniform in [0, 1].

    Anchored at the lower bound so k always stays inside the window.
    """
    lower, upper = config.bounds(n_features)
    k = int(floor(lower + rng.random() * (upper - lower) + 0.5))
    return _random_mask(n_features, k, rng)


# ---- driver --------------------------------------------------------------

class ABCOptimizer:
    """Discrete artificial bee colony over feature masks.

    Every phase draws its candidates from the single run RNG against the
    colony as it stood at phase start, scores them (possibly concurrently,
    through the evaluator cache) and applies greedy replacement in source
    order, so results do not depend on the worker count.

    Own and partner masks both come from that start-of-phase snapshot. An
    onlooker that picks a source already replaced earlier in the same phase
    still builds its candidate from the snapshot mask, but greedy selection
    compares it against the source's current fitness.
    """

    def __init__(self, config: ColonyConfig, n_features: int, evaluator: Evaluator):
        config.check(n_features)
        self.config = config
        self.n_features = n_features
        self.bounds = config.bounds(n_features)
        self.evaluator = evaluator
        self.rng = np.random.default_rng(config.seed)
        self.colony: List[FoodSource] = []
        self.evaluations = 0
        self.scout_events = 0
        self.logger = logging.getLogger('ABCOptimizer')

    def _check_mask(self, mask: np.ndarray):
        lower, upper = self.bounds
        if mask.shape != (self.n_features,) or not lower <= popcount(mask) <= upper:
            raise ColonyInvariantError(
                f"Mask with popcount {popcount(mask)} escaped bounds {self.bounds}"
            )

    def _evaluate(self, mask: np.ndarray) -> float:
        self._check_mask(mask)
        self.evaluations += 1
        return self.evaluator(mask)

    def _prefetch(self, masks: List[np.ndarray]):
        prefetch = getattr(self.evaluator, "prefetch", None)
        if prefetch is not None:
            prefetch(masks)

    def _partner(self, index: int) -> int:
        other = int(self.rng.integers(len(self.colony) - 1))
        return other if other < index else other + 1

    def _apply(self, targets: List[int], candidates: List[np.ndarray]):
        self._prefetch(candidates)
        for index, candidate in zip(targets, candidates):
            self.colony[index] = greedy_select(self.colony[index], candidate, self._evaluate)

    def employed_phase(self):
        snapshot = [source.mask for source in self.colony]
        targets = list(range(len(self.colony)))
        candidates = [
            generate_neighbor(snapshot[i], snapshot[self._partner(i)], self.bounds, self.rng)
            for i in targets
        ]
        self._apply(targets, candidates)

    def onlooker_phase(self):
        snapshot = [source.mask for source in self.colony]
        probabilities = onlooker_probabilities(self.colony)
        targets = [int(i) for i in self.rng.choice(len(self.colony), size=len(self.colony), p=probabilities)]
        candidates = [
            generate_neighbor(snapshot[i], snapshot[self._partner(i)], self.bounds, self.rng)
            for i in targets
        ]
        self._apply(targets, candidates)

    def scout_phase(self) -> bool:
        trials = np.array([source.trials for source in self.colony])
        if not (trials > self.config.limit).any():
            return False
        # argmax returns the lowest index among equal trial counts
        index = int(np.argmax(np.where(trials > self.config.limit, trials, -1)))
        mask = scout_reset(self.config, self.n_features, self.rng)
        self.colony[index] = FoodSource(mask=mask, fitness=self._evaluate(mask), trials=0)
        self.scout_events += 1
        self.logger.debug(f"Scout replaced source {index} after {trials[index]} failed trials")
        return True

    def _best(self) -> Tuple[int, float]:
        fitness = [source.fitness for source in self.colony]
        index = int(np.argmax(fitness))
        return index, fitness[index]

    def run(self) -> RunResult:
        cfg = self.config
        self.colony = init_colony(cfg, self.n_features, self.rng)
        masks = [source.mask for source in self.colony]
        self._prefetch(masks)
        for source in self.colony:
            source.fitness = self._evaluate(source.mask)

        index, best_fitness = self._best()
        best_mask = self.colony[index].mask.copy()
        history = [best_fitness]
        stop_reason = STOP_MAX_ITERATIONS
        stalled = 0
        iterations = 0

        for t in range(cfg.max_iterations):
            if best_fitness >= 1.0:
                stop_reason = STOP_PERFECT
                break
            if cfg.stall_iterations is not None and stalled >= cfg.stall_iterations:
                stop_reason = STOP_STALLED
                break

            self.employed_phase()
            self.onlooker_phase()
            self.scout_phase()
            iterations += 1

            index, fitness = self._best()
            if fitness > best_fitness:
                best_fitness = fitness
                best_mask = self.colony[index].mask.copy()
                stalled = 0
            else:
                stalled += 1
            if best_fitness < history[-1]:
                raise ColonyInvariantError("Best-so-far fitness decreased")
            history.append(best_fitness)
            self.logger.debug(f"Iteration {t + 1}: best fitness {best_fitness:.4f}")

        self._check_mask(best_mask)
        unique = getattr(self.evaluator, "unique_evaluations", self.evaluations)
        self.logger.info(
            f"ABC finished after {iterations} iterations ({stop_reason}): "
            f"best fitness {best_fitness:.4f} with {popcount(best_mask)} features, "
            f"{self.evaluations} evaluations, {self.scout_events} scout events"
        )
        return RunResult(
            best_mask=best_mask,
            best_fitness=best_fitness,
            history=history,
            evaluations=self.evaluations,
            unique_evaluations=unique,
            scout_events=self.scout_events,
            iterations_run=iterations,
            stop_reason=stop_reason,
        )


def run(config: ColonyConfig, dataset: Dataset, protocol: FitnessProtocol, workers: int = 1) -> RunResult:
    """Search feature masks of dataset for the highest validation accuracy"""
    evaluator = FitnessEvaluator(dataset, protocol, workers=workers)
    return ABCOptimizer(config, dataset.n_features, evaluator).run()


def exhaustive_search(
    dataset: Dataset,
    protocol: FitnessProtocol,
    bounds: Bounds,
    max_masks: int = 100_000,
) -> Tuple[np.ndarray, float]:
    """Score every mask whose popcount lies in bounds; the first best mask wins ties.

    Masks are enumerated by size, then lexicographically by selected indices.
    """
    n = dataset.n_features
    lower, upper = bounds
    total = sum(comb(n, k) for k in range(max(lower, 1), upper + 1))
    if total > max_masks:
        raise ValueError(f"{total} masks in bounds {bounds} exceed max_masks={max_masks}")

    evaluator = FitnessEvaluator(dataset, protocol)
    best_mask, best_fitness = None, -1.0
    for k in range(max(lower, 1), upper + 1):
        for indices in combinations(range(n), k):
            mask = mask_from_indices(n, indices)
            fitness = evaluator(mask)
            if fitness > best_fitness:
                best_mask, best_fitness = mask, fitness
    return best_mask, best_fitness
