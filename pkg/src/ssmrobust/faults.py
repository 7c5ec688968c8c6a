"""Bit-exact fault injection into 32-bit parameters and activations.

A fault plan is an explicit list of (key, element index, bit index) triples
drawn uniformly without replacement over every addressable (element, bit)
pair inside a bit region. Plans are deterministic given their seed, apply to
deep copies (the pristine tree is never touched), and applying a plan twice
restores the original bits exactly.

Drivers: random (global) trials, layer-filtered trials, and a worst-case
random-search adversary ranked by a fast evaluation on the first batches.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import BudgetError, FilterError, PlanError, TaxonomyError
from .model import ACTIVATION_SITES, GROUPS, group_of_key
from .rng import make_rng
from .training import evaluate_accuracy

REGION_BITS = {
    "sign": (31,),
    "exponent": tuple(range(23, 31)),
    "mantissa": tuple(range(0, 23)),
    "any": tuple(range(0, 32)),
}

RANDOM_SEED_BASE = 1234
SEARCH_SEED_BASE = 9000


def region_bits(region: str) -> tuple:
    if region not in REGION_BITS:
        raise ValueError(f"unknown bit region {region!r}; expected one of {sorted(REGION_BITS)}")
    return REGION_BITS[region]


def flip_bit(value, k: int):
    """Toggle bit k of a 32-bit float's raw pattern (XOR with 1 << k)."""
    if not 0 <= k <= 31:
        raise ValueError(f"bit index {k} outside [0, 31]")
    pattern = np.array(value, dtype="<f4").view("<u4")
    pattern ^= np.uint32(1) << np.uint32(k)
    return np.float32(pattern.view("<f4")[()])


@dataclass(frozen=True)
class FaultPlan:
    """Explicit flip targets; budget K equals the number of triples."""

    targets: tuple  # of (key, element_index, bit_index)
    region: str
    seed: int
    key_filter: str | None = None

    @property
    def budget(self) -> int:
        return len(self.targets)

    def manifest_lines(self):
        """Line-delimited records: key<TAB>element<TAB>bit."""
        return [f"{k}\t{e}\t{b}" for k, e, b in self.targets]


def _filtered_keys(tree: dict, key_filter):
    if key_filter is None or key_filter == "":
        keys = list(tree)
    elif key_filter in GROUPS:
        keys = [k for k in tree if group_of_key(k) == key_filter]
    else:
        keys = [k for k in tree if key_filter in k]
    if not keys:
        raise FilterError(f"key filter {key_filter!r} matched no parameters")
    return keys


def _sample_distinct(rng, total: int, k: int):
    """k distinct integers in [0, total), uniform without replacement."""
    chosen = []
    seen = set()
    while len(chosen) < k:
        draw = int(rng.integers(0, total))
        if draw not in seen:
            seen.add(draw)
            chosen.append(draw)
    return chosen


def generate_plan(tree: dict, budget: int, region: str, seed: int,
                  key_filter=None) -> FaultPlan:
    """Sample ``budget`` distinct (element, region-bit) targets from a tree.

    Sampling is uniform over all addressable pairs of the filtered
    parameters, so larger tensors absorb proportionally more faults.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    bits = region_bits(region)
    keys = _filtered_keys(tree, key_filter)
    sizes = [tree[k].size for k in keys]
    offsets = np.cumsum([0] + sizes)
    total_pairs = int(offsets[-1]) * len(bits)
    if budget > total_pairs:
        raise BudgetError(
            f"budget {budget} exceeds {total_pairs} addressable (element, bit) pairs"
        )
    rng = make_rng(seed)
    targets = []
    for idx in _sample_distinct(rng, total_pairs, budget):
        elem_global, bit_pos = divmod(idx, len(bits))
        which = int(np.searchsorted(offsets, elem_global, side="right")) - 1
        targets.append((keys[which], elem_global - int(offsets[which]), bits[bit_pos]))
    return FaultPlan(tuple(targets), region, seed, key_filter)


def apply_plan(tree: dict, plan: FaultPlan) -> dict:
    """Deep copy of the tree with exactly the planned bits toggled."""
    out = {k: Tensor(t.data.copy()) for k, t in tree.items()}
    for key, elem, bit in plan.targets:
        if key not in out:
            raise PlanError(f"plan references unknown key {key!r}")
        arr = out[key].data
        if not 0 <= elem < arr.size:
            raise PlanError(f"plan references element {elem} outside {key!r} (size {arr.size})")
        if not 0 <= bit <= 31:
            raise PlanError(f"plan references bit {bit} outside [0, 31]")
        flat = arr.reshape(-1).view(np.uint32)
        flat[elem] ^= np.uint32(1) << np.uint32(bit)
    return out


@dataclass
class TrialRecord:
    seed: int
    accuracy: float
    nonfinite: int
    plan: FaultPlan


@dataclass
class TrialStats:
    """Accuracy statistics over the T trials of one budget (and group)."""

    budget: int
    mean: float
    std: float  # population std over the trials
    accuracies: list
    baseline: float
    region: str
    group: str | None = None
    records: list = field(default_factory=list)


def _stats(budget, records, baseline, region, group=None) -> TrialStats:
    accs = [r.accuracy for r in records]
    return TrialStats(
        budget=budget,
        mean=float(np.mean(accs)),
        std=float(np.std(accs)),
        accuracies=accs,
        baseline=baseline,
        region=region,
        group=group,
        records=records,
    )


def random_bitflip_eval(model, params, test_split, budgets, trials: int,
                        region: str = "any", seed_base: int = RANDOM_SEED_BASE,
                        batch_size: int = 128, key_filter=None):
    """Mean/std accuracy per budget over seeded global bit-flip trials.

    Trial t uses seed ``seed_base + t`` (t = 1..trials); every trial starts
    from the pristine tree. Returns (baseline accuracy, [TrialStats per K]).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not budgets:
        raise ValueError("budgets must be non-empty")
    baseline, _ = evaluate_accuracy(model, params, test_split, batch_size)
    results = []
    for budget in budgets:
        records = []
        for t in range(1, trials + 1):
            seed = seed_base + t
            plan = generate_plan(params, budget, region, seed, key_filter)
            mutated = apply_plan(params, plan)
            acc, nonfinite = evaluate_accuracy(model, mutated, test_split, batch_size)
            records.append(TrialRecord(seed, acc, nonfinite, plan))
        results.append(_stats(budget, records, baseline, region, key_filter))
    return baseline, results


def layerwise_bitflip_eval(model, params, test_split, budgets, trials: int,
                           region: str = "any", groups=GROUPS,
                           seed_base: int = RANDOM_SEED_BASE,
                           batch_size: int = 128):
    """Random trials restricted to one architectural group at a time."""
    baseline, _ = evaluate_accuracy(model, params, test_split, batch_size)
    results = []
    for budget in budgets:
        for group in groups:
            records = []
            for t in range(1, trials + 1):
                seed = seed_base + t
                plan = generate_plan(params, budget, region, seed, key_filter=group)
                mutated = apply_plan(params, plan)
                acc, nonfinite = evaluate_accuracy(model, mutated, test_split, batch_size)
                records.append(TrialRecord(seed, acc, nonfinite, plan))
            results.append(_stats(budget, records, baseline, region, group))
    return baseline, results


@dataclass
class SearchResult:
    budget: int
    seed: int
    fast_accuracy: float
    full_accuracy: float
    baseline: float
    region: str
    plan: FaultPlan
    candidates: list  # (seed, fast accuracy) per iteration


def worstcase_bitflip_search(model, params, test_split, budgets, region: str,
                             iterations: int, fast_batches: int,
                             key_filter=None, seed_base: int = SEARCH_SEED_BASE,
                             batch_size: int = 128):
    """Random-search adversary: minimize fast accuracy, re-check on full split.

    Candidate i uses seed ``seed_base + i``; the fast score is accuracy on
    the first ``fast_batches`` batches in canonical dataset order, ties going
    to the earliest seed. Returns (baseline, [SearchResult per K]).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    n = len(test_split.labels)
    n_batches = (n + batch_size - 1) // batch_size
    if not 1 <= fast_batches <= n_batches:
        raise ValueError(
            f"fast_batches must lie in [1, {n_batches}] for {n} samples at batch {batch_size}"
        )
    fast_split = test_split.subset(slice(0, min(fast_batches * batch_size, n)))

    baseline, _ = evaluate_accuracy(model, params, test_split, batch_size)
    results = []
    for budget in budgets:
        best_seed = None
        best_fast = np.inf
        best_plan = None
        candidates = []
        for i in range(1, iterations + 1):
            seed = seed_base + i
            plan = generate_plan(params, budget, region, seed, key_filter)
            mutated = apply_plan(params, plan)
            fast_acc, _ = evaluate_accuracy(model, mutated, fast_split, batch_size)
            candidates.append((seed, fast_acc))
            if fast_acc < best_fast:
                best_fast = fast_acc
                best_seed = seed
                best_plan = plan
        winner = apply_plan(params, best_plan)
        full_acc, _ = evaluate_accuracy(model, winner, test_split, batch_size)
        results.append(
            SearchResult(budget, best_seed, best_fast, full_acc, baseline, region,
                         best_plan, candidates)
        )
    return baseline, results


def activation_flip_targets(shape, budget: int, region: str, seed: int):
    """Distinct (flat element, bit) pairs for one activation tensor."""
    bits = region_bits(region)
    total = int(np.prod(shape, dtype=np.int64)) * len(bits)
    if budget > total:
        raise BudgetError(f"budget {budget} exceeds {total} addressable pairs")
    rng = make_rng(seed)
    out = []
    for idx in _sample_distinct(rng, total, budget):
        elem, bit_pos = divmod(idx, len(bits))
        out.append((elem, bits[bit_pos]))
    return out


def xor_bits_inplace(arr: np.ndarray, targets) -> np.ndarray:
    flat = arr.reshape(-1).view(np.uint32)
    for elem, bit in targets:
        flat[elem] ^= np.uint32(1) << np.uint32(bit)
    return arr


def inject_activation_faults(model, params, x, target_group: str, budget: int,
                             region: str = "any", seed: int = 0) -> Tensor:
    """One forward pass with bit flips in a single module's output tensor.

    This extends the weight-only drivers to in-memory activations; reports
    produced from it are flagged as activation faults.
    """
    if target_group not in ACTIVATION_SITES:
        raise TaxonomyError(
            f"unknown activation site {target_group!r}; expected one of {ACTIVATION_SITES}"
        )
    state = {"targets": None}

    def tap(arr):
        if state["targets"] is None:
            state["targets"] = activation_flip_targets(arr.shape, budget, region, seed)
        return xor_bits_inplace(arr, state["targets"])

    return model.forward(params, x, activation_taps={target_group: tap})
