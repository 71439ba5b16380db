"""Disjoint keyed subsets of neurons, grouped by exact owner-task combination.

Every neuron belongs to exactly one subset: the set of tasks that selected
it (possibly several), or the common subset if no task selected it. Each
subset is the unit of AES key assignment, and its access policy is the OR
of its owner tasks' user-level policies (common subset: OR over all tasks),
so a deployer authorized for any owning task can decrypt the shared neuron.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import IndexOutOfRange, MissingTaskPolicy
from .policy import PolicyNode, or_
from .selector import SelectionResult

COMMON = frozenset()  # owner set of the common subset


@dataclass(frozen=True)
class Subset:
    subset_id: int
    owners: frozenset[str]  # empty = common subset
    neurons: tuple[int, ...]  # sorted global indices

    @property
    def is_common(self) -> bool:
        return not self.owners


@dataclass
class SubsetPartition:
    tasks: list[str]  # all tasks, sorted; defines owner bitmap order
    subsets: list[Subset]
    total_neurons: int

    def by_id(self, subset_id: int) -> Subset:
        return self.subsets[subset_id]

    def subset_of(self) -> list[int]:
        """subset_id per global neuron index (the key-map F content)."""
        out = [-1] * self.total_neurons
        for sub in self.subsets:
            for n in sub.neurons:
                out[n] = sub.subset_id
        return out


def decompose_subsets(
    selection: SelectionResult | Mapping[str, Sequence[int]],
    total_neurons: int,
) -> SubsetPartition:
    """Partition all neurons by the exact set of tasks that selected them.

    Subset ids are deterministic: non-common subsets ordered by their sorted
    owner tuple (lexicographic), the common subset last. Empty combinations
    are omitted.
    """
    sets = selection.sets if isinstance(selection, SelectionResult) else selection
    for task, neurons in sets.items():
        for n in neurons:
            if not 0 <= n < total_neurons:
                raise IndexOutOfRange(
                    f"task {task!r} selects neuron {n}, model has {total_neurons}"
                )
    owners_of: dict[int, frozenset[str]] = {}
    for task, neurons in sets.items():
        for n in neurons:
            owners_of[n] = owners_of.get(n, frozenset()) | {task}
    groups: dict[frozenset[str], list[int]] = {}
    for n in range(total_neurons):
        groups.setdefault(owners_of.get(n, COMMON), []).append(n)
    keys = sorted(
        (owners for owners in groups if owners != COMMON),
        key=lambda owners: tuple(sorted(owners)),
    )
    if COMMON in groups:
        keys.append(COMMON)
    subsets = [
        Subset(subset_id=i, owners=owners, neurons=tuple(sorted(groups[owners])))
        for i, owners in enumerate(keys)
    ]
    return SubsetPartition(
        tasks=sorted(sets.keys()), subsets=subsets, total_neurons=total_neurons
    )


def build_policies(
    partition: SubsetPartition, user_policies: Mapping[str, PolicyNode]
) -> dict[int, PolicyNode]:
    """Neuron-level policy per subset: OR over the owner tasks' user policies.

    A single-owner subset collapses to that task's policy; the common subset
    gets the OR over every task (any authorized task may use common neurons).
    """
    for task in partition.tasks:
        if task not in user_policies:
            raise MissingTaskPolicy(f"no user policy for task {task!r}")
    out: dict[int, PolicyNode] = {}
    for sub in partition.subsets:
        owners = sorted(sub.owners) if not sub.is_common else list(partition.tasks)
        trees = [user_policies[t] for t in owners]
        out[sub.subset_id] = trees[0] if len(trees) == 1 else or_(*trees)
    return out
