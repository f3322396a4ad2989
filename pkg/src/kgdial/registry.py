"""Knowledge-source declarations and the dependency graph over them.

A registry holds an ordered set of sources, each with a human-readable
description (used verbatim in unsupervised prompts) and a list of sources it
depends on. The graph must stay acyclic; a plan is only legal if every source
appears after all of its dependencies.
"""

from __future__ import annotations

import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from .errors import CycleDetected, DuplicateSource, UnknownDependency, UnknownSource

SourceId = str

PERSONA: SourceId = "PERSONA"
DOCUMENTS: SourceId = "DOCUMENTS"

# Uppercase token, as it appears in prompts and serialized decisions.
_NAME_RE = re.compile(r"^[A-Z][A-Z0-9_]*$")

PERSONA_DESCRIPTION = (
    "This knowledge base stores information related to system personas, "
    "such as gender, age, place of origin, hobbies, personality traits, "
    "and other relevant data."
)
DOCUMENTS_DESCRIPTION = (
    "This knowledge base stores domain-specific knowledge related to system "
    "personas, such as the domain knowledge about the place of origin."
)


@dataclass(frozen=True)
class SourceSpec:
    name: SourceId
    description: str
    depends_on: tuple[SourceId, ...] = ()

    def __post_init__(self) -> None:
        if not _NAME_RE.match(self.name):
            raise ValueError(f"source name must be an uppercase token: {self.name!r}")
        object.__setattr__(self, "depends_on", tuple(self.depends_on))


@dataclass(frozen=True)
class SourceRegistry:
    specs: tuple[SourceSpec, ...] = field(default_factory=tuple)

    @property
    def names(self) -> tuple[SourceId, ...]:
        return tuple(s.name for s in self.specs)

    def __contains__(self, name: object) -> bool:
        return any(s.name == name for s in self.specs)

    def __len__(self) -> int:
        return len(self.specs)

    def get(self, name: SourceId) -> SourceSpec:
        for spec in self.specs:
            if spec.name == name:
                return spec
        raise UnknownSource(f"source not registered: {name!r}")

    def register(self, spec: SourceSpec) -> SourceRegistry:
        if spec.name in self:
            raise DuplicateSource(f"source already registered: {spec.name!r}")
        # Self-dependency is a cycle even when the name is otherwise unknown.
        if spec.name in spec.depends_on:
            raise CycleDetected(f"source depends on itself: {spec.name!r}")
        for dep in spec.depends_on:
            if dep not in self:
                raise UnknownDependency(
                    f"{spec.name!r} depends on unregistered source {dep!r}"
                )
        updated = SourceRegistry(self.specs + (spec,))
        updated._check_acyclic()
        return updated

    def _check_acyclic(self) -> None:
        # Iterative DFS with tricolor marking; registration normally makes
        # cycles impossible, but direct construction can bypass register().
        WHITE, GRAY, BLACK = 0, 1, 2
        color = {s.name: WHITE for s in self.specs}
        for root in color:
            if color[root] != WHITE:
                continue
            stack: list[tuple[SourceId, int]] = [(root, 0)]
            color[root] = GRAY
            while stack:
                name, i = stack[-1]
                deps = self.get(name).depends_on
                if i < len(deps):
                    stack[-1] = (name, i + 1)
                    dep = deps[i]
                    if dep not in color:
                        raise UnknownDependency(
                            f"{name!r} depends on unregistered source {dep!r}"
                        )
                    if color[dep] == GRAY:
                        raise CycleDetected(f"dependency cycle through {dep!r}")
                    if color[dep] == WHITE:
                        color[dep] = GRAY
                        stack.append((dep, 0))
                else:
                    color[name] = BLACK
                    stack.pop()

    def edges(self) -> tuple[tuple[SourceId, SourceId], ...]:
        """(dependency, dependent) pairs in registration order."""
        return tuple(
            (dep, spec.name) for spec in self.specs for dep in spec.depends_on
        )

    def dependency_closure(self, names: Iterable[SourceId]) -> frozenset[SourceId]:
        """The given sources plus everything they transitively depend on."""
        seen: set[SourceId] = set()
        frontier = list(names)
        while frontier:
            name = frontier.pop()
            if name in seen:
                continue
            seen.add(name)
            frontier.extend(self.get(name).depends_on)
        return frozenset(seen)

    def validate_order(self, order: Sequence[SourceId]) -> bool:
        """True iff every source's dependencies all appear earlier in `order`."""
        for name in order:
            self.get(name)
        emitted: set[SourceId] = set()
        for name in order:
            if any(dep not in emitted for dep in self.get(name).depends_on):
                return False
            emitted.add(name)
        return True

    def topological(self, names: Sequence[SourceId]) -> tuple[SourceId, ...]:
        """Reorder `names` to respect dependencies, keeping input order where
        the graph allows (earliest-ready-first Kahn)."""
        pending = list(dict.fromkeys(names))
        for name in pending:
            self.get(name)
        listed = set(pending)
        emitted: list[SourceId] = []
        done: set[SourceId] = set()
        while pending:
            for idx, name in enumerate(pending):
                deps = [d for d in self.get(name).depends_on if d in listed]
                if all(d in done for d in deps):
                    emitted.append(name)
                    done.add(name)
                    del pending[idx]
                    break
            else:
                raise CycleDetected(f"no dependency-respecting order for {pending!r}")
        return tuple(emitted)


def register(spec: SourceSpec, registry: SourceRegistry) -> SourceRegistry:
    return registry.register(spec)


def validate_order(order: Sequence[SourceId], registry: SourceRegistry) -> bool:
    return registry.validate_order(order)


def registry_from_config(obj: dict) -> SourceRegistry:
    """Build from the config shape {"sources": [{name, description, depends_on}]}.

    Sources must be listed with dependencies before dependents.
    """
    registry = SourceRegistry()
    for entry in obj.get("sources", []):
        registry = registry.register(
            SourceSpec(
                name=entry["name"],
                description=entry.get("description", ""),
                depends_on=tuple(entry.get("depends_on", ())),
            )
        )
    return registry


def registry_to_config(registry: SourceRegistry) -> dict:
    return {
        "sources": [
            {
                "name": s.name,
                "description": s.description,
                "depends_on": list(s.depends_on),
            }
            for s in registry.specs
        ]
    }


def persona_knowledge_registry() -> SourceRegistry:
    """The default two-source setup: documents are keyed by persona."""
    registry = SourceRegistry()
    registry = registry.register(SourceSpec(PERSONA, PERSONA_DESCRIPTION))
    registry = registry.register(
        SourceSpec(DOCUMENTS, DOCUMENTS_DESCRIPTION, depends_on=(PERSONA,))
    )
    return registry
