"""Concept annotations and conjunction task labels derived from generative factors."""
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from src.models.data_model import ConceptDef, Criterion, CriterionKind
from src.spritegen.errors import TaskDefinitionError
from src.spritegen.factors import FactorSpec

FACTOR_ALIASES = {"x": "x_pos", "y": "y_pos"}


def criterion_holds(criterion: Criterion, factors: FactorSpec) -> bool:
    """Exact match for categorical factors, strict '>' for continuous ones."""
    value = factors.value(criterion.factor)
    if criterion.kind == CriterionKind.equals:
        return value == criterion.value
    return value > float(criterion.value)


def derive_concepts(factors: FactorSpec, concept_defs: Sequence[ConceptDef]) -> np.ndarray:
    return np.array([criterion_holds(c, factors) for c in concept_defs], dtype=bool)


class TaskDef(BaseModel):
    """Binary conjunction task over two distinct generative factors."""
    model_config = ConfigDict(frozen=True)

    criterion_a: Criterion
    criterion_b: Criterion

    @model_validator(mode="after")
    def check_distinct(self):
        if self.criterion_a.factor == self.criterion_b.factor:
            raise ValueError(f"task factors must differ, both are '{self.criterion_a.factor}'")
        return self

    @property
    def criteria(self) -> List[Criterion]:
        return [self.criterion_a, self.criterion_b]

    def describe(self) -> str:
        return ",".join(c.describe() for c in self.criteria)

    @classmethod
    def parse(cls, text: str, presets: dict = None) -> "TaskDef":
        """
        Parse "shape=square,x>0.5" style definitions, or "preset:<name>".
        """
        text = text.strip()
        if text.startswith("preset:"):
            name = text.split(":", 1)[1]
            if not presets or name not in presets:
                raise TaskDefinitionError(f"Unknown task preset '{name}'; known: {sorted(presets or {})}")
            text = presets[name]

        parts = [p.strip() for p in text.split(",") if p.strip()]
        if len(parts) != 2:
            raise TaskDefinitionError(f"Task needs exactly two criteria, got {len(parts)} in '{text}'")
        criteria = []
        for part in parts:
            if "=" in part:
                factor, value = part.split("=", 1)
                kind = CriterionKind.equals
            elif ">" in part:
                factor, value = part.split(">", 1)
                kind = CriterionKind.greater
                try:
                    value = float(value)
                except ValueError:
                    raise TaskDefinitionError(f"Threshold in '{part}' is not a number") from None
            else:
                raise TaskDefinitionError(f"Criterion '{part}' needs '=' or '>'")
            factor = factor.strip()
            factor = FACTOR_ALIASES.get(factor, factor)
            try:
                criteria.append(Criterion(factor=factor, kind=kind, value=value.strip() if isinstance(value, str) else value))
            except ValidationError as e:
                raise TaskDefinitionError(f"Invalid criterion '{part}': {e.errors()[0]['msg']}") from None
        try:
            return cls(criterion_a=criteria[0], criterion_b=criteria[1])
        except ValidationError as e:
            raise TaskDefinitionError(f"Invalid task '{text}': {e.errors()[0]['msg']}") from None


def task_label_from_factors(factors: FactorSpec, task: TaskDef) -> int:
    return int(all(criterion_holds(c, factors) for c in task.criteria))


def task_concept_indices(task: TaskDef, concept_defs: Sequence[ConceptDef]) -> List[int]:
    """Positions of the annotated concepts that coincide with the task's criteria."""
    indices = []
    for criterion in task.criteria:
        matches = [i for i, c in enumerate(concept_defs)
                   if c.factor == criterion.factor and c.kind == criterion.kind and c.value == criterion.value]
        if not matches:
            raise TaskDefinitionError(f"Criterion '{criterion.describe()}' is not one of the annotated concepts")
        indices.append(matches[0])
    return indices


def derive_task_label(concept_labels: Sequence[bool], task: TaskDef, concept_defs: Sequence[ConceptDef]) -> int:
    """Logical AND of the two concept bits the task refers to."""
    a, b = task_concept_indices(task, concept_defs)
    return int(bool(concept_labels[a]) and bool(concept_labels[b]))
