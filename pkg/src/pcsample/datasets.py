"""In-memory dataset model: references, ground truth, predictor sources."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bt import PCM
from .errors import ValidationError
from .uncertainty import SyntheticWorld, true_pcm


@dataclass(frozen=True)
class ReferenceData:
    """One reference content: its image ids (dense order) and truth PCM."""

    reference_id: str
    image_ids: tuple
    truth: PCM
    reference_image: str = ""

    def __post_init__(self):
        if len(set(self.image_ids)) != len(self.image_ids):
            raise ValidationError(
                f"duplicate image ids in reference {self.reference_id!r}"
            )
        if self.truth.n != len(self.image_ids):
            raise ValidationError(
                f"truth PCM size {self.truth.n} does not match "
                f"{len(self.image_ids)} images in {self.reference_id!r}"
            )
        if not self.reference_image:
            object.__setattr__(self, "reference_image", self.reference_id)

    def index_of(self, image_id: str) -> int:
        try:
            return self.image_ids.index(image_id)
        except ValueError:
            raise ValidationError(
                f"unknown image {image_id!r} in reference {self.reference_id!r}"
            ) from None


@dataclass(frozen=True)
class EnsembleTable:
    """External predictor ensemble: per-pass (mu, sigma) per image."""

    entries: tuple  # of (reference_id, image_ids, mus (P, K), sigmas (P, K))
    n_passes: int

    def _entry(self, reference_id: str):
        for entry in self.entries:
            if entry[0] == reference_id:
                return entry
        raise ValidationError(f"ensemble has no reference {reference_id!r}")

    def pass_arrays(self, reference_id: str, n_passes: int):
        if n_passes > self.n_passes:
            raise ValidationError(
                f"ensemble provides {self.n_passes} passes, {n_passes} requested"
            )
        _, _, mus, sigmas = self._entry(reference_id)
        return mus[:n_passes], sigmas[:n_passes]

    def iter_pass_arrays(self, n_passes: int):
        for reference_id, _, _, _ in self.entries:
            mus, sigmas = self.pass_arrays(reference_id, n_passes)
            yield reference_id, mus, sigmas


@dataclass(frozen=True)
class Dataset:
    dataset_id: str
    references: tuple
    world: SyntheticWorld | None = None
    ensemble: EnsembleTable | None = None
    root: Path | None = None
    judgments: str | None = None

    def __post_init__(self):
        ids = [ref.reference_id for ref in self.references]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate reference ids in dataset")

    def reference(self, reference_id: str) -> ReferenceData:
        for ref in self.references:
            if ref.reference_id == reference_id:
                return ref
        raise ValidationError(f"unknown reference {reference_id!r}")

    @property
    def total_pairs(self) -> int:
        return sum(r.truth.n * (r.truth.n - 1) // 2 for r in self.references)


def dataset_from_world(world: SyntheticWorld, dataset_id: str) -> Dataset:
    """Materialize ground-truth PCMs for every reference of a world."""
    references = tuple(
        ReferenceData(
            reference_id=ref.reference_id,
            image_ids=tuple(ref.image_ids),
            truth=true_pcm(world, r),
        )
        for r, ref in enumerate(world.references)
    )
    return Dataset(dataset_id=dataset_id, references=references, world=world)
