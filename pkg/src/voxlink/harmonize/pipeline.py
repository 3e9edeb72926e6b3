"""The fixed harmonization order: register -> z-score -> bias -> histogram -> strip."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Dict, Optional

from ..volume import Volume
from .intensity import bias_correct, histogram_match, skull_strip, zscore_normalize
from .registration import RegistrationConfig, register_affine

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HarmonizationStages:
    """Which stage groups run.  Disabled stages are skipped, never reordered."""

    do_register: bool = True
    do_intensity: bool = True
    do_skullstrip: bool = True

    def __post_init__(self):
        if not (self.do_register or self.do_intensity or self.do_skullstrip):
            raise ValueError("at least one harmonization stage must be enabled")

    @classmethod
    def arm(cls, name: str) -> "HarmonizationStages":
        """The ablation arms: ``none`` (masking only), ``affine`` and ``full``."""
        arms = {"none": cls(False, False, True), "affine": cls(True, False, True), "full": cls()}
        if name not in arms:
            raise ValueError(f"unknown arm {name!r}; expected one of {sorted(arms)}")
        return arms[name]


def intensity_reference(template: Volume) -> Volume:
    """The histogram-matching target: the template after z-scoring and bias removal.

    Using the template's own corrected intensities makes the template a fixed
    point of the full pipeline.
    """
    return bias_correct(zscore_normalize(template))


def _intensity(v: Volume, reference: Volume) -> Volume:
    return histogram_match(bias_correct(zscore_normalize(v)), reference)


def harmonize_pipeline(
    v: Volume,
    template: Volume,
    stages: HarmonizationStages = HarmonizationStages(),
    registration: RegistrationConfig = RegistrationConfig(),
    reference: Optional[Volume] = None,
    provenance: Optional[dict] = None,
) -> Volume:
    """Run the enabled stages in their fixed order.

    With registration the output lies on the template grid; without it the
    volume keeps its own grid.  ``reference`` overrides the histogram-matching
    target (default: :func:`intensity_reference` of the template); pass it in when harmonizing many
    volumes to avoid recomputing it.  If ``provenance`` is a dict it receives
    the stages run, the fitted transform and wall time per stage.
    """
    record = {"stages": [], "seconds": {}}

    def timed(name, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        record["stages"].append(name)
        record["seconds"][name] = time.perf_counter() - t0
        return out

    if stages.do_register:
        t, v = timed("register", register_affine, v, template, registration)
        record["transform"] = {"parameters": t.parameters.tolist(), "center": list(t.center),
                               "matrix": t.matrix.tolist()}
    if stages.do_intensity:
        ref = reference if reference is not None else intensity_reference(template)
        v = timed("zscore", zscore_normalize, v)
        v = timed("bias_correct", bias_correct, v)
        v = timed("histogram_match", histogram_match, v, ref)
    if stages.do_skullstrip:
        v = timed("skull_strip", skull_strip, v)
    if provenance is not None:
        provenance.update(record)
    return v


def harmonize_arms(
    v: Volume,
    template: Volume,
    registration: RegistrationConfig = RegistrationConfig(),
    reference: Optional[Volume] = None,
) -> Dict[str, Volume]:
    """The none / affine / full ablation arms of one volume, registering only once.

    Equivalent to three :func:`harmonize_pipeline` calls with
    :meth:`HarmonizationStages.arm` stages.
    """
    ref = reference if reference is not None else intensity_reference(template)
    _, registered = register_affine(v, template, registration)
    return {
        "none": skull_strip(v),
        "affine": skull_strip(registered),
        "full": skull_strip(_intensity(registered, ref)),
    }
