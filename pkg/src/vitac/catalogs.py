"""Builtin object catalogs: a 32-class reference set and two unseen test sets.

Reference materials sit on a grid of closing time (how long the squeeze takes
to cross the stop threshold, i.e. hardness) by relaxation ratio
(viscoelasticity). Unseen objects clone the material of a named reference
donor, so the donor is the retrieval ground truth.
"""

from __future__ import annotations

from dataclasses import replace

from .sim import MaterialModel, ObjectSpec, PushProtocolConfig, stiffness_for_close_time

NOISE_STD = 2e-5
RELAX_TAU_S = 0.08

# closing time (s) -> hardness band and contact exponent
CLOSE_TIMES = (0.03, 0.05, 0.08, 0.13, 0.20, 0.30, 0.42, 0.58)
RELAX_RATIOS = (1.0, 0.8, 0.6, 0.4)


def _band(close_time: float) -> str:
    if close_time <= 0.08:
        return "hard"
    if close_time <= 0.20:
        return "medium"
    return "soft"


_EXPONENT = {"hard": 1.0, "medium": 1.3, "soft": 1.6}

# (label, description) laid out row-major over CLOSE_TIMES x RELAX_RATIOS
_REFERENCE_NAMES = [
    ("stainless_cube", "a rigid stainless steel cube"),
    ("glass_marble", "a hard glass marble"),
    ("ceramic_tile", "a hard ceramic tile"),
    ("hard_candy", "a hard boiled candy"),
    ("wood_cube", "a hard wooden cube"),
    ("acrylic_block", "a hard acrylic block"),
    ("walnut", "a hard walnut shell"),
    ("candle_wax", "a hard wax candle"),
    ("toy_block", "a hard plastic toy block"),
    ("bottle_cap", "a stiff plastic bottle cap"),
    ("cork", "a firm cork stopper"),
    ("chalk", "a hard chalk stick"),
    ("rubber_eraser", "a firm rubber eraser"),
    ("tennis_ball", "a firm springy tennis ball"),
    ("cheese_block", "a firm cheese block"),
    ("modeling_clay", "a firm modeling clay"),
    ("silicone_pad", "a springy silicone pad"),
    ("rubber_ball", "a bouncy rubber ball"),
    ("boiled_egg", "a moderately firm boiled egg"),
    ("gummy_candy", "a chewy gummy candy"),
    ("sponge", "a soft porous block"),
    ("foam_cube", "a soft springy foam cube"),
    ("kiwi_piece", "a soft fruit piece"),
    ("dough", "a soft sticky dough"),
    ("stress_ball", "a soft squeezable foam ball"),
    ("cotton_ball", "a soft fluffy cotton ball"),
    ("otedama", "a soft beanbag"),
    ("tofu", "a soft silken tofu"),
    ("marshmallow", "a soft squishy marshmallow"),
    ("plush_toy", "a soft plush toy"),
    ("jelly", "a soft wobbly jelly"),
    ("gelatin", "a very soft fragile gelatin"),
]

# held out from network training; still indexed in the tactile-to-text database
REFERENCE_VAL_LABELS = ("hard_candy", "bottle_cap", "cheese_block", "foam_cube", "marshmallow")


def _material(close_time: float, relax_ratio: float, fragile: bool = False) -> MaterialModel:
    exponent = _EXPONENT[_band(close_time)]
    return MaterialModel(
        stiffness=stiffness_for_close_time(close_time, exponent, PushProtocolConfig(), fragile=fragile),
        exponent=exponent,
        relax_ratio=relax_ratio,
        relax_tau_s=RELAX_TAU_S,
        noise_std=NOISE_STD,
    )


def reference_catalog() -> list[ObjectSpec]:
    out = []
    i = 0
    for ct in CLOSE_TIMES:
        for rr in RELAX_RATIOS:
            label, desc = _REFERENCE_NAMES[i]
            fragile = label == "gelatin"
            out.append(
                ObjectSpec(
                    label=label,
                    description=f"{label} ({desc})",
                    appearance_tag=label,
                    material=_material(ct, rr, fragile),
                    fragile=fragile,
                    hardness=_band(ct),
                )
            )
            i += 1
    return out


def reference_splits() -> dict[str, str]:
    return {o.label: ("val" if o.label in REFERENCE_VAL_LABELS else "train") for o in reference_catalog()}


def _clone(donor: ObjectSpec, label: str, tag: str, hardness: str | None = None) -> ObjectSpec:
    return replace(
        donor,
        label=label,
        description=label.replace("_", " "),
        appearance_tag=tag,
        hardness=hardness or donor.hardness,
        donor=donor.label,
    )


# (food, donor for the real food, donor for its resin replica)
_FOOD_PAIRS = [
    ("strawberry", "kiwi_piece", "acrylic_block"),
    ("canele", "rubber_ball", "walnut"),
    ("konjac", "jelly", "toy_block"),
    ("chocolate", "silicone_pad", "ceramic_tile"),
    ("bread", "otedama", "wood_cube"),
    ("sushi", "dough", "glass_marble"),
    ("dumpling", "tofu", "candle_wax"),
    ("banana", "stress_ball", "stainless_cube"),
    ("cream_puff", "plush_toy", "chalk"),
    ("mochi", "sponge", "cork"),
    ("tomato", "cotton_ball", "wood_cube"),
]


def foodreplica_catalog() -> list[ObjectSpec]:
    """Eleven real foods each followed by its visually identical resin replica."""
    ref = {o.label: o for o in reference_catalog()}
    out = []
    for name, real_donor, replica_donor in _FOOD_PAIRS:
        out.append(_clone(ref[real_donor], name, name))
        out.append(_clone(ref[replica_donor], f"resin_replica_{name}", name, hardness="hard"))
    return out


# (state, object, donor)
_CUBES = [
    ("raw", "kabocha_squash", "rubber_eraser"),
    ("boiled", "kabocha_squash", "gummy_candy"),
    ("raw", "kiri_mochi", "wood_cube"),
    ("boiled", "kiri_mochi", "otedama"),
]


def cube_catalog() -> list[ObjectSpec]:
    """Two objects in raw and boiled condition; raw listed first in each pair."""
    ref = {o.label: o for o in reference_catalog()}
    return [_clone(ref[d], f"{state}_{name}", name) for state, name, d in _CUBES]


def builtin_catalogs() -> tuple[list[ObjectSpec], list[ObjectSpec], list[ObjectSpec]]:
    return reference_catalog(), foodreplica_catalog(), cube_catalog()
