"""Fixed on-disk formats: the domain catalog JSON schema and CSV column orders."""
from __future__ import annotations

import jsonschema

_complex_array = {
    "type": "object",
    "required": ["re", "im"],
    "properties": {"re": {"type": "array"}, "im": {"type": "array"}},
}

CATALOG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ghlab domain catalog",
    "type": "object",
    "required": ["schema_version", "domains"],
    "properties": {
        "schema_version": {"const": "1.0"},
        "domains": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["catalog_id", "dimension", "bounding_radius", "center", "polynomial"],
                "properties": {
                    "catalog_id": {"type": "string", "minLength": 1},
                    "dimension": {"type": "integer", "minimum": 1},
                    "alpha": {"type": "number", "minimum": 0, "maximum": 1},
                    "bounding_radius": {"type": "number", "exclusiveMinimum": 0},
                    "center": _complex_array,
                    "polynomial": {
                        "type": "object",
                        "required": ["exponents", "coeffs"],
                        "properties": {
                            "exponents": {
                                "type": "array",
                                "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                            },
                            "coeffs": {"type": "array", "items": {"type": "number"}},
                        },
                    },
                    "chart": {
                        "oneOf": [
                            {"type": "null"},
                            {
                                "type": "object",
                                "required": ["kind", "params"],
                                "properties": {
                                    "kind": {"enum": ["affine", "shear"]},
                                    "params": {"type": "object"},
                                },
                            },
                        ]
                    },
                    "certificate": {
                        "type": "object",
                        "properties": {
                            "min_levi": {"type": "number"},
                            "min_gradient": {"type": "number"},
                            "center_inside": {"type": "boolean"},
                            "max_boundary_radius": {"type": "number"},
                        },
                    },
                    "collar": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
    },
}


def validate_catalog(doc):
    """Raise ValueError naming the offending field if ``doc`` is not a valid catalog."""
    try:
        jsonschema.validate(doc, CATALOG_SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ValueError(f"catalog field {where}: {err.message}") from None


# CSV column orders shared by the CLI writers and readers.
METRIC_COLUMNS = ["index", "domain", "z1_re", "z1_im", "z2_re", "z2_im", "X1_re", "X1_im", "X2_re", "X2_im",
                  "lower", "upper", "width", "oracle", "converged"]
GEODESIC_COLUMNS = ["vertex", "z1_re", "z1_im", "z2_re", "z2_im", "mark", "delta"]
GH_COLUMNS = ["index", "domain", "regime", "delta_target", "delta_z", "delta_w", "separation", "tangency",
              "kob_length", "euclid_length", "normal_length", "ratio", "eps_gh"]
VISIBILITY_COLUMNS = ["index", "domain", "penetration_depth", "c_low", "c_high", "band_ratio", "c_low_normal", "log_residual",
                      "violation"]
NORMALIZE_COLUMNS = ["stage", "label", "scale", "d", "N2", "max_abs_a", "max_abs_b", "max_abs_c"]
SCALE_COLUMNS = ["domain", "t", "beta", "c2_gap", "hausdorff_gap"]
TELESCOPE_COLUMNS = ["segment", "s_start", "s_end", "length", "re_gain", "c_hat", "im_flag"]

ALL_COLUMNS = {
    "metric": METRIC_COLUMNS,
    "geodesic": GEODESIC_COLUMNS,
    "gh-sweep": GH_COLUMNS,
    "visibility": VISIBILITY_COLUMNS,
    "normalize": NORMALIZE_COLUMNS,
    "scale": SCALE_COLUMNS,
    "telescope": TELESCOPE_COLUMNS,
}
