"""Divergence-preserving truncation toolkit for symmetric fields on the 3-torus."""

from .fields import (
    TrigSymField,
    TrigVecField,
    PreconditionError,
    UnsupportedOrderError,
    eval_field,
    divergence,
    project_div_free,
    curl_curl_T,
    potential_inverse,
    random_field,
    field_to_dict,
    field_from_dict,
)
from .maximal import ScalarGrid, OpenSetMask, sample_abs, maximal_function, bad_set, zhang_bound_check
from .whitney import WhitneyCube, WhitneyCover, PartitionOfUnity, whitney_decompose, build_partition, pou_eval, cubes_at
from .flux import QuadratureRule, TriangleMoments, normal, triangle_moments, eval_A, gauss_green_defect_B, gauss_green_defect_A
from .truncation import TruncationContext, VerificationReport, build_context, local_field, truncate, weak_divergence_defect, summation_vanish_check, verify
from .potential_trunc import PolyPatch, averaged_taylor, w_m_inf_truncate, afree_potential_truncate, stability_comparison
from .envelope import CompactSetDescriptor, EnvelopeEstimate, dist_p, qsdqc_estimate, hull_membership, truncate_project_sequence

__all__ = [name for name in dir() if not name.startswith("_")]
