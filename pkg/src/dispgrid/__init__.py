"""Disaggregate administrative displacement records onto a 0.5 degree grid."""

__version__ = "0.1.0"

from .grid import AdminLevel, AdminUnit, GeoPoint, GridCellId, GridSpec, cells_intersecting, point_in_admin, point_to_cell
from .matching import MatchConfig, MatchResult, levenshtein_distance, match_admin_name, similarity_ratio
from .weights import ProportionMatrix, assign_buildings, build_proportion_matrix, single_cell_admins
from .records import DisplacementRecord, PlacementResult, ResolvedRecord, Settlement, partition_for_modeling, resolve_records
from .spreading import LabelSpreadProblem, SpreadConfig, build_features, build_similarity, solve_admin2, spread
from .evaluation import combined_report, confusion, metrics
from .pipeline import PipelineConfig, aggregate_counts, export_outputs, load_config, run_pipeline
from .synthetic import WorldConfig, generate_synthetic

__all__ = [
    "AdminLevel", "AdminUnit", "GeoPoint", "GridCellId", "GridSpec", "cells_intersecting", "point_in_admin",
    "point_to_cell", "MatchConfig", "MatchResult", "levenshtein_distance", "match_admin_name", "similarity_ratio",
    "ProportionMatrix", "assign_buildings", "build_proportion_matrix", "single_cell_admins", "DisplacementRecord",
    "PlacementResult", "ResolvedRecord", "Settlement", "partition_for_modeling", "resolve_records",
    "LabelSpreadProblem", "SpreadConfig", "build_features", "build_similarity", "solve_admin2", "spread",
    "combined_report", "confusion", "metrics", "PipelineConfig", "aggregate_counts", "export_outputs",
    "load_config", "run_pipeline", "WorldConfig", "generate_synthetic",
]
