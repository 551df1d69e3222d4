"""Insert scanned object point clouds into LiDAR scenes with mesh-based occlusion."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Aabb,
    ObjectRecord,
    PointCloud,
    SceneRecord,
    SimilarityTransform,
    TriangleMesh,
)
from .errors import (  # noqa: E402
    AttributeConflictError,
    MetadataInconsistentError,
    NoPositionDataError,
    OffGridAzimuthError,
    ParseError,
    PcrError,
    RegistrationDivergedError,
    SchemaError,
    UnsupportedFormatError,
)
from .fusion import OrientedBox, RecombinedScene, make_label, place_at_azimuth, recombine, recombine_sequential  # noqa: E402
from .insertion_map import (  # noqa: E402
    InsertionConfig,
    InsertionMap,
    PlacementVerdict,
    SurfaceVariationField,
    adaptive_radius_sv,
    build_insertion_map,
    surface_variation,
    validate_placement,
)
from .io import (  # noqa: E402
    CloudFileFormat,
    read_mesh,
    read_object_record,
    read_point_cloud,
    read_scene_record,
    write_mesh,
    write_object_record,
    write_point_cloud,
    write_scene_record,
)
from .metrics import MetricsReport, chamfer, compare, f1, hausdorff, noise_reference, prune_to_roi, rmse  # noqa: E402
from .occlusion import OcclusionResult, compute_occlusion, remove_points  # noqa: E402
from .registration import RegistrationConfig, RegistrationResult, register_mesh_to_cloud  # noqa: E402
from .spatial import NeighborIndex, RaycastIndex, build_neighbor_index, build_raycast_index, cast_rays  # noqa: E402

__all__ = [
    "__version__",
    "Aabb",
    "ObjectRecord",
    "PointCloud",
    "SceneRecord",
    "SimilarityTransform",
    "TriangleMesh",
    "AttributeConflictError",
    "MetadataInconsistentError",
    "NoPositionDataError",
    "OffGridAzimuthError",
    "ParseError",
    "PcrError",
    "RegistrationDivergedError",
    "SchemaError",
    "UnsupportedFormatError",
    "OrientedBox",
    "RecombinedScene",
    "make_label",
    "place_at_azimuth",
    "recombine",
    "recombine_sequential",
    "InsertionConfig",
    "InsertionMap",
    "PlacementVerdict",
    "SurfaceVariationField",
    "adaptive_radius_sv",
    "build_insertion_map",
    "surface_variation",
    "validate_placement",
    "CloudFileFormat",
    "read_mesh",
    "read_object_record",
    "read_point_cloud",
    "read_scene_record",
    "write_mesh",
    "write_object_record",
    "write_point_cloud",
    "write_scene_record",
    "MetricsReport",
    "chamfer",
    "compare",
    "f1",
    "hausdorff",
    "noise_reference",
    "prune_to_roi",
    "rmse",
    "OcclusionResult",
    "compute_occlusion",
    "remove_points",
    "RegistrationConfig",
    "RegistrationResult",
    "register_mesh_to_cloud",
    "NeighborIndex",
    "RaycastIndex",
    "build_neighbor_index",
    "build_raycast_index",
    "cast_rays",
]
