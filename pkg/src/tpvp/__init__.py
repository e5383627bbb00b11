"""View planning for periodic plant scanning with a registered previous-cycle model."""
from .coverage import CoverSolution, InfeasibleCover, VisibilityMatrix, next_best_view, solve_cover
from .geometry import PointCloud, SpatialIndex, chamfer_distance, load_cloud, save_cloud, voxel_downsample
from .inflation import InflationParams, assemble_approximation, inflate
from .occupancy import OccupancyGrid, VoxelState
from .paths import ViewPath, shortest_hamiltonian_path
from .pipeline import ExperimentConfig, MetricsReport, run_cycle, run_experiment, surface_coverage
from .plants import SyntheticPlant, generate_synthetic_plant
from .registration import DeformationGraph, LossWeights, RegistrationResult, register
from .views import Camera, View, ViewSpace, build_view_space, virtual_scan

__all__ = [
    "Camera", "CoverSolution", "DeformationGraph", "ExperimentConfig", "InfeasibleCover",
    "InflationParams", "LossWeights", "MetricsReport", "OccupancyGrid", "PointCloud",
    "RegistrationResult", "SpatialIndex", "SyntheticPlant", "View", "ViewPath", "ViewSpace",
    "VisibilityMatrix", "VoxelState", "assemble_approximation", "build_view_space",
    "chamfer_distance", "generate_synthetic_plant", "inflate", "load_cloud", "next_best_view",
    "register", "run_cycle", "run_experiment", "save_cloud", "shortest_hamiltonian_path",
    "solve_cover", "surface_coverage", "virtual_scan", "voxel_downsample",
]

__version__ = "0.1.0"
