"""Slanted stixels: column-wise joint depth and semantic segmentation."""
from ._backend import NAME as BACKEND
from .cuts import CutSet, cut_density, full_cut_set, generate_cuts, regular_cut_set
from .energy import (ColumnMeasurements, ColumnPrefix, depth_pixel_energy, expected_disparity,
                     plane_prior_energy, segment_data_energy, semantic_costs, semantic_pixel_energy)
from .evaluate import (SceneObject, SceneSpec, complexity_stats, disparity_outlier_rate, mean_iou,
                       synthesize)
from .infer import (DPTable, brute_force_column, first_energy, infer_column, infer_image,
                    transition_energy)
from .io import (DenseImage, downsample, load_pfm, load_semantic_tensor, load_stixels, render,
                 save_ppm_visualization, save_stixels, write_pfm, write_semantic_tensor)
from .model import (ClassTaxonomy, ConfigError, GeometricClass, ModelConfig, Plane, PlanePrior,
                    StereoCalibration, Stixel, StixelColumn, StixelWorld, default_taxonomy,
                    ground_prior_from_calibration, validate_config)
from .planefit import fit_plane_map

__version__ = "0.1.0"
