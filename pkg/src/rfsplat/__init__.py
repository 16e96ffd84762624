"""Forward/inverse radio-frequency rendering over 3D Gaussian primitives."""

from .scene import (Aabb, Antenna, ComplexSignal, FrequencyGrid,
                    ObservationRecord, ObservationSet, RFGaussian, Scene,
                    SceneValidationError, DegeneratePlacementError,
                    covariance_from, validate_scene, scene_arrays, C_LIGHT)
from .geometry import (CameraRayBundle, GeometryMaps, gaussian_density,
                       projected_cross_section, render_geometry_maps,
                       loss_depth_normal, loss_depth_uncertainty,
                       loss_normal_smoothness, loss_geometric_total,
                       GeometricLossWeights)
from .bsdf import (IncidentSample, ScatterQuery, local_scatter,
                   scattering_pattern, specular_direction)
from .tracing import (Bvh, RayHitChain, build_bvh, incident_field,
                      ray_gaussian_alpha, visibility_chain)
from .render import (DirectionalRender, FovGrid, LinkConfig, LosNlosParams,
                     RadioMap, RenderOptions, blend_direction,
                     export_attribute_maps, integrate_receiver, make_fov_grid,
                     mix_los_nlos, render_radio_map, render_rcs_sweep,
                     render_received_signal)
from .inverse import (AttributeBank, FitConfig, FitReport, fit, gradients,
                      gradient_check, rf_loss, build_fit_problem)
from .fam import FamConfig, FamNetwork, fam_apply, fit_wideband
from .oracle import (SyntheticSceneSpec, brute_force_render, generate_scene,
                     generate_observations, monte_carlo_cross_section,
                     analytic_cross_section)

__version__ = "0.1.0"
