"""Differentiable Monte Carlo path tracer.

Renders scalar radiance images of quad/sphere scenes and computes exact
derivatives of an image-space quadratic cost with respect to seven scalar
controls (emission, ambient, diffuse, specular, exponent bindings) by
transporting the cost sensitivity backwards along each frozen light path.
Includes a finite-difference validation harness, a small weighted-adjoint
operator algebra used as an independent cross-check, a projected
gradient-descent loop for inverse rendering, and a text scene format with
PFM / PPM image output.
"""

from .adjoint_algebra import (ConvergenceError, DiscreteField,
                              DiscreteOperator, LinearStateProblem,
                              adjoint_gradient, adjoint_of,
                              fd_gradient_oracle, inner_product,
                              measurement_duality_check, neumann_solve)
from .geometry import Frame, Hit, Quad, Ray, Sphere, Vec3, intersect_scene, make_frame
from .materials import (Binding, ControlVector, GradientVector, LobeTag,
                        Material, MaterialKind, N_CONTROLS)
from .optimizer import DivergenceError, OptimConfig, OptimTrajectory, optimize
from .path_engine import (DEFAULT_MAX_DEPTH, Path, PathVertex, TerminalKind,
                          backward_pass, cost_and_adjoint, forward_pass,
                          make_path, trace_image, trace_pixel_sample)
from .sampling import RngStream, sample_phong_reflection, stream_key
from .scene_io import (Camera, ScalarImage, Scene, SceneError,
                       SceneSemanticError, SceneSyntaxError,
                       build_cornell_box, gradient_preview, parse_scene,
                       read_pfm, serialize_scene, write_pfm,
                       write_ppm_preview)
from .validation import (FdReport, FrozenEnsemble, analytic_geometric,
                         build_chain_path, build_lattice_ensemble,
                         compare_gradients, ensemble_cost_and_grad)

__version__ = "0.1.0"

__all__ = [
    "Binding", "Camera", "ControlVector", "ConvergenceError",
    "DEFAULT_MAX_DEPTH", "DiscreteField", "DiscreteOperator",
    "DivergenceError", "FdReport", "Frame", "FrozenEnsemble",
    "GradientVector", "Hit", "LinearStateProblem", "LobeTag", "Material",
    "MaterialKind", "N_CONTROLS", "OptimConfig", "OptimTrajectory", "Path",
    "PathVertex", "Quad", "Ray", "RngStream", "ScalarImage", "Scene",
    "SceneError", "SceneSemanticError", "SceneSyntaxError", "Sphere",
    "TerminalKind", "Vec3", "adjoint_gradient", "adjoint_of",
    "analytic_geometric", "backward_pass", "build_chain_path",
    "build_cornell_box", "build_lattice_ensemble", "compare_gradients",
    "cost_and_adjoint", "ensemble_cost_and_grad", "fd_gradient_oracle",
    "forward_pass", "gradient_preview", "inner_product", "intersect_scene",
    "make_frame", "make_path", "measurement_duality_check", "neumann_solve",
    "optimize", "parse_scene", "read_pfm", "sample_phong_reflection",
    "serialize_scene", "stream_key", "trace_image", "trace_pixel_sample",
    "write_pfm", "write_ppm_preview",
]
