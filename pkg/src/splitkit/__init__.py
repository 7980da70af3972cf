"""Edge-aware long-axis Gaussian splitting with a 2D fitting harness.

The library is organized as small pure modules: ``core`` holds the
primitive and scene types, ``edge_pipeline`` builds edge-importance maps,
``las_split`` implements the long-axis split, ``schedule`` the learning
rate and densification timetables, ``densify_controller`` the selection
logic, ``splat2d`` the differentiable 2D renderer and trainer, and
``io_cli`` the file formats plus the command line front end.
"""

from .core import Gaussian2, Gaussian3, Scene2, Scene3, logit, quat_to_rotmat, sigmoid
from .edge_pipeline import (GradientField, blur_kernel_5x5, gaussian_blur_5x5,
                            importance_pipeline, median_normalize, nms_thin,
                            sample_scores, sobel_gradients, to_grayscale)
from .las_split import (BudgetError, SplitConstants, axis_displacement,
                        las_split_batch, las_split_batch_2d, las_split_one,
                        las_split_one_2d, principal_axis)
from .schedule import (DensifyConfig, ExpSchedule, default_schedules,
                       is_densify_step, is_warmup_step, lr_at)
from .densify_controller import (DensifyEvent, DensifyStats, accumulate_grads,
                                 densify_step, select_candidates)
from .splat2d import (RenderParams, TrainConfig, TrainResult, backward,
                      desk_scale_densify_config, loss_l2, psnr, render, ssim,
                      train)
from .io_cli import read_image, read_scene, write_image, write_scene

__version__ = "0.1.0"
