"""Lane post-processing toolkit: instance clustering, homography-conditioned
curve fitting, reprojection-loss optimization, synthetic scenes and metrics."""

from .geometry import Homography, invert, transform_point, transform_points
from .curvefit import Polynomial, evaluate_lane, fit_lane, fit_polynomial
from .hoptim import (HOptimConfig, fixed_homography_from_calibration, loss_gradient,
                     optimize_homography, reprojection_loss)
from .embed import (ClusterMargins, EmbeddingSet, cluster_means, discriminative_loss,
                    discriminative_loss_grad, train_free_embeddings)
from .cluster import ClusterResult, cluster_instances, mean_shift
from .evalkit import (ABSENT, SceneAnnotation, fit_error_benchmark, lane_metrics,
                      read_annotations, write_annotations)
from .scenegen import CameraModel, RoadModel, generate_corpus, generate_scene

__version__ = "0.1.0"
