"""Postural symmetry from body keypoints, calibrated against aggregated human ratings."""

from .aggregation import BetaPrior, Priors, em_binary, em_ordinal, majority_init, rater_report
from .agreement import cohen_kappa, inter_limb_agreement, internal_consistency, krippendorff_alpha
from .calibration import fit_logistic, kappa_threshold_sweep, roc_auc, train_test_split
from .geometry import angle_class_of, angle_profile, assess, limb_angle, mirror_normal, reflect_vector
from .skeleton import LIMBS, Skeleton, load_keypoints, load_ratings

__version__ = "0.1.0"

__all__ = [
    "BetaPrior", "Priors", "em_binary", "em_ordinal", "majority_init", "rater_report",
    "cohen_kappa", "inter_limb_agreement", "internal_consistency", "krippendorff_alpha",
    "fit_logistic", "kappa_threshold_sweep", "roc_auc", "train_test_split",
    "angle_class_of", "angle_profile", "assess", "limb_angle", "mirror_normal", "reflect_vector",
    "LIMBS", "Skeleton", "load_keypoints", "load_ratings",
]
