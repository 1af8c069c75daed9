"""Shape-preserving adversarial attacks on point-cloud classifiers."""

from . import attacks, classifier, data, evaluation, geometry, sensitivity

__all__ = ["attacks", "classifier", "data", "evaluation", "geometry", "sensitivity"]
