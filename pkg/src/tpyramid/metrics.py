import numpy as np


def class_accuracies(y_true, y_pred, n_classes=None):
    """Accuracy within each class and their mean.

    Classes absent from ``y_true`` get ``None`` and are left out of the mean.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if n_classes is None:
        n_classes = int(max(y_true.max(), y_pred.max())) + 1
    per_class = []
    for c in range(n_classes):
        mask = y_true == c
        per_class.append(float((y_pred[mask] == c).mean()) if mask.any() else None)
    present = [a for a in per_class if a is not None]
    return per_class, float(np.mean(present)) if present else float("nan")


def mean_class_accuracy(y_true, y_pred, n_classes=None):
    return class_accuracies(y_true, y_pred, n_classes)[1]
