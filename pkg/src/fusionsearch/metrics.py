import numpy as np
import torch


def accuracy(y_true, y_pred):
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    return float((y_true == y_pred).mean())


def weighted_f1(y_true, y_pred):
    """Support-weighted mean of per-class F1.

    Accepts 1-D class labels or 2-D 0/1 indicator matrices (multilabel).
    Classes with zero precision + recall score 0.
    """
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if y_true.ndim == 1:
        classes = np.union1d(y_true, y_pred)
        y_true = (y_true[:, None] == classes[None, :])
        y_pred = (y_pred[:, None] == classes[None, :])
    y_true, y_pred = y_true.astype(bool), y_pred.astype(bool)
    tp = (y_true & y_pred).sum(0)
    fp = (~y_true & y_pred).sum(0)
    fn = (y_true & ~y_pred).sum(0)
    support = y_true.sum(0)
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros(len(tp), dtype=float), where=denom > 0)
    if support.sum() == 0:
        return 0.0
    return float((f1 * support).sum() / support.sum())


def predictions(logits, task_mode):
    if task_mode == "multiclass":
        return logits.argmax(dim=1)
    return (logits > 0).to(torch.int64)


def task_metric(logits, labels, task_mode):
    pred = predictions(logits, task_mode).cpu().numpy()
    labels = labels.cpu().numpy()
    if task_mode == "multiclass":
        return accuracy(labels, pred)
    return weighted_f1(labels.astype(np.int64), pred)
