from .data import LabeledSet, SynthSpec, augment, split_dataset, subsample, synth_dataset
from .model import TexModel, cross_entropy, forward, predict_top1, softmax
from .train import accuracy, train_classifier

__all__ = [
    "LabeledSet", "SynthSpec", "TexModel", "accuracy", "augment", "cross_entropy", "forward",
    "predict_top1", "softmax", "split_dataset", "subsample", "synth_dataset", "train_classifier",
]
