"""Neural-network feature extraction feeding RBF-SVM and KNN classifiers."""
from .classifiers import knn_fit, knn_predict, rbf_kernel, smo_train_binary, svm_fit, svm_predict
from .data import Dataset, SplitSpec, load_csv, load_idx, normalize_apply, normalize_fit, split, synth_blobs
from .neural import build_architecture, extract_features, strip_softmax, train
from .pipeline import ExperimentResult, Splits, run_baseline_classifier, run_hybrid, run_network_baseline

__version__ = "0.1.0"
