"""Haar-cascade hand-gesture detection and gesture-driven drone control."""

from .boost import Cascade, TrainConfig, fit_cascade, load_cascade, save_cascade, train_cascade
from .detect import ScanConfig, classify_gesture, detect_all, group_rects, scan
from .haar import HaarFeature, HaarKind, WindowSpec, enumerate_features
from .imaging import GrayImage, IntegralImage, Rect, integral
from .labels import GESTURES, GestureLabel

__version__ = "0.1.0"

__all__ = [
    "GESTURES",
    "Cascade",
    "GestureLabel",
    "GrayImage",
    "HaarFeature",
    "HaarKind",
    "IntegralImage",
    "Rect",
    "ScanConfig",
    "TrainConfig",
    "WindowSpec",
    "classify_gesture",
    "detect_all",
    "enumerate_features",
    "fit_cascade",
    "group_rects",
    "integral",
    "load_cascade",
    "save_cascade",
    "scan",
    "train_cascade",
]
