"""Statevector simulation, training and adversarial attacks for quantum classifiers."""
from . import attacks, bounds, data, models, simulator, training
from .attacks import AttackConfig, PerturbationLayer
from .models import ClassifierModel, build_qcnn, build_roster, build_variational_classifier
from .simulator import GateOp, StateVector
from .training import TrainConfig

__version__ = "0.1.0"
