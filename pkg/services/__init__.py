"""Services for dual adversarial co-learning"""

from .autodiff import REGISTERED_OPS, Tape, Value, backward
from .network import ModelParams, extract, classify, discriminate, init_params, predict_test
from .losses import classification_loss, separation_loss, domain_adv_loss, discrepancy_loss
from .optimizer import AdamState, adam_update
from .data import MultiDomainDataset, SparseExample, load_corpus, write_corpus
from .synthetic import generate_synthetic
from .trainer import DaclTrainer, MinibatchStream, TrainResult, train
from .baseline import train_baseline
from .snapshot import save_snapshot, load_snapshot
from .evaluation import evaluate, run_mdtc, run_ablation, run_uda, run_sweep, run_baseline
from .gradcheck import run_gradcheck

__all__ = [
    "REGISTERED_OPS",
    "Tape",
    "Value",
    "backward",
    "ModelParams",
    "extract",
    "classify",
    "discriminate",
    "init_params",
    "predict_test",
    "classification_loss",
    "separation_loss",
    "domain_adv_loss",
    "discrepancy_loss",
    "AdamState",
    "adam_update",
    "MultiDomainDataset",
    "SparseExample",
    "load_corpus",
    "write_corpus",
    "generate_synthetic",
    "DaclTrainer",
    "MinibatchStream",
    "TrainResult",
    "train",
    "train_baseline",
    "save_snapshot",
    "load_snapshot",
    "evaluate",
    "run_mdtc",
    "run_ablation",
    "run_uda",
    "run_sweep",
    "run_baseline",
    "run_gradcheck",
]
