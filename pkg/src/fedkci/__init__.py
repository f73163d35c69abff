"""FedAvg simulation with knowledgeable client insertion, on a numpy NN core."""

from .data import ClientShard, Dataset, load_cifar10, make_synthetic, partition_iid, sample_fraction
from .federation import HyperParams, RoundMetrics, aggregate, build_kci_cohort, client_training, run_federated
from .nn import ModelParams, ModelSpec, evaluate_accuracy, init_params, loss_and_grad, mlp, paper_cnn, sgd_step

__version__ = "0.1.0"
