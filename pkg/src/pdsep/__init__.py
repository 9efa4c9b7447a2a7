"""Single-channel source separation with N parallel dual GANs."""

from .dataset import Dataset, FormatError, SampleRecord, load_dataset, save_dataset, synth_dataset
from .losses import LossConfig, critic_loss_a, critic_loss_b, generator_loss
from .metrics import MetricsReport, UndefinedCorrelationError, correlation, evaluate, mse, psnr, report_csv
from .mixing import MixingSpec, MixKind, mix, mix_convolutive, mix_instantaneous, random_spec, source_bank
from .nets import ArchDescriptor, critic_forward, generator_forward, init_params
from .trainer import NaNLossError, PDualGanModel, TrainConfig, TrainLog, separate, train, train_step

__version__ = "0.1.0"
