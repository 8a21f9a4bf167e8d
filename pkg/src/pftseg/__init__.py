"""Few-shot part segmentation via progressive generator fine-tuning."""

from .data import DatasetConfig, ImageSample, generate_dataset, load_dataset, save_dataset
from .errors import (
    ConfigurationError,
    InitializationError,
    PftsegError,
    TrainingError,
    UsageError,
    ValidationError,
)
from .generator import DecoderConfig, SingleStreamDecoder, TwoStreamDecoder, init_two_stream
from .inversion import Encoder, InvertConfig, PretrainConfig, encode, encode_batch, pretrain
from .metrics import confusion, miou, per_class_iou
from .palette import Palette, interpolate, make_palette, project_labels, unproject
from .pixclass import ClassifierConfig, ClassifierEnsemble, PixelClassifier, extract_pixel_features, predict, train_classifier
from .ploss import PerceptualLoss
from .finetune import (
    FinetuneData,
    LabeledExample,
    Stage,
    SupportSet,
    default_schedule,
    run_schedule,
    run_stage,
    vanilla_finetune,
)
from .bench import BenchmarkConfig, BenchmarkReport, run_benchmark
from .checkpoint import load_decoder, save_decoder

__version__ = "0.1.0"
