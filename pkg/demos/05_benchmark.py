"""A miniature end-to-end benchmark comparing fine-tuning strategies.

For each method the pipeline is: pretrain the prior (cached per seed),
invert all images, fine-tune the decoder per the method, train the
pixel classifier on one labeled image, and score pooled mIoU on the
test split.

This uses a deliberately tiny configuration so it finishes in a couple
of minutes; the package defaults (see `pftseg.bench.BenchmarkConfig`)
are what the full comparison uses.
"""

from pftseg.bench import BenchmarkConfig, run_benchmark
from pftseg.data import DatasetConfig
from pftseg.generator import DecoderConfig
from pftseg.inversion import InvertConfig, PretrainConfig
from pftseg.pixclass import ClassifierConfig

config = BenchmarkConfig(
    dataset=DatasetConfig(resolution=16, n_train_labeled=1, n_support=8,
                          n_test=8, seed=0),
    decoder=DecoderConfig(output_resolution=16, shared_cutoff=8,
                          channels=(32, 32, 16), latent_dim=32),
    pretrain=PretrainConfig(iterations=400),
    invert=InvertConfig(iterations=60),
    classifier=ClassifierConfig(epochs=100),
    methods=("baseline", "pftgan", "vanilla", "single-stream"),
    shots=(1,),
    seeds=(0,),
    stage_iterations=60,
)

report = run_benchmark(config, work_dir="demo_output/benchmark")
print()
for method in config.methods:
    print(f"{method:>14s}: mIoU {report.mean_miou(method, 1):.4f}")
print("\nfull report in demo_output/benchmark/ (report.csv, summary.txt)")
