"""Poisoning attacks against linear probes on frozen encoders, with an
evaluation harness, file formats, and a CLI."""

from .numkit import (RngState, STREAM_DATA, STREAM_PRETRAIN, STREAM_BATCH,
                     STREAM_DECODER, STREAM_ATTACK, clip_box, prox_avg,
                     softmax_rows)
from .model import (Encoder, FeatureData, LabeledData, LinearHead, ce_loss,
                    encode, flatten_params, grad_features, grad_head,
                    grad_inputs, hvp_head, unflatten_params)
from .trainer import (TrainConfig, TrainingError, accuracy, accuracy_features,
                      pretrain_encoder, train_autoencoder, train_decoder,
                      train_head, train_head_features)
from .targets import TargetSpec, gradpc
from .attacks import (AttackConfig, PoisonResult, decoder_invert, emn_attack,
                      emn_joint_attack, feature_matching_attack,
                      gc_feature_attack, gc_input_attack, gc_residual,
                      poison_count, rank_pair, tgda_attack, total_gradient)
from .harness import (EvalReport, anomaly_filter, evaluate_poison,
                      run_experiment, split_interleaved, summarize)
from .io_cli import (ExperimentConfig, FileFormatError, cli, default_config_text,
                     emit_report, gen_blobs, import_csv, load_reports, main,
                     parse_config, read_config, read_dataset, read_model,
                     write_dataset, write_model)

__version__ = "0.1.0"
