"""Episodic few-shot text classification over file-based token embeddings.

Pipeline: word representations -> label-conditioned attention adapter ->
optimal-transport query augmentation of class prototypes -> prototypical
classification.
"""

from .adapter import (AdapterGradients, AdapterInput, AdapterParams,
                      adapter_backward, adapter_forward, init_prefix,
                      represent_episode)
from .episodes import (Episode, LabeledCorpus, SyntheticSpec,
                       gen_synthetic_corpus, gen_synthetic_episode,
                       load_dataset, make_split, sample_episode)
from .protonet import (Posterior, PrototypeSet, class_posteriors,
                       classifier_backward, cross_entropy, predict)
from .trainer import (Checkpoint, OptimizerState, RunReport, TrainConfig,
                      adamw_step, episode_step, evaluate, lr_schedule, train)
from .transport import (AugmentedClass, TransportPlan, barycentric_map,
                        barycentric_map_matrix, cost_matrix,
                        estimate_prototypes, exact_ot_oracle, retrieve_top_r,
                        sinkhorn)
from .wordrep import (LabelNameVectors, TokenSequence, WordVectorTable,
                      embed_label_names, embed_sequence, load_precomputed,
                      load_word_vectors, tokenize)

__version__ = "0.1.0"
