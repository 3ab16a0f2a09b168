from .conllu import ConllSentence, load_conllu, parse_conllu, write_conllu
from .mrc import MrcConfig, MrcExample, load_mrc, make_synthetic_mrc, write_mrc
from .synthetic import (UPOS_TAGS, Lexicon, ParallelSentencePair, SyntheticConfig,
                        SyntheticCorpus, generate_synthetic_parallel, make_sts_set)
from .trees import ParseTree, tree_metrics
