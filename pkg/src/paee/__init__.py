"""Energy expenditure estimation from wrist and ankle accelerometry.

Submodules: ``data`` (recordings and CSV I/O), ``preprocess`` (resampling and
aggregation), ``sequencing`` (training examples), ``nn`` (GRU hybrid model),
``optim`` (Adam training loop), ``evaluation`` (leave-one-subject-out
harness), ``synth`` (synthetic recordings) and ``cli``.
"""

__version__ = "0.1.0"
