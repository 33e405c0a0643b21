import os
import sys

os.environ.setdefault("ANOBFN_THREADS", "1")

import torch

torch.set_num_threads(1)

sys.path.insert(0, os.path.dirname(__file__))
