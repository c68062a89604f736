from .cbf import *
from .qp import *
