from .torch import *
