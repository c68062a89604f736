from .buffer import *
from .ppo import *
from .train import *
