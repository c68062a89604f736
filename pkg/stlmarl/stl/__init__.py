from .formula import *
from .parser import *
from .robustness import *
from .trace import *
