from .config import *
from .experiment import *
