from .losses import *
from .procedure import *
