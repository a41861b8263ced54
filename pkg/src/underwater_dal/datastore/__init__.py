from .checkpoint import *
from .manifest import *
