from .model import *
from .synthesis import *
from .water_types import *
