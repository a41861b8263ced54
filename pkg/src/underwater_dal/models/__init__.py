from .networks import *
from .verification import *
