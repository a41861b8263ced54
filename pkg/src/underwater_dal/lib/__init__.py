from .errors import *
from .io_util import *
