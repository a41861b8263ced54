from .gradcheck import *
from .graph import *
from .ops import OPS
from .optim import *
from .tensor import *
