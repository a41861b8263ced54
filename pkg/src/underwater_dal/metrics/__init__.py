from .quality import *
from .report import *
