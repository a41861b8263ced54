from .analysis import *
from .datastore import *
from .formation import *
from .lib import *
from .metrics import *
from .models import *
from .nn import *
from .training import *
