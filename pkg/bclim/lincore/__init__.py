from bclim.lincore.tridiag import *
from bclim.lincore.marginal import *
