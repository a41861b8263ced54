from .latent import *
