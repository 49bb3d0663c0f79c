from taco.kernels import BACKEND
