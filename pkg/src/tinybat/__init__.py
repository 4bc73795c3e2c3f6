"""tinybat: compile small CNNs to quantized integer models for MCUs.

Pipeline stages: preprocess images, build/validate layer graphs, run the
float reference engine, calibrate and quantize, run the bit-exact integer
engine, estimate Flash/RAM/latency/energy, search architectures under
budgets, and emit standalone C with golden vectors.
"""

__version__ = "0.1.0"
