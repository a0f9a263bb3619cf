"""Small hand-built networks shared by the tests."""
import numpy as np

from otjr.models import MLPSpec, Params


def make_params(blocks, activation="relu"):
    """Params from explicit [(W, b), ...] with W shaped (out, in)."""
    widths = [np.shape(blocks[0][0])[1]] + [np.shape(W)[0] for W, _ in blocks]
    spec = MLPSpec(tuple(widths), activation)
    flat = np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in blocks])
    return Params(spec, flat.astype(float))


def linear_binary(w, shift=5.0):
    """2-class net that is exactly affine on [0,1]^I: identity hidden layer kept positive."""
    I = len(w)
    w = np.asarray(w, dtype=float)
    return make_params([(np.eye(I), np.full(I, shift)),
                        (np.stack([np.zeros(I), w]), np.array([0.0, -shift * w.sum()]))])


def constant_model(I, C, value=0.0):
    return make_params([(np.zeros((3, I)), np.zeros(3)), (np.zeros((C, 3)), np.full(C, value))])
