import numpy as np
import pytest

from rejgen import ndcore as nd


def gradcheck(build, params, h=1e-6, tol=1e-4):
    """Compare reverse-mode gradients against central finite differences.

    build: callable(tensors dict) -> scalar Tensor loss;
    params: dict name -> ndarray. Relative error uses a floored denominator
    so near-zero gradients don't blow up the ratio.
    """
    tensors = {k: nd.Tensor(v.copy(), requires_grad=True) for k, v in params.items()}
    loss = build(tensors)
    loss.backward()
    worst = 0.0
    for name, t in tensors.items():
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(build({k: nd.Tensor(v.data) for k, v in tensors.items()}).data)
            flat[i] = orig - h
            dn = float(build({k: nd.Tensor(v.data) for k, v in tensors.items()}).data)
            flat[i] = orig
            fd = (up - dn) / (2 * h)
            rel = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-4)
            worst = max(worst, rel)
            assert rel < tol, f"{name}[{i}]: analytic {gflat[i]}, fd {fd}, rel {rel}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)
