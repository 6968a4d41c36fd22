"""Image and point-set error metrics."""
import numpy as np
from scipy import ndimage, signal

from lte.imageio import tonemap

_LUMA = np.array([0.2126, 0.7152, 0.0722])


def _check(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _check(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(pred, ref, peak=None):
    """Linear-HDR PSNR in dB; the peak defaults to the reference maximum."""
    pred, ref = _check(pred, ref)
    err = mse(pred, ref)
    peak = float(ref.max()) if peak is None else peak
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / err))


def _gauss_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ldr_luminance(image):
    """8-bit luminance of the tone-mapped image, as float."""
    img = np.asarray(image, dtype=np.float64)
    lum = img @ _LUMA if img.ndim == 3 else img
    return np.round(tonemap(lum) * 255.0)


def ssim(a, b):
    """SSIM of tone-mapped 8-bit luminance, 11x11 Gaussian window (sigma 1.5).

    Uses the valid region of the window; images smaller than the window are
    filtered with reflected borders instead.
    """
    a, b = _check(a, b)
    x, y = ldr_luminance(a), ldr_luminance(b)
    w = _gauss_window()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    if min(x.shape) >= w.shape[0]:
        filt = lambda z: signal.correlate(z, w, mode="valid")  # noqa: E731
    else:
        filt = lambda z: ndimage.correlate(z, w, mode="reflect")  # noqa: E731
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(s.mean())


def image_metrics(pred, ref):
    return {"mse": mse(pred, ref), "psnr": psnr(pred, ref), "ssim": ssim(pred, ref)}
