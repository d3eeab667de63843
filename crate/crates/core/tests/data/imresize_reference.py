# float64 numpy port of basicsr.utils.matlab_functions.imresize (single channel)
import math, numpy as np

def cubic(x):
    a = np.abs(x); a2 = a*a; a3 = a2*a
    return (1.5*a3 - 2.5*a2 + 1)*(a <= 1) + (-0.5*a3 + 2.5*a2 - 4*a + 2)*((a > 1) & (a <= 2))

def weights_indices(in_len, out_len, scale, kw=4.0, aa=True):
    if scale < 1 and aa:
        kw = kw / scale
    x = np.linspace(1, out_len, out_len)
    u = x/scale + 0.5*(1 - 1/scale)
    left = np.floor(u - kw/2)
    p = math.ceil(kw) + 2
    ind = left[:, None] + np.arange(p)[None, :]
    d = u[:, None] - ind
    w = scale*cubic(d*scale) if (scale < 1 and aa) else cubic(d)
    w = w / w.sum(1, keepdims=True)
    z = (w == 0).sum(0)
    if z[0] != 0:
        ind = ind[:, 1:]; w = w[:, 1:]
    if z[-1] != 0:
        ind = ind[:, :-1]; w = w[:, :-1]
    return w, ind.astype(int)

def resize_axis0(img, out_len, scale):
    n = img.shape[0]
    w, ind = weights_indices(n, out_len, scale)
    # 1-based indices with symmetric (edge-repeating) mirror
    def src(i):
        i = i - 1
        while i < 0 or i >= n:
            i = -1 - i if i < 0 else 2*n - 1 - i
        return i
    out = np.zeros((out_len,) + img.shape[1:])
    for r in range(out_len):
        for k in range(w.shape[1]):
            out[r] += w[r, k]*img[src(ind[r, k])]
    return out

def imresize(img, scale):
    h, w = img.shape
    oh, ow = math.ceil(h*scale), math.ceil(w*scale)
    t = resize_axis0(img, oh, scale)
    return resize_axis0(t.T, ow, scale).T

def test_image(h, w):
    r = np.arange(h)[:, None]; c = np.arange(w)[None, :]
    return 0.5 + 0.3*np.sin(0.9*r + 0.4*c) + 0.15*np.cos(1.7*c - 0.3*r*r/ max(h,1)) + 0.04*((r*7 + c*13) % 5)


CASES = [(6, 8, 2.0), (5, 7, 3.0), (12, 9, 1 / 3), (10, 10, 0.5), (8, 12, 0.75), (7, 6, 4.0), (20, 15, 0.4)]

if __name__ == "__main__":
    # python3 imresize_reference.py > bicubic_reference.txt
    print("# MATLAB-compatible bicubic reference outputs, float64.")
    print("# height width scale out_height out_width samples...")
    for h, w, s in CASES:
        out = imresize(test_image(h, w), s)
        assert (math.ceil(h * s), math.ceil(w * s)) == (round(h * s), round(w * s))
        print(" ".join([str(h), str(w), repr(s), str(out.shape[0]), str(out.shape[1])] + [repr(float(v)) for v in out.ravel()]))
