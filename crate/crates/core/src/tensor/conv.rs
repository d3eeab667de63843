use super::{num_threads, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

fn check_kernel<T: Scalar>(op: &'static str, x: Shape, k: &Tensor<T>) -> Result<usize> {
    let ks = k.shape();
    if ks.h != ks.w {
        return Err(Error::InvalidKernel {
            op,
            shape: ks,
            reason: "kernel must be square",
        });
    }
    if ks.h.is_multiple_of(2) {
        return Err(Error::InvalidKernel {
            op,
            shape: ks,
            reason: "kernel size must be odd",
        });
    }
    if ks.c != x.c {
        return Err(Error::ChannelMismatch {
            op,
            expected: ks.c,
            found: x.c,
        });
    }
    Ok(ks.h)
}

/// Unfolds one `(c, h, w)` item into a `(c·s·s, h·w)` column matrix.
fn im2col<T: Scalar>(item: &[T], c: usize, h: usize, w: usize, s: usize, cols: &mut [T]) {
    let pad = (s / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &item[ch * hw..(ch + 1) * hw];
        for ki in 0..s {
            for kj in 0..s {
                let row = (ch * s + ki) * s + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ki as isize - pad;
                let dx = kj as isize - pad;
                for oh in 0..h {
                    let ih = oh as isize + dy;
                    let out_row = &mut dst[oh * w..(oh + 1) * w];
                    if ih < 0 || ih >= h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    for (ow, o) in out_row.iter_mut().enumerate() {
                        let iw = ow as isize + dx;
                        *o = if iw < 0 || iw >= w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `item`.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, s: usize, item: &mut [T]) {
    let pad = (s / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut item[ch * hw..(ch + 1) * hw];
        for ki in 0..s {
            for kj in 0..s {
                let row = (ch * s + ki) * s + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ki as isize - pad;
                let dx = kj as isize - pad;
                for oh in 0..h {
                    let ih = oh as isize + dy;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    let col_row = &src[oh * w..(oh + 1) * w];
                    for (ow, &v) in col_row.iter().enumerate() {
                        let iw = ow as isize + dx;
                        if iw >= 0 && iw < w as isize {
                            dst[iw as usize] = dst[iw as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Splits `0..n` into at most `num_threads()` contiguous ranges.
fn batch_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    let threads = num_threads().min(n).max(1);
    let per = n.div_ceil(threads);
    (0..threads)
        .map(|t| (t * per).min(n)..((t + 1) * per).min(n))
        .filter(|r| !r.is_empty())
        .collect()
}

pub(super) fn conv2d_forward<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let s = check_kernel("conv2d", xs, k)?;
    let o = k.shape().n;
    let (c, h, w) = (xs.c, xs.h, xs.w);
    let hw = h * w;
    let css = c * s * s;
    let out_shape = Shape::new(xs.n, o, h, w);
    let mut out = vec![T::zero(); out_shape.len()];
    if out.is_empty() {
        return Tensor::new(out_shape, out);
    }

    let run = |items: std::ops::Range<usize>, dst: &mut [T]| {
        let mut cols = vec![T::zero(); css * hw];
        for (i, n) in items.enumerate() {
            im2col(x.item(n), c, h, w, s, &mut cols);
            T::gemm(
                o,
                css,
                hw,
                T::one(),
                k.data(),
                (css, 1),
                &cols,
                (hw, 1),
                T::zero(),
                &mut dst[i * o * hw..(i + 1) * o * hw],
            );
        }
    };

    let ranges = batch_ranges(xs.n);
    if ranges.len() == 1 {
        run(0..xs.n, &mut out);
    } else {
        std::thread::scope(|scope| {
            let mut rest = out.as_mut_slice();
            for r in ranges {
                let (head, tail) = rest.split_at_mut(r.len() * o * hw);
                rest = tail;
                let run = &run;
                scope.spawn(move || run(r, head));
            }
        });
    }
    Tensor::new(out_shape, out)
}

/// Gradients of a [`Tensor::conv2d`] call without bias.
///
/// Returns `(dx, dk)`; `dx` is only computed when `need_dx` is set.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    dy: &Tensor<T>,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let xs = x.shape();
    let s = check_kernel("conv2d_backward", xs, k)?;
    let o = k.shape().n;
    let expected = Shape::new(xs.n, o, xs.h, xs.w);
    if dy.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            lhs: expected,
            rhs: dy.shape(),
        });
    }
    let (c, h, w) = (xs.c, xs.h, xs.w);
    let hw = h * w;
    let css = c * s * s;
    let item_len = c * hw;

    let run = |items: std::ops::Range<usize>, dx: Option<&mut [T]>| -> Vec<T> {
        let mut dk = vec![T::zero(); o * css];
        let mut cols = vec![T::zero(); css * hw];
        let mut dcols = if need_dx {
            vec![T::zero(); css * hw]
        } else {
            Vec::new()
        };
        let mut dx = dx;
        for (i, n) in items.enumerate() {
            let dy_n = dy.item(n);
            im2col(x.item(n), c, h, w, s, &mut cols);
            // dk += dy_n · colsᵀ
            T::gemm(
                o,
                hw,
                css,
                T::one(),
                dy_n,
                (hw, 1),
                &cols,
                (1, hw),
                T::one(),
                &mut dk,
            );
            if let Some(dx) = dx.as_deref_mut() {
                // dcols = kᵀ · dy_n
                T::gemm(
                    css,
                    o,
                    hw,
                    T::one(),
                    k.data(),
                    (1, css),
                    dy_n,
                    (hw, 1),
                    T::zero(),
                    &mut dcols,
                );
                col2im(
                    &dcols,
                    c,
                    h,
                    w,
                    s,
                    &mut dx[i * item_len..(i + 1) * item_len],
                );
            }
        }
        dk
    };

    let mut dx = need_dx.then(|| vec![T::zero(); xs.len()]);
    let ranges = batch_ranges(xs.n);
    let partials: Vec<Vec<T>> = if ranges.len() <= 1 {
        vec![run(0..xs.n, dx.as_deref_mut())]
    } else {
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            let mut rest = dx.as_deref_mut();
            for r in ranges {
                let chunk = match rest.take() {
                    Some(buf) => {
                        let (head, tail) = buf.split_at_mut(r.len() * item_len);
                        rest = Some(tail);
                        Some(head)
                    }
                    None => None,
                };
                let run = &run;
                handles.push(scope.spawn(move || run(r, chunk)));
            }
            handles
                .into_iter()
                .map(|h| h.join().expect("conv2d worker panicked"))
                .collect()
        })
    };
    let mut dk = partials[0].clone();
    for p in &partials[1..] {
        for (a, &b) in dk.iter_mut().zip(p) {
            *a = *a + b;
        }
    }
    let dx = dx.map(|d| Tensor::new(xs, d)).transpose()?;
    Ok((dx, Tensor::new(k.shape(), dk)?))
}
