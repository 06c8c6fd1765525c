//! Forward/backward kernels on single items in CHW layout.

use super::scalar::{gemm, Mat, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl Window {
    pub fn out(&self, s: Shape, channels: usize) -> Shape {
        let d = |n: usize, i: usize| (n + 2 * self.padding[i] - self.kernel[i]) / self.stride[i] + 1;
        Shape {
            c: channels,
            h: d(s.h, 0),
            w: d(s.w, 1),
        }
    }
}

/// Unfold `x` into a `(c·kh·kw) × (oh·ow)` matrix.
pub(crate) fn im2col<T: Real>(x: &[T], s: Shape, win: &Window, o: Shape) -> Vec<T> {
    let [kh, kw] = win.kernel;
    let n = o.h * o.w;
    let mut col = vec![T::zero(); s.c * kh * kw * n];
    for ci in 0..s.c {
        let plane = &x[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * n;
                for oy in 0..o.h {
                    let iy = (oy * win.stride[0] + ky) as isize - win.padding[0] as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    let dst = &mut col[row + oy * o.w..row + (oy + 1) * o.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * win.stride[1] + kx) as isize - win.padding[1] as isize;
                        if ix >= 0 && (ix as usize) < s.w {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add columns back to an input-shaped array.
pub(crate) fn col2im<T: Real>(col: &[T], s: Shape, win: &Window, o: Shape) -> Vec<T> {
    let [kh, kw] = win.kernel;
    let n = o.h * o.w;
    let mut x = vec![T::zero(); s.len()];
    for ci in 0..s.c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * n;
                for oy in 0..o.h {
                    let iy = (oy * win.stride[0] + ky) as isize - win.padding[0] as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let base = ci * s.h * s.w + iy as usize * s.w;
                    for ox in 0..o.w {
                        let ix = (ox * win.stride[1] + kx) as isize - win.padding[1] as isize;
                        if ix >= 0 && (ix as usize) < s.w {
                            x[base + ix as usize] += col[row + oy * o.w + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Convolution output `W·col + b` as `(cout) × (oh·ow)`.
pub(crate) fn conv_forward<T: Real>(col: &[T], weight: &[T], bias: &[T], cout: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cout * n];
    for (row, &b) in out.chunks_exact_mut(n).zip(bias) {
        row.fill(b);
    }
    gemm(Mat::new(weight, cout, k), Mat::new(col, k, n), T::one(), &mut out);
    out
}

/// Accumulates weight and bias gradients; returns the column gradient when
/// requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    dout: &[T],
    col: &[T],
    weight: &[T],
    cout: usize,
    k: usize,
    n: usize,
    dweight: &mut [T],
    dbias: &mut [T],
    need_dcol: bool,
) -> Option<Vec<T>> {
    gemm(Mat::new(dout, cout, n), Mat::new(col, k, n).t(), T::one(), dweight);
    for (row, db) in dout.chunks_exact(n).zip(dbias.iter_mut()) {
        *db += row.iter().copied().sum::<T>();
    }
    need_dcol.then(|| {
        let mut dcol = vec![T::zero(); k * n];
        gemm(Mat::new(weight, cout, k).t(), Mat::new(dout, cout, n), T::zero(), &mut dcol);
        dcol
    })
}

/// Max pooling; padded cells never win. Returns the output and the flat
/// input index chosen for each output cell.
pub(crate) fn maxpool_forward<T: Real>(x: &[T], s: Shape, win: &Window) -> (Vec<T>, Vec<u32>, Shape) {
    let o = win.out(s, s.c);
    let mut out = vec![T::neg_infinity(); o.len()];
    let mut arg = vec![0u32; o.len()];
    for c in 0..s.c {
        for oy in 0..o.h {
            for ox in 0..o.w {
                let oi = (c * o.h + oy) * o.w + ox;
                for ky in 0..win.kernel[0] {
                    let iy = (oy * win.stride[0] + ky) as isize - win.padding[0] as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    for kx in 0..win.kernel[1] {
                        let ix = (ox * win.stride[1] + kx) as isize - win.padding[1] as isize;
                        if ix < 0 || ix >= s.w as isize {
                            continue;
                        }
                        let ii = (c * s.h + iy as usize) * s.w + ix as usize;
                        if x[ii] > out[oi] || (x[ii].is_nan() && !out[oi].is_nan()) {
                            out[oi] = x[ii];
                            arg[oi] = ii as u32;
                        }
                    }
                }
            }
        }
    }
    (out, arg, o)
}

pub(crate) fn maxpool_backward<T: Real>(dout: &[T], arg: &[u32], s: Shape) -> Vec<T> {
    let mut dx = vec![T::zero(); s.len()];
    for (&g, &i) in dout.iter().zip(arg) {
        dx[i as usize] += g;
    }
    dx
}

pub(crate) fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero gradients where the ReLU output was not positive.
pub(crate) fn relu_backward_inplace<T: Real>(dout: &mut [T], out: &[T]) {
    for (g, &y) in dout.iter_mut().zip(out) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], s: Shape, w: &[f64], cout: usize, win: &Window) -> Vec<f64> {
        let o = win.out(s, cout);
        let [kh, kw] = win.kernel;
        let mut out = vec![0.0; o.len()];
        for co in 0..cout {
            for oy in 0..o.h {
                for ox in 0..o.w {
                    let mut acc = 0.0;
                    for ci in 0..s.c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * win.stride[0] + ky) as isize - win.padding[0] as isize;
                                let ix = (ox * win.stride[1] + kx) as isize - win.padding[1] as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                                    acc += w[((co * s.c + ci) * kh + ky) * kw + kx]
                                        * x[(ci * s.h + iy as usize) * s.w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(co * o.h + oy) * o.w + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let s = Shape { c: 2, h: 5, w: 7 };
        let win = Window {
            kernel: [3, 2],
            stride: [2, 1],
            padding: [1, 1],
        };
        let cout = 3;
        let x: Vec<f64> = (0..s.len()).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let k = s.c * 3 * 2;
        let w: Vec<f64> = (0..cout * k).map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.7).collect();
        let o = win.out(s, cout);
        let col = im2col(&x, s, &win, o);
        let y = conv_forward(&col, &w, &[0.0; 3], cout, k, o.h * o.w);
        let expect = naive_conv(&x, s, &w, cout, &win);
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let s = Shape { c: 2, h: 4, w: 6 };
        let win = Window {
            kernel: [2, 3],
            stride: [1, 2],
            padding: [1, 1],
        };
        let o = win.out(s, 1);
        let x: Vec<f64> = (0..s.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let col = im2col(&x, s, &win, o);
        let c: Vec<f64> = (0..col.len()).map(|i| (i as f64 * 0.91).cos()).collect();
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let back = col2im(&c, s, &win, o);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let s = Shape { c: 1, h: 1, w: 6 };
        let x = [1.0f64, 5.0, 2.0, -1.0, 7.0, 3.0];
        let win = Window {
            kernel: [1, 3],
            stride: [1, 2],
            padding: [0, 1],
        };
        let (y, arg, o) = maxpool_forward(&x, s, &win);
        assert_eq!(o.w, 3);
        assert_eq!(y, vec![5.0, 5.0, 7.0]);
        assert_eq!(arg, vec![1, 1, 4]);
        let dx = maxpool_backward(&[1.0, 1.0, 1.0], &arg, s);
        assert_eq!(dx, vec![0.0, 2.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
