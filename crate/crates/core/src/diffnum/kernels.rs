//! Dense kernels shared by the tape primitives.

/// Strided matrix view: `data[r * rs + c * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        View { data, rs: cols, cs: 1 }
    }

    /// Transpose of a row-major `[rows, cols]` matrix.
    pub fn t(data: &'a [f64], cols: usize) -> Self {
        View { data, rs: 1, cs: cols }
    }
}

/// `c = alpha * a[m,k] * b[k,n] + beta * c`, with `c` row-major `[m, n]`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View, b: View, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!((m - 1) * a.rs + (k - 1) * a.cs < a.data.len());
    assert!((k - 1) * b.rs + (n - 1) * b.cs < b.data.len());
    // SAFETY: the asserts above bound every index touched through the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Window geometry relating a long axis to a short axis: short position `l`
/// and tap `k` touch long position `l * stride + k - padding`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub batch: usize,
    pub channels: usize,
    pub long: usize,
    pub short: usize,
    pub taps: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    #[inline]
    fn valid_range(&self, k: usize) -> (usize, usize) {
        // l in [lo, hi) such that 0 <= l*stride + k - padding < long
        let lo = if k >= self.padding {
            0
        } else {
            (self.padding - k).div_ceil(self.stride)
        };
        let hi = if self.long + self.padding > k {
            ((self.long + self.padding - k - 1) / self.stride + 1).min(self.short)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    pub fn cols(&self) -> usize {
        self.batch * self.short
    }

    #[cfg(test)]
    pub fn im2col(&self, src: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.channels * self.taps * self.cols()];
        self.im2col_into(src, &mut out);
        out
    }

    /// `src [batch, channels, long]` -> `[channels * taps, batch * short]` in a
    /// caller buffer; every entry is overwritten.
    pub fn im2col_into(&self, src: &[f64], out: &mut [f64]) {
        let cols = self.cols();
        out.iter_mut().for_each(|v| *v = 0.0);
        for n in 0..self.batch {
            for c in 0..self.channels {
                let s = &src[(n * self.channels + c) * self.long..][..self.long];
                for k in 0..self.taps {
                    let (lo, hi) = self.valid_range(k);
                    let row = &mut out[(c * self.taps + k) * cols + n * self.short..][..self.short];
                    if self.stride == 1 {
                        let off = lo + k - self.padding;
                        row[lo..hi].copy_from_slice(&s[off..off + hi - lo]);
                    } else {
                        for l in lo..hi {
                            row[l] = s[l * self.stride + k - self.padding];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Window::im2col`]: accumulates columns into `dst [batch, channels, long]`.
    pub fn col2im(&self, col: &[f64], dst: &mut [f64]) {
        let cols = self.cols();
        for n in 0..self.batch {
            for c in 0..self.channels {
                let d = &mut dst[(n * self.channels + c) * self.long..][..self.long];
                for k in 0..self.taps {
                    let (lo, hi) = self.valid_range(k);
                    let row = &col[(c * self.taps + k) * cols + n * self.short..][..self.short];
                    if self.stride == 1 {
                        let off = lo + k - self.padding;
                        for (dv, rv) in d[off..off + hi - lo].iter_mut().zip(&row[lo..hi]) {
                            *dv += rv;
                        }
                    } else {
                        for l in lo..hi {
                            d[l * self.stride + k - self.padding] += row[l];
                        }
                    }
                }
            }
        }
    }

    fn chunk(&self, batch: usize) -> Window {
        Window { batch, ..*self }
    }

    /// Samples per chunk so that one column buffer stays cache-sized.
    fn chunk_len(&self) -> usize {
        (CHUNK_VALUES / (self.channels * self.taps * self.short).max(1)).clamp(1, self.batch)
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, Window)> + '_ {
        let step = self.chunk_len();
        (0..self.batch)
            .step_by(step)
            .map(move |n0| (n0, self.chunk(step.min(self.batch - n0))))
    }
}

const CHUNK_VALUES: usize = 1 << 15;

/// Convolution `x [N, C_in, L] * w [C_out, C_in, K] -> [N, C_out, L_out]`;
/// `win` describes the input (`channels = C_in`, `long = L`, `short = L_out`).
pub(crate) fn conv_forward(win: &Window, x: &[f64], w: &[f64], cout: usize) -> Vec<f64> {
    let (cin, ck) = (win.channels, win.channels * win.taps);
    let mut out = vec![0.0; win.batch * cout * win.short];
    let (mut col, mut tmp) = (Vec::new(), Vec::new());
    for (n0, cw) in win.chunks() {
        let xs = &x[n0 * cin * win.long..][..cw.batch * cin * win.long];
        col.resize(ck * cw.cols(), 0.0);
        tmp.resize(cout * cw.cols(), 0.0);
        cw.im2col_into(xs, &mut col);
        gemm(cout, ck, cw.cols(), View::rows(w, ck), View::rows(&col, cw.cols()), 0.0, &mut tmp);
        let dst = &mut out[n0 * cout * win.short..][..cw.batch * cout * win.short];
        scatter_channel_major(&tmp, dst, cw.batch, cout, win.short, false);
    }
    out
}

/// Accumulates weight and/or input gradients of [`conv_forward`].
pub(crate) fn conv_backward(
    win: &Window,
    (x, w): (&[f64], &[f64]),
    gout: &[f64],
    cout: usize,
    mut dw: Option<&mut [f64]>,
    mut dx: Option<&mut [f64]>,
) {
    let (cin, ck) = (win.channels, win.channels * win.taps);
    let (mut col, mut gc) = (Vec::new(), Vec::new());
    for (n0, cw) in win.chunks() {
        gc.resize(cout * cw.cols(), 0.0);
        col.resize(ck * cw.cols(), 0.0);
        let gs = &gout[n0 * cout * win.short..][..cw.batch * cout * win.short];
        gather_channel_major(gs, &mut gc, cw.batch, cout, win.short);
        if let Some(dw) = dw.as_deref_mut() {
            cw.im2col_into(&x[n0 * cin * win.long..][..cw.batch * cin * win.long], &mut col);
            gemm(cout, cw.cols(), ck, View::rows(&gc, cw.cols()), View::t(&col, cw.cols()), 1.0, dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(ck, cout, cw.cols(), View::t(w, ck), View::rows(&gc, cw.cols()), 0.0, &mut col);
            cw.col2im(&col, &mut dx[n0 * cin * win.long..][..cw.batch * cin * win.long]);
        }
    }
}

/// Transposed convolution `x [N, C_in, L] * w [C_in, C_out, K] -> [N, C_out, L_out]`;
/// `win` describes the output (`channels = C_out`, `long = L_out`, `short = L`).
pub(crate) fn convt_forward(win: &Window, x: &[f64], w: &[f64], cin: usize) -> Vec<f64> {
    let (cout, ck) = (win.channels, win.channels * win.taps);
    let mut out = vec![0.0; win.batch * cout * win.long];
    let (mut col, mut xc) = (Vec::new(), Vec::new());
    for (n0, cw) in win.chunks() {
        col.resize(ck * cw.cols(), 0.0);
        xc.resize(cin * cw.cols(), 0.0);
        let xs = &x[n0 * cin * win.short..][..cw.batch * cin * win.short];
        gather_channel_major(xs, &mut xc, cw.batch, cin, win.short);
        gemm(ck, cin, cw.cols(), View::t(w, ck), View::rows(&xc, cw.cols()), 0.0, &mut col);
        cw.col2im(&col, &mut out[n0 * cout * win.long..][..cw.batch * cout * win.long]);
    }
    out
}

/// Accumulates weight and/or input gradients of [`convt_forward`].
pub(crate) fn convt_backward(
    win: &Window,
    (x, w): (&[f64], &[f64]),
    gout: &[f64],
    cin: usize,
    mut dw: Option<&mut [f64]>,
    mut dx: Option<&mut [f64]>,
) {
    let (cout, ck) = (win.channels, win.channels * win.taps);
    let (mut dcol, mut xc) = (Vec::new(), Vec::new());
    for (n0, cw) in win.chunks() {
        dcol.resize(ck * cw.cols(), 0.0);
        xc.resize(cin * cw.cols(), 0.0);
        cw.im2col_into(&gout[n0 * cout * win.long..][..cw.batch * cout * win.long], &mut dcol);
        let xs = &x[n0 * cin * win.short..][..cw.batch * cin * win.short];
        if let Some(dw) = dw.as_deref_mut() {
            gather_channel_major(xs, &mut xc, cw.batch, cin, win.short);
            gemm(cin, cw.cols(), ck, View::rows(&xc, cw.cols()), View::t(&dcol, cw.cols()), 1.0, dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(cin, ck, cw.cols(), View::rows(w, ck), View::rows(&dcol, cw.cols()), 0.0, &mut xc);
            let dst = &mut dx[n0 * cin * win.short..][..cw.batch * cin * win.short];
            scatter_channel_major(&xc, dst, cw.batch, cin, win.short, true);
        }
    }
}

/// `[n, c, l]` -> `[c, n * l]` into `dst`.
fn gather_channel_major(src: &[f64], dst: &mut [f64], n: usize, c: usize, l: usize) {
    for b in 0..n {
        for ch in 0..c {
            dst[ch * n * l + b * l..][..l].copy_from_slice(&src[(b * c + ch) * l..][..l]);
        }
    }
}

/// `[c, n * l]` -> `[n, c, l]`, overwriting or accumulating into `dst`.
fn scatter_channel_major(src: &[f64], dst: &mut [f64], n: usize, c: usize, l: usize, accumulate: bool) {
    for b in 0..n {
        for ch in 0..c {
            let s = &src[ch * n * l + b * l..][..l];
            let d = &mut dst[(b * c + ch) * l..][..l];
            if accumulate {
                d.iter_mut().zip(s).for_each(|(d, s)| *d += s);
            } else {
                d.copy_from_slice(s);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        for &(long, short, taps, stride, padding) in
            &[(5, 5, 3, 1, 1), (8, 4, 4, 2, 1), (7, 3, 3, 2, 0), (3, 3, 3, 1, 1)]
        {
            let w = Window { batch: 2, channels: 3, long, short, taps, stride, padding };
            let x: Vec<f64> = (0..2 * 3 * long).map(|i| (i as f64 * 0.37).sin()).collect();
            let y: Vec<f64> = (0..3 * taps * w.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
            let ax = w.im2col(&x);
            let mut aty = vec![0.0; x.len()];
            w.col2im(&y, &mut aty);
            let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect();
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, View::rows(&a, 3), View::rows(&b, 4), 0.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
    }

    #[test]
    fn channel_major_round_trip() {
        let x: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let mut y = vec![0.0; 24];
        gather_channel_major(&x, &mut y, 2, 3, 4);
        assert_eq!(y[4], 12.0);
        let mut back = vec![0.0; 24];
        scatter_channel_major(&y, &mut back, 2, 3, 4, false);
        assert_eq!(back, x);
    }
}
