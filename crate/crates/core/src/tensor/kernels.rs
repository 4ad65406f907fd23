//! Raw forward/backward kernels over row-major slices.
//!
//! These carry no graph bookkeeping; [`super::Graph`] wraps them.

use crate::error::{Error, Result};

use super::Tensor;

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out` (row-major), the offset of the element of a
/// tensor shaped `src` that broadcasts onto it.
pub fn broadcast_offsets(src: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    debug_assert!(src.len() <= n);
    let pad = n - src.len();
    let mut strides = vec![0usize; n];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + pad] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let total: usize = out.iter().product();
    let mut offsets = Vec::with_capacity(total);
    if total == 0 {
        return offsets;
    }
    let mut idx = vec![0usize; n];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for d in (0..n).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    offsets
}

/// `c[m×n] += a[m×k] · b[k×n]`.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `da[m×k] += dc[m×n] · bᵀ`.
pub fn matmul_grad_a(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = dcrow.iter().zip(brow).map(|(x, y)| x * y).sum();
            da[i * k + p] += dot;
        }
    }
}

/// `db[k×n] += aᵀ · dc[m×n]`.
pub fn matmul_grad_b(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, g) in dbrow.iter_mut().zip(dcrow) {
                *d += av * g;
            }
        }
    }
}

pub fn permute(t: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let nd = t.ndim();
    let mut seen = vec![false; nd];
    if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::dim(
            "permute",
            format!("axes {axes:?} are not a permutation for shape {:?}", t.shape()),
        ));
    }
    let shape = t.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = t.numel();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    let src = t.data();
    for _ in 0..total {
        out.push(src[off]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

pub fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Splits a shape around `axis` into `(outer, len, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..len {
                max = max.max(x[base + j * inner]);
            }
            let mut sum = 0.0;
            for j in 0..len {
                let e = (x[base + j * inner] - max).exp();
                y[base + j * inner] = e;
                sum += e;
            }
            for j in 0..len {
                y[base + j * inner] /= sum;
            }
        }
    }
    y
}

pub fn softmax_backward(y: &[f64], dy: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: f64 = (0..len).map(|j| y[base + j * inner] * dy[base + j * inner]).sum();
            for j in 0..len {
                let at = base + j * inner;
                dx[at] = y[at] * (dy[at] - dot);
            }
        }
    }
    dx
}

/// Normalises each row of width `d` to zero mean and unit (population)
/// variance. Returns the normalised values and per-row `1/sqrt(var + eps)`.
pub fn layer_norm(x: &[f64], d: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[r] = inv;
        for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
            *o = (v - mean) * inv;
        }
    }
    (out, inv_std)
}

pub fn layer_norm_backward(xhat: &[f64], inv_std: &[f64], dy: &[f64], d: usize) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    let df = d as f64;
    for (r, &inv) in inv_std.iter().enumerate() {
        let xh = &xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        let sum_g: f64 = g.iter().sum();
        let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
        for j in 0..d {
            dx[r * d + j] = inv / df * (df * g[j] - sum_g - xh[j] * sum_gx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Geometry of a 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dGeom {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::dim(
                "conv2d",
                format!("expected 4-D input and kernel, got {input:?} and {kernel:?}"),
            ));
        }
        if input[1] != kernel[1] {
            return Err(Error::dim(
                "conv2d",
                format!("input {input:?} has {} channels, kernel {kernel:?} expects {}", input[1], kernel[1]),
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        let g = Conv2dGeom {
            batch: input[0],
            c_in: input[1],
            h: input[2],
            w: input[3],
            c_out: kernel[0],
            kh: kernel[2],
            kw: kernel[3],
            stride,
            padding,
        };
        if g.kh > g.h + 2 * padding.0 || g.kw > g.w + 2 * padding.1 {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {kernel:?} is larger than padded input {input:?} (padding {padding:?})"),
            ));
        }
        Ok(g)
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.padding.0 - self.kh) / self.stride.0 + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.padding.1 - self.kw) / self.stride.1 + 1
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.c_out, self.out_h(), self.out_w()]
    }

    /// Visits every (input offset, kernel offset, output offset) triple that
    /// contributes to the cross-correlation.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for b in 0..self.batch {
            for co in 0..self.c_out {
                let out_base = (b * self.c_out + co) * oh * ow;
                for ci in 0..self.c_in {
                    let in_base = (b * self.c_in + ci) * self.h * self.w;
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let k_off = ((co * self.c_in + ci) * self.kh + ky) * self.kw + kx;
                            for oy in 0..oh {
                                let iy = (oy * self.stride.0 + ky) as isize - self.padding.0 as isize;
                                if iy < 0 || iy >= self.h as isize {
                                    continue;
                                }
                                let row = in_base + iy as usize * self.w;
                                let orow = out_base + oy * ow;
                                // contiguous run of valid ox
                                let lo = self.padding.1.saturating_sub(kx).div_ceil(self.stride.1);
                                let hi = ((self.w + self.padding.1).saturating_sub(kx)).div_ceil(self.stride.1).min(ow);
                                if lo < hi {
                                    f(row + lo * self.stride.1 + kx - self.padding.1, k_off, orow + lo, hi - lo);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(input: &[f64], kernel: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let [b, c, oh, ow] = g.out_shape();
    let mut out = vec![0.0; b * c * oh * ow];
    let sw = g.stride.1;
    g.for_each_tap(|in_off, k_off, out_off, run| {
        let kv = kernel[k_off];
        for i in 0..run {
            out[out_off + i] += kv * input[in_off + i * sw];
        }
    });
    out
}

pub fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    dout: &[f64],
    g: &Conv2dGeom,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut din = want_input.then(|| vec![0.0; input.len()]);
    let mut dk = want_kernel.then(|| vec![0.0; kernel.len()]);
    let sw = g.stride.1;
    g.for_each_tap(|in_off, k_off, out_off, run| {
        if let Some(din) = din.as_mut() {
            let kv = kernel[k_off];
            for i in 0..run {
                din[in_off + i * sw] += kv * dout[out_off + i];
            }
        }
        if let Some(dk) = dk.as_mut() {
            let mut acc = 0.0;
            for i in 0..run {
                acc += dout[out_off + i] * input[in_off + i * sw];
            }
            dk[k_off] += acc;
        }
    });
    (din, dk)
}

/// Source sampling positions for an align-corners resize along one axis:
/// `(lower index, upper index, weight of upper)`.
pub fn align_corners_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|o| {
            let pos = if dst > 1 {
                o as f64 * (src - 1) as f64 / (dst - 1) as f64
            } else {
                0.0
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

pub fn bilinear(x: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = align_corners_taps(h, oh);
    let tx = align_corners_taps(w, ow);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let (a, b) = (src[y0 * w + x0], src[y0 * w + x1]);
                let (c, d) = (src[y1 * w + x0], src[y1 * w + x1]);
                let top = a + wx * (b - a);
                let bottom = c + wx * (d - c);
                dst[oy * ow + ox] = top + wy * (bottom - top);
            }
        }
    }
    out
}

pub fn bilinear_backward(dy: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = align_corners_taps(h, oh);
    let tx = align_corners_taps(w, ow);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let g = &dy[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                d[y0 * w + x0] += (1.0 - wy) * (1.0 - wx) * v;
                d[y0 * w + x1] += (1.0 - wy) * wx * v;
                d[y1 * w + x0] += wy * (1.0 - wx) * v;
                d[y1 * w + x1] += wy * wx * v;
            }
        }
    }
    dx
}

/// Per-instance min/max rescaling: `scale·(x − min)/(max − min + eps)`
/// over each contiguous block of `len` values. Returns the output and the
/// (argmin, argmax) of every block.
pub fn min_max_scale(x: &[f64], len: usize, scale: f64, eps: f64) -> (Vec<f64>, Vec<(usize, usize)>) {
    let mut out = vec![0.0; x.len()];
    let mut args = Vec::with_capacity(x.len() / len);
    for (blk, (src, dst)) in x.chunks(len).zip(out.chunks_mut(len)).enumerate() {
        let (mut lo, mut hi) = (0usize, 0usize);
        for (i, &v) in src.iter().enumerate() {
            if v < src[lo] {
                lo = i;
            }
            if v > src[hi] {
                hi = i;
            }
        }
        let (mn, mx) = (src[lo], src[hi]);
        let denom = mx - mn + eps;
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = scale * (v - mn) / denom;
        }
        args.push((blk * len + lo, blk * len + hi));
    }
    (out, args)
}

pub fn min_max_scale_backward(
    x: &[f64],
    dy: &[f64],
    args: &[(usize, usize)],
    len: usize,
    scale: f64,
    eps: f64,
) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    for (blk, &(lo, hi)) in args.iter().enumerate() {
        let (mn, mx) = (x[lo], x[hi]);
        let r = mx - mn + eps;
        let base = blk * len;
        let mut d_min = 0.0;
        let mut d_max = 0.0;
        for j in 0..len {
            let g = dy[base + j];
            let rel = x[base + j] - mn;
            dx[base + j] += g * scale / r;
            d_min += g * (-scale / r + scale * rel / (r * r));
            d_max += g * (-scale * rel / (r * r));
        }
        dx[lo] += d_min;
        dx[hi] += d_max;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[4]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[2, 3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
    }

    #[test]
    fn broadcast_offsets_middle_axis() {
        // [2,1,2] onto [2,3,2]
        let offs = broadcast_offsets(&[2, 1, 2], &[2, 3, 2]);
        assert_eq!(offs, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);
    }

    #[test]
    fn permute_transposes() {
        let t = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let p = permute(&t, &[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[1., 4., 2., 5., 3., 6.]);
        assert!(permute(&t, &[0, 0]).is_err());
    }

    #[test]
    fn conv_geometry_rejects_oversized_kernel() {
        assert!(Conv2dGeom::new(&[1, 1, 2, 2], &[1, 1, 3, 3], (1, 1), (0, 0)).is_err());
        assert!(Conv2dGeom::new(&[1, 1, 2, 2], &[1, 1, 3, 3], (1, 1), (1, 1)).is_ok());
    }

    #[test]
    fn strided_conv_matches_direct_sum() {
        let geom = Conv2dGeom::new(&[1, 1, 5, 6], &[1, 1, 2, 3], (2, 2), (1, 1)).unwrap();
        let input: Vec<f64> = (0..30).map(|i| i as f64 * 0.5 - 3.0).collect();
        let kernel = vec![1.0, -2.0, 0.5, 3.0, 0.25, -1.0];
        let out = conv2d(&input, &kernel, &geom);
        let (oh, ow) = (geom.out_h(), geom.out_w());
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..2 {
                    for kx in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        let ix = (ox * 2 + kx) as isize - 1;
                        if (0..5).contains(&iy) && (0..6).contains(&ix) {
                            acc += input[iy as usize * 6 + ix as usize] * kernel[ky * 3 + kx];
                        }
                    }
                }
                assert!((out[oy * ow + ox] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
