//! Forward and backward loops for the heavier primitives. Everything here works on
//! flat row-major slices; shape validation happens in the tape methods that call in.

use crate::real::Real;

/// Lower clamp applied to `log` inputs and division denominators.
pub(crate) const CLAMP_FLOOR: f64 = 1e-12;

pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (x, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *x += av * bv;
            }
        }
    }
    c
}

/// `ga += g · bᵀ` with `g: m×n`, `b: k×n`, `ga: m×k`.
pub(crate) fn matmul_a_bt<T: Real>(g: &[T], b: &[T], ga: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            ga[i * k + p] += dot;
        }
    }
}

/// `gb += aᵀ · g` with `a: m×k`, `g: m×n`, `gb: k×n`.
pub(crate) fn matmul_at_b<T: Real>(a: &[T], g: &[T], gb: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (x, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *x += av * y;
            }
        }
    }
}

/// Constant sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseMatrix<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(
                r < rows && c < cols,
                "triplet ({r},{c}) outside {rows}x{cols}"
            );
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[r * self.cols + c] += v;
            }
        }
        out
    }

    /// `self · x` for a dense `cols × f` block.
    pub(crate) fn mul_dense(&self, x: &[T], f: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * f];
        for r in 0..self.rows {
            let dst = &mut out[r * f..(r + 1) * f];
            for (c, v) in self.row(r) {
                for (o, &xv) in dst.iter_mut().zip(&x[c * f..(c + 1) * f]) {
                    *o += v * xv;
                }
            }
        }
        out
    }

    /// `gx += selfᵀ · g` for a dense `rows × f` block.
    pub(crate) fn transpose_mul_into(&self, g: &[T], f: usize, gx: &mut [T]) {
        for r in 0..self.rows {
            let src = &g[r * f..(r + 1) * f];
            for (c, v) in self.row(r) {
                for (o, &gv) in gx[c * f..(c + 1) * f].iter_mut().zip(src) {
                    *o += v * gv;
                }
            }
        }
    }
}

/// Static shape information of one 2D convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// `None` when the dilated kernel does not fit the padded input.
    pub fn new(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Option<Self> {
        let span = dilation * (k - 1) + 1;
        if stride == 0
            || dilation == 0
            || k == 0
            || h + 2 * padding < span
            || w + 2 * padding < span
        {
            return None;
        }
        Some(ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            dilation,
            padding,
            out_h: (h + 2 * padding - span) / stride + 1,
            out_w: (w + 2 * padding - span) / stride + 1,
        })
    }

    /// Output positions `lo..hi` whose tap at `offset` lands inside `0..len`.
    fn valid(&self, out_len: usize, len: usize, tap: usize) -> (usize, usize, isize) {
        let offset = (tap * self.dilation) as isize - self.padding as isize;
        let s = self.stride as isize;
        let lo = if offset >= 0 {
            0
        } else {
            ((-offset) + s - 1) / s
        };
        let last = len as isize - 1 - offset;
        let hi = if last < 0 {
            0
        } else {
            (last / s + 1).min(out_len as isize)
        };
        (lo as usize, hi.max(lo) as usize, offset)
    }

    fn weight_index(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.c_in + ci) * self.k + ky) * self.k + kx
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    geom: &ConvGeometry,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let g = geom;
    let plane = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.c_out * plane];
    for co in 0..g.c_out {
        let dst = &mut out[co * plane..(co + 1) * plane];
        if let Some(b) = bias {
            dst.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..g.c_in {
            let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                let (y_lo, y_hi, y_off) = g.valid(g.out_h, g.h, ky);
                for kx in 0..g.k {
                    let wv = w[g.weight_index(co, ci, ky, kx)];
                    let (x_lo, x_hi, x_off) = g.valid(g.out_w, g.w, kx);
                    for oy in y_lo..y_hi {
                        let iy = (oy as isize * g.stride as isize + y_off) as usize;
                        let row_in = &src[iy * g.w..(iy + 1) * g.w];
                        let row_out = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            let start = (x_lo as isize + x_off) as usize;
                            let n = x_hi - x_lo;
                            for (o, &i) in row_out[x_lo..x_hi]
                                .iter_mut()
                                .zip(&row_in[start..start + n])
                            {
                                *o += wv * i;
                            }
                        } else {
                            for ox in x_lo..x_hi {
                                let ix = (ox as isize * g.stride as isize + x_off) as usize;
                                row_out[ox] += wv * row_in[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_backward_input<T: Real>(
    geom: &ConvGeometry,
    w: &[T],
    gout: &[T],
    gx: &mut [T],
) {
    let g = geom;
    let plane = g.out_h * g.out_w;
    for co in 0..g.c_out {
        let gsrc = &gout[co * plane..(co + 1) * plane];
        for ci in 0..g.c_in {
            let dst = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                let (y_lo, y_hi, y_off) = g.valid(g.out_h, g.h, ky);
                for kx in 0..g.k {
                    let wv = w[g.weight_index(co, ci, ky, kx)];
                    let (x_lo, x_hi, x_off) = g.valid(g.out_w, g.w, kx);
                    for oy in y_lo..y_hi {
                        let iy = (oy as isize * g.stride as isize + y_off) as usize;
                        let row_g = &gsrc[oy * g.out_w..(oy + 1) * g.out_w];
                        let row_dst = &mut dst[iy * g.w..(iy + 1) * g.w];
                        for ox in x_lo..x_hi {
                            let ix = (ox as isize * g.stride as isize + x_off) as usize;
                            row_dst[ix] += wv * row_g[ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward_kernel<T: Real>(
    geom: &ConvGeometry,
    x: &[T],
    gout: &[T],
    gw: &mut [T],
) {
    let g = geom;
    let plane = g.out_h * g.out_w;
    for co in 0..g.c_out {
        let gsrc = &gout[co * plane..(co + 1) * plane];
        for ci in 0..g.c_in {
            let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                let (y_lo, y_hi, y_off) = g.valid(g.out_h, g.h, ky);
                for kx in 0..g.k {
                    let (x_lo, x_hi, x_off) = g.valid(g.out_w, g.w, kx);
                    let mut acc = T::zero();
                    for oy in y_lo..y_hi {
                        let iy = (oy as isize * g.stride as isize + y_off) as usize;
                        let row_g = &gsrc[oy * g.out_w..(oy + 1) * g.out_w];
                        let row_in = &src[iy * g.w..(iy + 1) * g.w];
                        for ox in x_lo..x_hi {
                            let ix = (ox as isize * g.stride as isize + x_off) as usize;
                            acc += row_g[ox] * row_in[ix];
                        }
                    }
                    gw[g.weight_index(co, ci, ky, kx)] += acc;
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward_bias<T: Real>(geom: &ConvGeometry, gout: &[T], gb: &mut [T]) {
    let plane = geom.out_h * geom.out_w;
    for (co, b) in gb.iter_mut().enumerate() {
        *b += gout[co * plane..(co + 1) * plane]
            .iter()
            .copied()
            .sum::<T>();
    }
}

/// 2×2 non-overlapping max over `C×H×W`; returns values and the flat source index of
/// each output (first occurrence wins on ties).
pub(crate) fn maxpool2_forward<T: Real>(shape: &[usize], x: &[T]) -> (Vec<T>, Vec<usize>) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ch * h * w + 2 * oy * w + 2 * ox;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn upsample2_forward<T: Real>(shape: &[usize], x: &[T]) -> Vec<T> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                out[(ch * oh + oy) * ow + ox] = x[(ch * h + oy / 2) * w + ox / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Real>(shape: &[usize], g: &[T], gx: &mut [T]) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = (2 * h, 2 * w);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                gx[(ch * h + oy / 2) * w + ox / 2] += g[(ch * oh + oy) * ow + ox];
            }
        }
    }
}

/// Attention neighborhoods in compressed-row form; row `i` lists the nodes node `i`
/// attends to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Neighborhoods {
    pub fn new(lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut indices = Vec::new();
        for list in lists {
            indices.extend(list);
            offsets.push(indices.len());
        }
        Neighborhoods { offsets, indices }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn span(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn edge_count(&self) -> usize {
        self.indices.len()
    }
}

pub(crate) struct AttentionForward<T> {
    pub out: Vec<T>,
    pub alpha: Vec<T>,
    pub pre: Vec<T>,
}

/// `out_i = Σ_j α_ij z_j` with `α_i = softmax_j(LeakyReLU(a₁·z_i + a₂·z_j))`.
pub(crate) fn attention_forward<T: Real>(
    nbr: &Neighborhoods,
    z: &[T],
    attn: &[T],
    f: usize,
    slope: T,
) -> AttentionForward<T> {
    let n = nbr.node_count();
    let (a_src, a_dst) = attn.split_at(f);
    let score = |a: &[T], i: usize| -> T {
        z[i * f..(i + 1) * f]
            .iter()
            .zip(a)
            .map(|(&x, &y)| x * y)
            .sum()
    };
    let s_src: Vec<T> = (0..n).map(|i| score(a_src, i)).collect();
    let s_dst: Vec<T> = (0..n).map(|i| score(a_dst, i)).collect();
    let mut pre = vec![T::zero(); nbr.edge_count()];
    let mut alpha = vec![T::zero(); nbr.edge_count()];
    let mut out = vec![T::zero(); n * f];
    for i in 0..n {
        let span = nbr.span(i);
        let mut max = T::neg_infinity();
        for (e, &j) in span.clone().zip(nbr.of(i)) {
            pre[e] = s_src[i] + s_dst[j];
            let logit = leaky(pre[e], slope);
            alpha[e] = logit;
            max = max.max(logit);
        }
        let mut total = T::zero();
        for e in span.clone() {
            alpha[e] = (alpha[e] - max).exp();
            total += alpha[e];
        }
        let dst = &mut out[i * f..(i + 1) * f];
        for (e, &j) in span.zip(nbr.of(i)) {
            alpha[e] /= total;
            for (o, &zv) in dst.iter_mut().zip(&z[j * f..(j + 1) * f]) {
                *o += alpha[e] * zv;
            }
        }
    }
    AttentionForward { out, alpha, pre }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Real>(
    nbr: &Neighborhoods,
    z: &[T],
    attn: &[T],
    f: usize,
    slope: T,
    alpha: &[T],
    pre: &[T],
    g: &[T],
    gz: &mut [T],
    gattn: &mut [T],
) {
    let n = nbr.node_count();
    let (a_src, a_dst) = attn.split_at(f);
    let mut d_src = vec![T::zero(); n];
    let mut d_dst = vec![T::zero(); n];
    let mut d_alpha = vec![T::zero(); nbr.edge_count()];
    for i in 0..n {
        let gi = &g[i * f..(i + 1) * f];
        let mut weighted = T::zero();
        for (e, &j) in nbr.span(i).zip(nbr.of(i)) {
            let zj = &z[j * f..(j + 1) * f];
            d_alpha[e] = gi.iter().zip(zj).map(|(&x, &y)| x * y).sum();
            weighted += alpha[e] * d_alpha[e];
            for (o, &gv) in gz[j * f..(j + 1) * f].iter_mut().zip(gi) {
                *o += alpha[e] * gv;
            }
        }
        for (e, &j) in nbr.span(i).zip(nbr.of(i)) {
            let d_logit = alpha[e] * (d_alpha[e] - weighted);
            let d_pre = if pre[e] > T::zero() {
                d_logit
            } else {
                d_logit * slope
            };
            d_src[i] += d_pre;
            d_dst[j] += d_pre;
        }
    }
    let (ga_src, ga_dst) = gattn.split_at_mut(f);
    for i in 0..n {
        let zi = &z[i * f..(i + 1) * f];
        let row = &mut gz[i * f..(i + 1) * f];
        for k in 0..f {
            row[k] += d_src[i] * a_src[k] + d_dst[i] * a_dst[k];
            ga_src[k] += d_src[i] * zi[k];
            ga_dst[k] += d_dst[i] * zi[k];
        }
    }
}

#[inline]
pub(crate) fn leaky<T: Real>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * slope
    }
}

/// Normalized coordinate of index `i` along an axis of length `len`, as an offset
/// from the axis midpoint: `i/(len-1) - 0.5`, or `0` when `len == 1`.
/// Mirrored indices produce exact negatives of each other.
pub(crate) fn centered_coord<T: Real>(i: usize, len: usize) -> T {
    if len == 1 {
        T::zero()
    } else {
        let num = 2.0 * i as f64 - (len - 1) as f64;
        T::of(num / (2.0 * (len - 1) as f64))
    }
}

/// Mirror-paired sum `Σ_i coord(i)·m[i]`: each index is added together with its
/// mirror, so symmetric weights cancel exactly.
fn paired_moment<T: Real>(m: &[T]) -> T {
    let len = m.len();
    let mut acc = T::zero();
    for i in 0..len / 2 {
        let j = len - 1 - i;
        acc += centered_coord::<T>(i, len) * m[i] + centered_coord::<T>(j, len) * m[j];
    }
    acc
}

/// Per-channel softmax over all positions of `C×H×W`, then expected (row, col)
/// normalized coordinates. Returns the `C×2` centroids and the probabilities.
pub(crate) fn center_of_mass_forward<T: Real>(shape: &[usize], x: &[T]) -> (Vec<T>, Vec<T>) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let half = T::of(0.5);
    let mut probs = vec![T::zero(); x.len()];
    let mut out = Vec::with_capacity(2 * c);
    for ch in 0..c {
        let src = &x[ch * plane..(ch + 1) * plane];
        let p = &mut probs[ch * plane..(ch + 1) * plane];
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (pv, &v) in p.iter_mut().zip(src) {
            *pv = (v - max).exp();
            total += *pv;
        }
        p.iter_mut().for_each(|v| *v /= total);
        let rows: Vec<T> = (0..h)
            .map(|r| p[r * w..(r + 1) * w].iter().copied().sum())
            .collect();
        let cols: Vec<T> = (0..w)
            .map(|col| (0..h).map(|r| p[r * w + col]).sum())
            .collect();
        out.push(half + paired_moment(&rows));
        out.push(half + paired_moment(&cols));
    }
    (out, probs)
}

pub(crate) fn center_of_mass_backward<T: Real>(
    shape: &[usize],
    probs: &[T],
    centroids: &[T],
    g: &[T],
    gx: &mut [T],
) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let half = T::of(0.5);
    for ch in 0..c {
        let (row_c, col_c) = (centroids[2 * ch], centroids[2 * ch + 1]);
        let (g_row, g_col) = (g[2 * ch], g[2 * ch + 1]);
        for r in 0..h {
            let rho = half + centered_coord::<T>(r, h);
            for col in 0..w {
                let gamma = half + centered_coord::<T>(col, w);
                let k = ch * plane + r * w + col;
                gx[k] += probs[k] * (g_row * (rho - row_c) + g_col * (gamma - col_c));
            }
        }
    }
}
