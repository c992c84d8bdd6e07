//! Forward kernels and their vector-Jacobian products.
//!
//! Backward closures capture plain buffers, never tensors, so the graph only
//! owns its parents through `GradFn::parents`.

use super::{numel_of, Tensor};
use crate::error::{Error, Result};

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel_of(&shape[..axis]);
    let inner = numel_of(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

/// `out[n×m] = a[n×k] · b[k×m]`, accumulated in ascending `k` order.
pub(crate) fn mm(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_buf(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

impl Tensor {
    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(data, self.shape().to_vec(), &[self, other], |g| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        }))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(data, self.shape().to_vec(), &[self, other], |g| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let a = self.to_vec();
        let b = other.to_vec();
        let data = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let (a_req, b_req) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(data, self.shape().to_vec(), &[self, other], move |g| {
            let ga = a_req.then(|| g.iter().zip(&b).map(|(g, y)| g * y).collect());
            let gb = b_req.then(|| g.iter().zip(&a).map(|(g, x)| g * x).collect());
            vec![ga, gb]
        }))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |g| {
            vec![Some(g.iter().map(|v| v * factor).collect())]
        })
    }

    pub fn add_scalar(&self, value: f64) -> Tensor {
        let data = self.data().iter().map(|v| v + value).collect();
        Tensor::from_op(data, self.shape().to_vec(), &[self], |g| vec![Some(g.to_vec())])
    }

    /// Adds a vector along the last axis of every row (bias broadcast).
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let width = *self.shape().last().unwrap_or(&1);
        if self.rank() == 0 || row.shape() != [width] {
            return Err(Error::shape("add_row", self.shape(), row.shape()));
        }
        let r = row.to_vec();
        let data = self
            .data()
            .chunks(width.max(1))
            .flat_map(|chunk| chunk.iter().zip(&r).map(|(a, b)| a + b).collect::<Vec<_>>())
            .collect();
        Ok(Tensor::from_op(data, self.shape().to_vec(), &[self, row], move |g| {
            let mut gr = vec![0.0; width];
            for chunk in g.chunks(width.max(1)) {
                gr.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
            }
            vec![Some(g.to_vec()), Some(gr)]
        }))
    }

    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
        let x = self.to_vec();
        let y: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let y_saved = y.clone();
        Tensor::from_op(y, self.shape().to_vec(), &[self], move |g| {
            vec![Some(
                g.iter()
                    .zip(x.iter().zip(&y_saved))
                    .map(|(g, (&x, &y))| g * df(x, y))
                    .collect(),
            )]
        })
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    pub fn sin(&self) -> Tensor {
        self.unary(f64::sin, |x, _| x.cos())
    }

    pub fn cos(&self) -> Tensor {
        self.unary(f64::cos, |x, _| -x.sin())
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let total = self.data().iter().sum();
        Tensor::from_op(vec![total], vec![], &[self], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), &[self], |g| {
            vec![Some(g.to_vec())]
        }))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid(format!(
                "transpose expects a matrix, got shape {:?}",
                self.shape()
            )));
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let data = transpose_buf(&self.data(), r, c);
        Ok(Tensor::from_op(data, vec![c, r], &[self], move |g| {
            vec![Some(transpose_buf(g, c, r))]
        }))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let (n, k, m) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let a = self.to_vec();
        let b = other.to_vec();
        let data = mm(&a, &b, n, k, m);
        let (a_req, b_req) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(data, vec![n, m], &[self, other], move |g| {
            let ga = a_req.then(|| mm(g, &transpose_buf(&b, k, m), n, m, k));
            let gb = b_req.then(|| mm(&transpose_buf(&a, n, k), g, k, n, m));
            vec![ga, gb]
        }))
    }

    /// Batched matrix product: `[B, n, k] · [B, k, m] -> [B, n, m]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 3
            || other.rank() != 3
            || self.shape()[0] != other.shape()[0]
            || self.shape()[2] != other.shape()[1]
        {
            return Err(Error::shape("bmm", self.shape(), other.shape()));
        }
        let (bs, n, k, m) = (self.shape()[0], self.shape()[1], self.shape()[2], other.shape()[2]);
        let a = self.to_vec();
        let b = other.to_vec();
        let mut data = Vec::with_capacity(bs * n * m);
        for i in 0..bs {
            data.extend(mm(&a[i * n * k..(i + 1) * n * k], &b[i * k * m..(i + 1) * k * m], n, k, m));
        }
        let (a_req, b_req) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(data, vec![bs, n, m], &[self, other], move |g| {
            let mut ga = a_req.then(|| Vec::with_capacity(a.len()));
            let mut gb = b_req.then(|| Vec::with_capacity(b.len()));
            for i in 0..bs {
                let gi = &g[i * n * m..(i + 1) * n * m];
                let ai = &a[i * n * k..(i + 1) * n * k];
                let bi = &b[i * k * m..(i + 1) * k * m];
                if let Some(ga) = ga.as_mut() {
                    ga.extend(mm(gi, &transpose_buf(bi, k, m), n, m, k));
                }
                if let Some(gb) = gb.as_mut() {
                    gb.extend(mm(&transpose_buf(ai, n, k), gi, k, n, m));
                }
            }
            vec![ga, gb]
        }))
    }

    /// Numerically stable softmax along `axis` (the slice maximum is
    /// subtracted before exponentiating).
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::invalid(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        let (outer, dim, inner) = axis_extents(self.shape(), axis);
        if dim == 0 {
            return Err(Error::invalid("softmax over an empty axis"));
        }
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * dim + a) * inner + i;
                let max = (0..dim).map(|a| x[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for a in 0..dim {
                    let e = (x[at(a)] - max).exp();
                    y[at(a)] = e;
                    denom += e;
                }
                for a in 0..dim {
                    y[at(a)] /= denom;
                }
            }
        }
        drop(x);
        let y_saved = y.clone();
        Ok(Tensor::from_op(y, self.shape().to_vec(), &[self], move |g| {
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * dim + a) * inner + i;
                    let dot: f64 = (0..dim).map(|a| g[at(a)] * y_saved[at(a)]).sum();
                    for a in 0..dim {
                        gx[at(a)] = y_saved[at(a)] * (g[at(a)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + len > self.shape()[axis] {
            return Err(Error::invalid(format!(
                "narrow({axis}, {start}, {len}) out of range for shape {:?}",
                self.shape()
            )));
        }
        let (outer, dim, inner) = axis_extents(self.shape(), axis);
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&x[base..base + len * inner]);
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let total = self.numel();
        Ok(Tensor::from_op(data, shape, &[self], move |g| {
            let mut gx = vec![0.0; total];
            for o in 0..outer {
                let base = (o * dim + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenates tensors that agree on every axis except `axis`.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        if axis >= first.rank() {
            return Err(Error::invalid(format!("concat axis {axis} out of range")));
        }
        for p in &parts[1..] {
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = axis_extents(first.shape(), axis);
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total_width: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total_width);
        let bufs: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (buf, &w) in bufs.iter().zip(&widths) {
                data.extend_from_slice(&buf[o * w..(o + 1) * w]);
            }
        }
        drop(bufs);
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op(data, shape, parts, move |g| {
            let mut grads: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(outer * w)).collect();
            for o in 0..outer {
                let mut off = o * total_width;
                for (gp, &w) in grads.iter_mut().zip(&widths) {
                    gp.extend_from_slice(&g[off..off + w]);
                    off += w;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Gathers rows (entries of axis 0). Indices may repeat.
    pub fn index_select(&self, rows: &[usize]) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(Error::invalid("index_select on a scalar"));
        }
        let n = self.shape()[0];
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::invalid(format!("row {bad} out of range for {n} rows")));
        }
        let width = numel_of(&self.shape()[1..]);
        let x = self.data();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(&x[r * width..(r + 1) * width]);
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape[0] = rows.len();
        let rows = rows.to_vec();
        Ok(Tensor::from_op(data, shape, &[self], move |g| {
            let mut gx = vec![0.0; n * width];
            for (i, &r) in rows.iter().enumerate() {
                gx[r * width..(r + 1) * width]
                    .iter_mut()
                    .zip(&g[i * width..(i + 1) * width])
                    .for_each(|(a, b)| *a += b);
            }
            vec![Some(gx)]
        }))
    }

    /// Adds row `i` of `self` into row `rows[i]` of an `n_rows`-row zero
    /// tensor. Colliding rows sum.
    pub fn scatter_add(&self, rows: &[usize], n_rows: usize) -> Result<Tensor> {
        if self.rank() == 0 || self.shape()[0] != rows.len() {
            return Err(Error::invalid(format!(
                "scatter_add: {} row indices for shape {:?}",
                rows.len(),
                self.shape()
            )));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(Error::invalid(format!("row {bad} out of range for {n_rows} rows")));
        }
        let width = numel_of(&self.shape()[1..]);
        let x = self.data();
        let mut data = vec![0.0; n_rows * width];
        for (i, &r) in rows.iter().enumerate() {
            data[r * width..(r + 1) * width]
                .iter_mut()
                .zip(&x[i * width..(i + 1) * width])
                .for_each(|(a, b)| *a += b);
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape[0] = n_rows;
        let rows = rows.to_vec();
        Ok(Tensor::from_op(data, shape, &[self], move |g| {
            let mut gx = Vec::with_capacity(rows.len() * width);
            for &r in &rows {
                gx.extend_from_slice(&g[r * width..(r + 1) * width]);
            }
            vec![Some(gx)]
        }))
    }

    /// Bilinear interpolation of a `[W, H, C]` map at continuous `(u, v)`
    /// locations given as an `[N, 2]` tensor; returns `[N, C]`.
    ///
    /// Corners outside `[0, W-1] x [0, H-1]` read as zero. Differentiable
    /// with respect to both the map and the locations.
    pub fn bilinear_sample(&self, points: &Tensor) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(Error::invalid(format!(
                "bilinear_sample expects a [W, H, C] map, got {:?}",
                self.shape()
            )));
        }
        if points.rank() != 2 || points.shape()[1] != 2 {
            return Err(Error::shape("bilinear_sample", self.shape(), points.shape()));
        }
        let (w, h, c) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let n = points.shape()[0];
        let map = self.to_vec();
        let pts = points.to_vec();

        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let corners = bilinear_corners(pts[2 * i], pts[2 * i + 1], w, h);
            let row = &mut out[i * c..(i + 1) * c];
            for corner in corners.iter() {
                let (Some(base), wt) = (corner.offset, corner.weight) else { continue };
                let cell = &map[base * c..(base + 1) * c];
                row.iter_mut().zip(cell).for_each(|(o, v)| *o += wt * v);
            }
        }

        let (map_req, pts_req) = (self.requires_grad(), points.requires_grad());
        Ok(Tensor::from_op(out, vec![n, c], &[self, points], move |g| {
            let mut gmap = map_req.then(|| vec![0.0; map.len()]);
            let mut gpts = pts_req.then(|| vec![0.0; pts.len()]);
            let cell = |corner: &Corner| -> Option<&[f64]> {
                corner.offset.map(|b| &map[b * c..(b + 1) * c])
            };
            for i in 0..n {
                let (u, v) = (pts[2 * i], pts[2 * i + 1]);
                let corners = bilinear_corners(u, v, w, h);
                let gi = &g[i * c..(i + 1) * c];
                if let Some(gm) = gmap.as_mut() {
                    for corner in corners.iter() {
                        if let Some(b) = corner.offset {
                            gm[b * c..(b + 1) * c]
                                .iter_mut()
                                .zip(gi)
                                .for_each(|(a, gv)| *a += corner.weight * gv);
                        }
                    }
                }
                if let Some(gp) = gpts.as_mut() {
                    let fu = u - u.floor();
                    let fv = v - v.floor();
                    let val = |k: usize, ch: usize| cell(&corners[k]).map_or(0.0, |s| s[ch]);
                    let (mut du, mut dv) = (0.0, 0.0);
                    for ch in 0..c {
                        // corners: 0 = (u0, v0), 1 = (u0+1, v0), 2 = (u0, v0+1), 3 = (u0+1, v0+1)
                        let (c00, c10, c01, c11) = (val(0, ch), val(1, ch), val(2, ch), val(3, ch));
                        du += gi[ch] * ((c10 - c00) * (1.0 - fv) + (c11 - c01) * fv);
                        dv += gi[ch] * ((c01 - c00) * (1.0 - fu) + (c11 - c10) * fu);
                    }
                    gp[2 * i] += du;
                    gp[2 * i + 1] += dv;
                }
            }
            vec![gmap, gpts]
        }))
    }
}

#[derive(Clone, Copy)]
struct Corner {
    /// Flat cell index `u * H + v`, or `None` when outside the map.
    offset: Option<usize>,
    weight: f64,
}

fn bilinear_corners(u: f64, v: f64, w: usize, h: usize) -> [Corner; 4] {
    let u0 = u.floor();
    let v0 = v.floor();
    let fu = u - u0;
    let fv = v - v0;
    let cell = |du: f64, dv: f64| -> Option<usize> {
        let cu = u0 + du;
        let cv = v0 + dv;
        (cu >= 0.0 && cv >= 0.0 && cu < w as f64 && cv < h as f64)
            .then(|| cu as usize * h + cv as usize)
    };
    [
        Corner { offset: cell(0.0, 0.0), weight: (1.0 - fu) * (1.0 - fv) },
        Corner { offset: cell(1.0, 0.0), weight: fu * (1.0 - fv) },
        Corner { offset: cell(0.0, 1.0), weight: (1.0 - fu) * fv },
        Corner { offset: cell(1.0, 1.0), weight: fu * fv },
    ]
}
