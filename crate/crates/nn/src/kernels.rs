//! Slice-level forward and backward kernels. Shapes are validated by the
//! callers in `tape`.

use crate::scalar::{gemm, Scalar};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<F: Scalar>(x: &[F], g: &ConvGeom, cols: &mut [F]) {
    let (h, w, k, ho, wo) = (g.h as isize, g.w as isize, g.k, g.ho, g.wo);
    let plane = ho * wo;
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * plane;
                for oy in 0..ho {
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix >= 0 && ix < w { src[ix as usize] } else { F::zero() };
                    }
                }
            }
        }
    }
}

fn col2im<F: Scalar>(cols: &[F], g: &ConvGeom, dx: &mut [F]) {
    let (h, w, k, ho, wo) = (g.h as isize, g.w as isize, g.k, g.ho, g.wo);
    let plane = ho * wo;
    for c in 0..g.cin {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * plane;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<F: Scalar>(x: &[F], weight: &[F], bias: &[F], g: &ConvGeom) -> Vec<F> {
    let (patch, plane) = (g.patch(), g.out_plane());
    let in_len = g.cin * g.h * g.w;
    let mut out = vec![F::zero(); g.batch * g.cout * plane];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![F::zero(); patch * plane] };
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let ob = &mut out[b * g.cout * plane..(b + 1) * g.cout * plane];
        for (o, row) in ob.chunks_exact_mut(plane).enumerate() {
            row.fill(bias[o]);
        }
        let cols_ref: &[F] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        gemm(g.cout, patch, plane, weight, false, cols_ref, false, F::one(), ob);
    }
    out
}

/// Returns `dx` (when requested) and accumulates into `dw`, `db`.
pub(crate) fn conv2d_backward<F: Scalar>(
    x: &[F],
    weight: &[F],
    gout: &[F],
    g: &ConvGeom,
    need_dx: bool,
    dw: &mut [F],
    db: &mut [F],
) -> Option<Vec<F>> {
    let (patch, plane) = (g.patch(), g.out_plane());
    let in_len = g.cin * g.h * g.w;
    let mut dx = need_dx.then(|| vec![F::zero(); g.batch * in_len]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![F::zero(); patch * plane] };
    let mut dcols = if need_dx && !g.is_pointwise() { vec![F::zero(); patch * plane] } else { Vec::new() };
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let gb = &gout[b * g.cout * plane..(b + 1) * g.cout * plane];
        for (o, row) in gb.chunks_exact(plane).enumerate() {
            let mut s = F::zero();
            for &v in row {
                s += v;
            }
            db[o] += s;
        }
        let cols_ref: &[F] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        gemm(g.cout, plane, patch, gb, false, cols_ref, true, F::one(), dw);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                gemm(patch, g.cout, plane, weight, true, gb, false, F::zero(), dxb);
            } else {
                gemm(patch, g.cout, plane, weight, true, gb, false, F::zero(), &mut dcols);
                col2im(&dcols, g, dxb);
            }
        }
    }
    dx
}

/// 2×2 stride-2 max. Ties go to the first element in raster order.
pub(crate) fn maxpool2_forward<F: Scalar>(x: &[F], planes: usize, h: usize, w: usize) -> (Vec<F>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn upsample2_forward<F: Scalar>(x: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let ow = 2 * w;
    let mut out = vec![F::zero(); planes * 4 * h * w];
    for p in 0..planes {
        for y in 0..2 * h {
            let src = &x[(p * h + y / 2) * w..(p * h + y / 2 + 1) * w];
            let dst = &mut out[(p * 2 * h + y) * ow..(p * 2 * h + y + 1) * ow];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<F: Scalar>(g: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let ow = 2 * w;
    let mut dx = vec![F::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..2 * h {
            let src = &g[(p * 2 * h + y) * ow..(p * 2 * h + y + 1) * ow];
            let dst = &mut dx[(p * h + y / 2) * w..(p * h + y / 2 + 1) * w];
            for (xo, &s) in src.iter().enumerate() {
                dst[xo / 2] += s;
            }
        }
    }
    dx
}

/// `C·r² × H × W → C × rH × rW` per batch element. With `inverse`, the
/// opposite rearrangement.
pub(crate) fn subpixel<F: Scalar>(
    x: &[F],
    batch: usize,
    c_out: usize,
    h: usize,
    w: usize,
    r: usize,
    inverse: bool,
) -> Vec<F> {
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![F::zero(); x.len()];
    for b in 0..batch {
        for c in 0..c_out {
            for y in 0..oh {
                for xo in 0..ow {
                    let src_c = c * r * r + (y % r) * r + (xo % r);
                    let small = ((b * c_out * r * r + src_c) * h + y / r) * w + xo / r;
                    let big = ((b * c_out + c) * oh + y) * ow + xo;
                    if inverse {
                        out[small] = x[big];
                    } else {
                        out[big] = x[small];
                    }
                }
            }
        }
    }
    out
}

pub(crate) struct CosineParts<F> {
    pub dot: Vec<F>,
    pub na2: Vec<F>,
    pub nb2: Vec<F>,
}

/// Channel-wise dot products and squared norms at every spatial location.
pub(crate) fn cosine_parts<F: Scalar>(a: &[F], b: &[F], batch: usize, c: usize, plane: usize) -> CosineParts<F> {
    let n = batch * plane;
    let mut parts = CosineParts {
        dot: vec![F::zero(); n],
        na2: vec![F::zero(); n],
        nb2: vec![F::zero(); n],
    };
    for bi in 0..batch {
        for ci in 0..c {
            let off = (bi * c + ci) * plane;
            let (ar, br) = (&a[off..off + plane], &b[off..off + plane]);
            let o = bi * plane;
            for p in 0..plane {
                parts.dot[o + p] += ar[p] * br[p];
                parts.na2[o + p] += ar[p] * ar[p];
                parts.nb2[o + p] += br[p] * br[p];
            }
        }
    }
    parts
}
