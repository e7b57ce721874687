//! im2col convolution kernels over `[H, W, C]` maps.

use super::Scalar;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.k * self.k * self.cin
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(g: &ConvGeometry, x: &[T]) -> Vec<T> {
    let plen = g.patch_len();
    let mut cols = vec![T::zero(); g.out_h * g.out_w * plen];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * plen..][..plen];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = &x[(iy as usize * g.w + ix as usize) * g.cin..][..g.cin];
                    row[(ky * g.k + kx) * g.cin..][..g.cin].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let plen = g.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * plen..][..plen];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = &mut dx[(iy as usize * g.w + ix as usize) * g.cin..][..g.cin];
                    let src = &row[(ky * g.k + kx) * g.cin..][..g.cin];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(g: &ConvGeometry, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let m = g.out_h * g.out_w;
    let plen = g.patch_len();
    let mut out = Vec::with_capacity(m * g.cout);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    let owned;
    let cols: &[T] = if g.is_pointwise() {
        x
    } else {
        owned = im2col(g, x);
        &owned
    };
    T::gemm(
        m,
        plen,
        g.cout,
        cols,
        plen as isize,
        1,
        weight,
        g.cout as isize,
        1,
        T::one(),
        &mut out,
        g.cout as isize,
        1,
    );
    out
}

/// Gradients with respect to `(input, weight, bias)`; each is computed only
/// when requested.
pub(crate) fn backward<T: Scalar>(
    g: &ConvGeometry,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    need: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let m = g.out_h * g.out_w;
    let plen = g.patch_len();

    let dx = need[0].then(|| {
        let mut dcols = vec![T::zero(); m * plen];
        // dcols = grad_out [m, cout] * weight^T [cout, plen]
        T::gemm(
            m,
            g.cout,
            plen,
            grad_out,
            g.cout as isize,
            1,
            weight,
            1,
            g.cout as isize,
            T::zero(),
            &mut dcols,
            plen as isize,
            1,
        );
        if g.is_pointwise() {
            dcols
        } else {
            let mut dx = vec![T::zero(); g.h * g.w * g.cin];
            col2im(g, &dcols, &mut dx);
            dx
        }
    });

    let dw = need[1].then(|| {
        let owned;
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            owned = im2col(g, x);
            &owned
        };
        let mut dw = vec![T::zero(); plen * g.cout];
        // dw = cols^T [plen, m] * grad_out [m, cout]
        T::gemm(
            plen,
            m,
            g.cout,
            cols,
            1,
            plen as isize,
            grad_out,
            g.cout as isize,
            1,
            T::zero(),
            &mut dw,
            g.cout as isize,
            1,
        );
        dw
    });

    let db = need[2].then(|| {
        let mut db = vec![T::zero(); g.cout];
        for row in grad_out.chunks_exact(g.cout) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        db
    });

    (dx, dw, db)
}
