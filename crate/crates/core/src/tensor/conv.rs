//! Same-size multi-channel cross-correlation via im2col and GEMM.
//!
//! `out[o, t] = Σ_{i, j} f[o, i, j] · x[i, pad(t + j - half)]`, where `j`
//! runs over the (odd) filter taps and `half = taps / 2`. There is no filter
//! flip; tap `0` reads offset `-half`.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Periodic wrap-around; keeps stationary inputs exactly stationary.
    Circular,
    /// Mirror about the edge sample, edge not repeated.
    #[default]
    Reflect,
}

impl Padding {
    #[inline]
    pub(crate) fn index(self, i: isize, n: usize) -> usize {
        let n = n as isize;
        match self {
            Padding::Circular => i.rem_euclid(n) as usize,
            Padding::Reflect => {
                if n == 1 {
                    return 0;
                }
                let period = 2 * (n - 1);
                let m = i.rem_euclid(period);
                (if m < n { m } else { period - m }) as usize
            }
        }
    }
}

/// Gathers the im2col matrix and the source index of every (tap, position).
struct Patches {
    taps: usize,
    positions: usize,
    /// `taps × positions` flat source offsets into one input channel.
    index: Vec<usize>,
}

impl Patches {
    fn new(spatial: &[usize], kernel: &[usize], padding: Padding) -> Self {
        let taps: usize = kernel.iter().product();
        let positions: usize = spatial.iter().product();
        let mut index = Vec::with_capacity(taps * positions);
        match (spatial, kernel) {
            (&[n], &[k]) => {
                let half = (k / 2) as isize;
                for j in 0..k as isize {
                    for t in 0..n as isize {
                        index.push(padding.index(t + j - half, n));
                    }
                }
            }
            (&[h, w], &[kh, kw]) => {
                let (hh, hw) = ((kh / 2) as isize, (kw / 2) as isize);
                for jy in 0..kh as isize {
                    for jx in 0..kw as isize {
                        let cols: Vec<usize> = (0..w as isize)
                            .map(|x| padding.index(x + jx - hw, w))
                            .collect();
                        for y in 0..h as isize {
                            let row = padding.index(y + jy - hh, h) * w;
                            index.extend(cols.iter().map(|&c| row + c));
                        }
                    }
                }
            }
            _ => unreachable!("validated by caller"),
        }
        Patches {
            taps,
            positions,
            index,
        }
    }

    fn gather(&self, input: &Tensor) -> Vec<f64> {
        let c = input.channels();
        let mut cols = vec![0.0; c * self.taps * self.positions];
        for ch in 0..c {
            let src = input.channel(ch);
            let block = &mut cols[ch * self.taps * self.positions..][..self.taps * self.positions];
            for (dst, &i) in block.iter_mut().zip(&self.index) {
                *dst = src[i];
            }
        }
        cols
    }

    fn scatter(&self, cols: &[f64], out: &mut Tensor) {
        let c = out.channels();
        for ch in 0..c {
            let block = &cols[ch * self.taps * self.positions..][..self.taps * self.positions];
            let dst = out.channel_mut(ch);
            for (&v, &i) in block.iter().zip(&self.index) {
                dst[i] += v;
            }
        }
    }
}

/// `c = a · b + beta · c` for row-major operands, `a: m×k`, `b: k×n` given
/// by (row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check(input: &Tensor, filters: &Tensor) -> Result<(usize, usize, Vec<usize>)> {
    let sdims = input.spatial().len();
    if !(1..=2).contains(&sdims) {
        return Err(Error::shape(format!(
            "conv supports 1 or 2 spatial axes, input has shape {:?}",
            input.shape()
        )));
    }
    if filters.shape().len() != sdims + 2 {
        return Err(Error::shape(format!(
            "filters {:?} do not match a {}-d input",
            filters.shape(),
            sdims
        )));
    }
    let (out_c, in_c) = (filters.shape()[0], filters.shape()[1]);
    if in_c != input.channels() {
        return Err(Error::shape(format!(
            "filters expect {in_c} input channels, input has {}",
            input.channels()
        )));
    }
    let kernel = filters.shape()[2..].to_vec();
    if let Some(k) = kernel.iter().find(|&&k| k % 2 == 0) {
        return Err(Error::invalid(format!("filter width must be odd, got {k}")));
    }
    Ok((out_c, in_c, kernel))
}

pub fn conv(input: &Tensor, filters: &Tensor, padding: Padding) -> Result<Tensor> {
    let (out_c, in_c, kernel) = check(input, filters)?;
    let patches = Patches::new(input.spatial(), &kernel, padding);
    let cols = patches.gather(input);
    let rows = in_c * patches.taps;
    let n = patches.positions;
    let mut shape = input.shape().to_vec();
    shape[0] = out_c;
    let mut out = Tensor::zeros(&shape);
    gemm(
        out_c,
        rows,
        n,
        filters.data(),
        (rows, 1),
        &cols,
        (n, 1),
        0.0,
        out.data_mut(),
    );
    Ok(out)
}

/// Gradients of `⟨conv(input, filters), upstream⟩` with respect to both
/// arguments.
pub fn conv_grad(
    input: &Tensor,
    filters: &Tensor,
    upstream: &Tensor,
    padding: Padding,
) -> Result<(Tensor, Tensor)> {
    let (out_c, in_c, kernel) = check(input, filters)?;
    if upstream.channels() != out_c || upstream.spatial() != input.spatial() {
        return Err(Error::shape(format!(
            "upstream gradient {:?} does not match conv output [{out_c}, {:?}]",
            upstream.shape(),
            input.spatial()
        )));
    }
    let patches = Patches::new(input.spatial(), &kernel, padding);
    let cols = patches.gather(input);
    let rows = in_c * patches.taps;
    let n = patches.positions;

    // dF = G · colsᵀ
    let mut grad_filters = Tensor::zeros(filters.shape());
    gemm(
        out_c,
        n,
        rows,
        upstream.data(),
        (n, 1),
        &cols,
        (1, n),
        0.0,
        grad_filters.data_mut(),
    );

    // dcols = Fᵀ · G, then scatter-add back through the patch map
    let mut grad_cols = vec![0.0; rows * n];
    gemm(
        rows,
        out_c,
        n,
        filters.data(),
        (1, rows),
        upstream.data(),
        (n, 1),
        0.0,
        &mut grad_cols,
    );
    let mut grad_input = Tensor::zeros(input.shape());
    patches.scatter(&grad_cols, &mut grad_input);
    Ok((grad_input, grad_filters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::gaussian_tensor;

    fn sig(v: &[f64]) -> Tensor {
        Tensor::from_signal(v)
    }

    fn filt(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn identity_filter() {
        let out = conv(&sig(&[1.0, 2.0, 3.0]), &filt(&[0.0, 1.0, 0.0]), Padding::Circular).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_filter_gives_zero() {
        let mut rng = Rng::new(1, 0);
        let x = gaussian_tensor(&mut rng, &[3, 9], 1.0).unwrap();
        let f = Tensor::zeros(&[2, 3, 3]);
        let out = conv(&x, &f, Padding::Reflect).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orientation_golden() {
        // tap 0 reads offset -1: out(t) = x(t - 1)
        let out = conv(&sig(&[1.0, 2.0, 3.0]), &filt(&[1.0, 0.0, 0.0]), Padding::Circular).unwrap();
        assert_eq!(out.data(), &[3.0, 1.0, 2.0]);
        let out = conv(&sig(&[1.0, 2.0, 3.0]), &filt(&[0.0, 0.0, 1.0]), Padding::Circular).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0, 1.0]);
    }

    #[test]
    fn reflect_golden() {
        // reflect pad of [1,2,3,4] by one: [2,1,2,3,4,3]
        let out = conv(&sig(&[1.0, 2.0, 3.0, 4.0]), &filt(&[1.0, 0.0, 0.0]), Padding::Reflect).unwrap();
        assert_eq!(out.data(), &[2.0, 1.0, 2.0, 3.0]);
        let out = conv(&sig(&[1.0, 2.0, 3.0, 4.0]), &filt(&[0.0, 0.0, 1.0]), Padding::Reflect).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0, 4.0, 3.0]);
    }

    #[test]
    fn two_d_orientation() {
        // 3x3 image, filter picking offset (-1, +1)
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let mut f = Tensor::zeros(&[1, 1, 3, 3]);
        f.data_mut()[2] = 1.0; // jy = 0 (dy=-1), jx = 2 (dx=+1)
        let out = conv(&x, &f, Padding::Circular).unwrap();
        // out(y, x) = in(y - 1, x + 1)
        assert_eq!(out.data(), &[8.0, 9.0, 7.0, 2.0, 3.0, 1.0, 5.0, 6.0, 4.0]);
    }

    #[test]
    fn errors() {
        let x = sig(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            conv(&x, &filt(&[1.0, 0.0]), Padding::Circular),
            Err(Error::InvalidArgument(_))
        ));
        let f = Tensor::zeros(&[1, 2, 3]);
        assert!(matches!(conv(&x, &f, Padding::Circular), Err(Error::Shape(_))));
        let g = Tensor::zeros(&[2, 3]);
        assert!(conv_grad(&x, &filt(&[0.0, 1.0, 0.0]), &g, Padding::Circular).is_err());
    }

    #[test]
    fn sum_loss_identity_filter_grad_is_ones() {
        let x = sig(&[0.3, -1.0, 2.0, 5.0]);
        let f = filt(&[0.0, 1.0, 0.0]);
        let up = Tensor::filled(&[1, 4], 1.0);
        let (gx, _) = conv_grad(&x, &f, &up, Padding::Reflect).unwrap();
        assert_eq!(gx.data(), &[1.0; 4]);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = Rng::new(3, 0);
        let x = gaussian_tensor(&mut rng, &[2, 5, 4], 1.0).unwrap();
        let f = gaussian_tensor(&mut rng, &[3, 2, 3, 3], 1.0).unwrap();
        let (gx, gf) = conv_grad(&x, &f, &Tensor::zeros(&[3, 5, 4]), Padding::Reflect).unwrap();
        assert!(gx.data().iter().chain(gf.data()).all(|&v| v == 0.0));
    }
}
