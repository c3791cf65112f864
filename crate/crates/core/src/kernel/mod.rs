//! Stationary covariance functions on integer lag grids.
//!
//! A [`StationaryKernel`] stores `K(r)` for every lag `r` in `[-L, L]^dims`.
//! Each network layer maps the covariance of its input to that of its output
//! ([`transfer`]); folding a [`NetworkSpec`](crate::NetworkSpec) through those
//! maps yields the covariance of the infinitely wide network ([`derive_kernel`]).

mod io;
mod transfer;

pub use io::{read_kernel_text, write_kernel_text, KernelFile};
pub use transfer::{
    derive_kernel, input_kernel, transfer_bias, transfer_conv, transfer_nonlinearity,
    transfer_resample, transfer_skip, Derivation, TraceEntry,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Integer coordinate; 1D points use only the first component.
pub type Point = [i64; 2];

/// Largest half width a grid may grow to through upsampling.
pub const MAX_HALF_WIDTH_1D: usize = 1 << 16;
pub const MAX_HALF_WIDTH_2D: usize = 1 << 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryKernel {
    dims: usize,
    half_width: usize,
    values: Vec<f64>,
}

impl StationaryKernel {
    /// Wrap grid values, checking length, finiteness, `K(0) > 0` and symmetry.
    pub fn new(dims: usize, half_width: usize, values: Vec<f64>) -> Result<Self> {
        let k = StationaryKernel::from_raw(dims, half_width, values);
        k.check_shape()?;
        k.check()?;
        Ok(k)
    }

    pub(crate) fn check_shape(&self) -> Result<()> {
        let (dims, half_width) = (self.dims, self.half_width);
        if !(1..=2).contains(&dims) {
            return Err(Error::invalid(format!("kernel dims must be 1 or 2, got {dims}")));
        }
        let expected = (2 * half_width + 1).pow(dims as u32);
        if self.values.len() != expected {
            return Err(Error::shape(format!(
                "{dims}-d kernel with half width {half_width} needs {expected} values, got {}",
                self.values.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn from_raw(dims: usize, half_width: usize, values: Vec<f64>) -> Self {
        StationaryKernel {
            dims,
            half_width,
            values,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("kernel value {v}")));
        }
        let k0 = self.variance();
        if !(k0 > 0.0) {
            return Err(Error::invalid(format!("kernel variance K(0) must be > 0, got {k0}")));
        }
        let n = self.values.len();
        for i in 0..n {
            let a = self.values[i];
            let b = self.values[n - 1 - i];
            if (a - b).abs() > 1e-12 * k0 {
                return Err(Error::invalid("kernel is not symmetric, K(r) != K(-r)"));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn variance(&self) -> f64 {
        self.values[self.values.len() / 2]
    }

    #[inline]
    pub fn index(&self, lag: Point) -> Option<usize> {
        let l = self.half_width as i64;
        let side = self.side();
        let in_range = |r: i64| (-l..=l).contains(&r);
        match self.dims {
            1 if lag[1] == 0 && in_range(lag[0]) => Some((lag[0] + l) as usize),
            2 if in_range(lag[0]) && in_range(lag[1]) => {
                Some((lag[0] + l) as usize * side + (lag[1] + l) as usize)
            }
            _ => None,
        }
    }

    pub fn get(&self, lag: Point) -> Option<f64> {
        self.index(lag).map(|i| self.values[i])
    }

    /// Correlation `K(r) / K(0)`.
    pub fn rho(&self, lag: Point) -> Option<f64> {
        self.get(lag).map(|v| v / self.variance())
    }

    /// Every lag of the grid, in storage order.
    pub fn lags(&self) -> impl Iterator<Item = Point> + '_ {
        let l = self.half_width as i64;
        let dims = self.dims;
        let n = (2 * self.half_width + 1).pow(dims as u32);
        (0..n).map(move |i| {
            let side = 2 * l + 1;
            match dims {
                1 => [i as i64 - l, 0],
                _ => [i as i64 / side - l, i as i64 % side - l],
            }
        })
    }

    /// `K(r)` for `r = 0..=L` along the first axis.
    pub fn profile(&self) -> Vec<f64> {
        (0..=self.half_width as i64)
            .map(|r| self.get([r, 0]).expect("in range"))
            .collect()
    }

    /// Restrict to a smaller lag window.
    pub fn crop(&self, half_width: usize) -> Result<Self> {
        if half_width > self.half_width {
            return Err(Error::invalid(format!(
                "cannot crop half width {} to {half_width}",
                self.half_width
            )));
        }
        let l = half_width as i64;
        let side = 2 * half_width + 1;
        let values = (0..side.pow(self.dims as u32))
            .map(|i| {
                let lag = match self.dims {
                    1 => [i as i64 - l, 0],
                    _ => [i as i64 / side as i64 - l, i as i64 % side as i64 - l],
                };
                self.get(lag).expect("inside source grid")
            })
            .collect();
        Ok(StationaryKernel::from_raw(self.dims, half_width, values))
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        StationaryKernel::from_raw(
            self.dims,
            self.half_width,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scaled_to_variance(&self, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::invalid(format!("variance must be > 0, got {variance}")));
        }
        let s = variance / self.variance();
        Ok(self.map(|v| v * s))
    }
}

pub fn white_kernel(sigma: f64, dims: usize, half_width: usize) -> Result<StationaryKernel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("white kernel needs sigma > 0, got {sigma}")));
    }
    let side = 2 * half_width + 1;
    let n = side.pow(dims as u32);
    let mut values = vec![0.0; n];
    values[n / 2] = sigma * sigma;
    StationaryKernel::new(dims, half_width, values)
}

/// Normalised discrete Gaussian filter taps of standard deviation `std`,
/// truncated at radius `ceil(3 std)`.
pub fn gaussian_taps(std: f64) -> Vec<f64> {
    let radius = (3.0 * std).ceil().max(1.0) as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * std * std)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Covariance of white noise (variance `sigma_noise²`) after filtering each
/// axis with [`gaussian_taps`]`(filter_std)`: `σ² (g ⋆ g)(r)`.
pub fn gaussian_filtered_kernel(
    sigma_noise: f64,
    filter_std: f64,
    dims: usize,
    half_width: usize,
) -> Result<StationaryKernel> {
    if !(sigma_noise > 0.0 && sigma_noise.is_finite()) {
        return Err(Error::invalid(format!("sigma_noise must be > 0, got {sigma_noise}")));
    }
    if !(filter_std > 0.0 && filter_std.is_finite()) {
        return Err(Error::invalid(format!("filter std must be > 0, got {filter_std}")));
    }
    let taps = gaussian_taps(filter_std);
    let radius = taps.len() / 2;
    if half_width < 2 * radius {
        return Err(Error::invalid(format!(
            "half width {half_width} cannot hold the filter autocorrelation support {}",
            2 * radius
        )));
    }
    let auto = |r: i64| -> f64 {
        let r = r.unsigned_abs() as usize;
        if r > 2 * radius {
            return 0.0;
        }
        taps.iter().zip(&taps[r..]).map(|(a, b)| a * b).sum()
    };
    let l = half_width as i64;
    let s2 = sigma_noise * sigma_noise;
    let values: Vec<f64> = match dims {
        1 => (-l..=l).map(|r| s2 * auto(r)).collect(),
        2 => {
            let a: Vec<f64> = (-l..=l).map(auto).collect();
            a.iter()
                .flat_map(|&x| a.iter().map(move |&y| s2 * x * y))
                .collect()
        }
        _ => return Err(Error::invalid(format!("kernel dims must be 1 or 2, got {dims}"))),
    };
    StationaryKernel::new(dims, half_width, values)
}

/// Gram matrix `M[i][j] = K(p_i - p_j)`.
pub fn to_gram(k: &StationaryKernel, points: &[Point]) -> Result<Matrix> {
    cross_gram(k, points, points)
}

/// Cross-covariance `M[i][j] = K(a_i - b_j)`.
pub fn cross_gram(k: &StationaryKernel, a: &[Point], b: &[Point]) -> Result<Matrix> {
    let mut m = Matrix::zeros(a.len(), b.len());
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let lag = [p[0] - q[0], p[1] - q[1]];
            let v = k.get(lag).ok_or_else(|| {
                Error::invalid(format!(
                    "lag {lag:?} between {p:?} and {q:?} is outside the kernel support (half width {})",
                    k.half_width()
                ))
            })?;
            m.set(i, j, v);
        }
    }
    Ok(m)
}
