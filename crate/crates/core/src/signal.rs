//! Images, 1D signals, corruptions, masks and reconstruction metrics.
//!
//! Images are read and written as netpbm: PGM (`P2`/`P5`) for grayscale and
//! PPM (`P3`/`P6`) for color, with maxval 255 or 65535. Binary 16-bit
//! samples are big-endian. Values live in `[0, 1]` in memory and are only
//! clamped when encoded.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Interleaved row-major samples, `(y * width + x) * channels + c`.
    pub values: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::shape("image extents must be positive"));
        }
        if values.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        Ok(ImageBuffer {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        ImageBuffer::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Planar `channels × height × width` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; h * w * c];
        for p in 0..h * w {
            for ch in 0..c {
                data[ch * h * w + p] = self.values[p * c + ch];
            }
        }
        Tensor::new(vec![c, h, w], data).expect("consistent extents")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [c, h, w] = t.shape() else {
            return Err(Error::shape(format!("expected a channels×height×width tensor, got {:?}", t.shape())));
        };
        let (c, h, w) = (*c, *h, *w);
        let mut values = vec![0.0; h * w * c];
        for ch in 0..c {
            for p in 0..h * w {
                values[p * c + ch] = t.data()[ch * h * w + p];
            }
        }
        ImageBuffer::new(h, w, c, values)
    }

    fn check_same_shape(&self, other: &ImageBuffer) -> Result<()> {
        if (self.height, self.width, self.channels) != (other.height, other.width, other.channels) {
            return Err(Error::shape(format!(
                "images differ in shape: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }

    /// Linear map of a heat map (e.g. a variance image) onto `[0, 1]`.
    pub fn normalized(&self) -> ImageBuffer {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let values = self
            .values
            .iter()
            .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
            .collect();
        ImageBuffer { values, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Ascii,
    Binary,
}

/// Encode as PGM/PPM. `maxval` must be 255 or 65535.
pub fn encode_netpbm(img: &ImageBuffer, maxval: u16, encoding: Encoding) -> Result<Vec<u8>> {
    if maxval != 255 && maxval != 65535 {
        return Err(Error::invalid(format!("unsupported maxval {maxval}")));
    }
    let magic = match (img.channels, encoding) {
        (1, Encoding::Ascii) => "P2",
        (1, Encoding::Binary) => "P5",
        (_, Encoding::Ascii) => "P3",
        (_, Encoding::Binary) => "P6",
    };
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", img.width, img.height).into_bytes();
    let m = maxval as f64;
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * m).round() as u16;
    match encoding {
        Encoding::Ascii => {
            let row = img.width * img.channels;
            for line in img.values.chunks(row) {
                let text: Vec<String> = line.iter().map(|&v| quantize(v).to_string()).collect();
                writeln!(out, "{}", text.join(" ")).expect("write to vec");
            }
        }
        Encoding::Binary => {
            for &v in &img.values {
                let q = quantize(v);
                if maxval == 255 {
                    out.push(q as u8);
                } else {
                    out.extend_from_slice(&q.to_be_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn token(&mut self) -> Result<&str> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated netpbm header".into())),
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::Format("non-ASCII netpbm header".into()))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::Format(format!("bad {what} `{tok}` in netpbm header")))
    }
}

pub fn decode_netpbm(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let magic = r.token()?.to_string();
    let (channels, binary) = match magic.as_str() {
        "P2" => (1, false),
        "P5" => (1, true),
        "P3" => (3, false),
        "P6" => (3, true),
        other => return Err(Error::Format(format!("unsupported netpbm magic `{other}`"))),
    };
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval = r.number("maxval")?;
    if maxval != 255 && maxval != 65535 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("zero image extent".into()));
    }
    let n = width * height * channels;
    let m = maxval as f64;
    let values: Vec<f64> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = r.pos + 1;
        let bps = if maxval == 255 { 1 } else { 2 };
        let raster = bytes.get(start..).unwrap_or(&[]);
        if raster.len() < n * bps {
            return Err(Error::Format(format!(
                "truncated raster: need {} bytes, have {}",
                n * bps,
                raster.len()
            )));
        }
        if bps == 1 {
            raster[..n].iter().map(|&b| b as f64 / m).collect()
        } else {
            raster[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / m)
                .collect()
        }
    } else {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let s = r.number("sample").map_err(|e| match e {
                Error::Format(msg) if msg.starts_with("truncated") => {
                    Error::Format(format!("truncated raster: {} of {n} samples", v.len()))
                }
                e => e,
            })?;
            if s > maxval {
                return Err(Error::Format(format!("sample {s} exceeds maxval {maxval}")));
            }
            v.push(s as f64 / m);
        }
        v
    };
    ImageBuffer::new(height, width, channels, values)
}

pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    decode_netpbm(&std::fs::read(path)?)
}

/// Write binary PGM/PPM with maxval 255 (or 65535 when `sixteen_bit`).
pub fn write_image(path: &Path, img: &ImageBuffer, sixteen_bit: bool) -> Result<()> {
    let maxval = if sixteen_bit { 65535 } else { 255 };
    std::fs::write(path, encode_netpbm(img, maxval, Encoding::Binary)?)?;
    Ok(())
}

/// Add i.i.d. `N(0, sigma²)` to every sample, without clamping.
pub fn add_noise(img: &ImageBuffer, sigma: f64, rng: &mut Rng) -> Result<ImageBuffer> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut out = img.clone();
    if sigma > 0.0 {
        out.values.iter_mut().for_each(|v| *v += sigma * rng.normal());
    }
    Ok(out)
}

/// Per-pixel observation flags; all channels of a pixel share one flag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub observed: Vec<bool>,
}

impl Mask {
    pub fn full(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            observed: vec![true; height * width],
        }
    }

    pub fn count_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn fraction_observed(&self) -> f64 {
        self.count_observed() as f64 / self.observed.len() as f64
    }

    /// Channel-planar `channels × height × width` 0/1 weights.
    pub fn to_tensor(&self, channels: usize) -> Tensor {
        let plane: Vec<f64> = self.observed.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
        let data = plane.iter().copied().cycle().take(plane.len() * channels).collect();
        Tensor::new(vec![channels, self.height, self.width], data).expect("consistent extents")
    }

    pub fn as_image(&self) -> ImageBuffer {
        let values = self.observed.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
        ImageBuffer::new(self.height, self.width, 1, values).expect("consistent extents")
    }

    pub fn from_image(img: &ImageBuffer) -> Result<Self> {
        if img.channels != 1 {
            return Err(Error::invalid("masks are single-channel images"));
        }
        Ok(Mask {
            height: img.height,
            width: img.width,
            observed: img.values.iter().map(|&v| v >= 0.5).collect(),
        })
    }
}

/// Drop exactly `floor(fraction_dropped · n)` pixels chosen uniformly
/// without replacement.
pub fn random_mask(height: usize, width: usize, fraction_dropped: f64, rng: &mut Rng) -> Result<Mask> {
    if !(0.0..=1.0).contains(&fraction_dropped) {
        return Err(Error::invalid(format!(
            "dropped fraction must lie in [0, 1], got {fraction_dropped}"
        )));
    }
    let n = height * width;
    let drop = (fraction_dropped * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    // partial Fisher-Yates
    for i in 0..drop {
        let j = i + rng.below(n - i);
        order.swap(i, j);
    }
    let mut observed = vec![true; n];
    for &i in &order[..drop] {
        observed[i] = false;
    }
    Ok(Mask {
        height,
        width,
        observed,
    })
}

/// Mean squared difference over the observed pixels (all channels), or over
/// everything without a mask.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&Mask>) -> Result<f64> {
    a.check_same_shape(b)?;
    let c = a.channels;
    let mut sum = 0.0;
    let mut count = 0usize;
    match mask {
        None => {
            sum = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum();
            count = a.values.len();
        }
        Some(m) => {
            if (m.height, m.width) != (a.height, a.width) {
                return Err(Error::shape("mask does not match image extents"));
            }
            for (p, _) in m.observed.iter().enumerate().filter(|(_, &o)| o) {
                for ch in 0..c {
                    let d = a.values[p * c + ch] - b.values[p * c + ch];
                    sum += d * d;
                }
                count += c;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("mask observes no pixels"));
    }
    Ok(sum / count as f64)
}

/// `10 log10(1 / mse)` on the unit intensity scale; identical images give `+∞`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn mse_from_psnr(psnr: f64) -> f64 {
    10f64.powf(-psnr / 10.0)
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&Mask>) -> Result<f64> {
    mse(a, b, mask).map(psnr_from_mse)
}

/// A 1D signal with per-sample observation flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub positions: Vec<i64>,
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

impl Signal {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn observed_points(&self) -> (Vec<i64>, Vec<f64>) {
        self.positions
            .iter()
            .zip(&self.values)
            .zip(&self.observed)
            .filter(|(_, &o)| o)
            .map(|((&p, &v), _)| (p, v))
            .unzip()
    }
}

pub fn write_signal_csv(signal: &Signal) -> String {
    let mut out = String::from("position,value,observed\n");
    for ((p, v), o) in signal.positions.iter().zip(&signal.values).zip(&signal.observed) {
        out.push_str(&format!("{p},{v:.16e},{}\n", u8::from(*o)));
    }
    out
}

/// Parse `position,value[,observed]` rows. A header row is optional; a
/// missing third column means observed. Row numbers in errors are 1-based
/// file lines.
pub fn read_signal_csv(text: &str) -> Result<Signal> {
    let mut s = Signal {
        positions: Vec::new(),
        values: Vec::new(),
        observed: Vec::new(),
    };
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if s.is_empty() && width.is_none() && cells[0].parse::<f64>().is_err() {
            // header
            width = Some(cells.len());
            continue;
        }
        let w = *width.get_or_insert(cells.len());
        if cells.len() != w || !(2..=3).contains(&cells.len()) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {w} columns (2 or 3), got {}", cells.len()),
            });
        }
        let bad = |what: &str, cell: &str| Error::Parse {
            line: line_no,
            msg: format!("non-numeric {what} `{cell}`"),
        };
        let p: i64 = cells[0].parse().map_err(|_| bad("position", cells[0]))?;
        let v: f64 = cells[1].parse().map_err(|_| bad("value", cells[1]))?;
        let o = match cells.get(2) {
            None => true,
            Some(&"1") => true,
            Some(&"0") => false,
            Some(c) => return Err(bad("observed flag", c)),
        };
        s.positions.push(p);
        s.values.push(v);
        s.observed.push(o);
    }
    Ok(s)
}
