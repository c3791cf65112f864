//! Kernel files.
//!
//! The text format is a three-line header followed by one line per lag:
//!
//! ```text
//! dims 1
//! half_width 2
//! variance 1
//! -2 0
//! -1 0.3183098861837907
//! 0 1
//! ...
//! ```
//!
//! 2D kernels list two lag coordinates before the value. Values use the
//! shortest representation that round-trips, so read-after-write is exact.
//! Lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{StationaryKernel, TraceEntry};
use crate::error::{Error, Result};

pub fn write_kernel_text(k: &StationaryKernel) -> String {
    let mut out = String::new();
    writeln!(out, "dims {}", k.dims()).unwrap();
    writeln!(out, "half_width {}", k.half_width()).unwrap();
    writeln!(out, "variance {:?}", k.variance()).unwrap();
    for (lag, v) in k.lags().zip(k.values()) {
        match k.dims() {
            1 => writeln!(out, "{} {:?}", lag[0], v).unwrap(),
            _ => writeln!(out, "{} {} {:?}", lag[0], lag[1], v).unwrap(),
        }
    }
    out
}

pub fn read_kernel_text(text: &str) -> Result<StationaryKernel> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut header = |key: &str| -> Result<(usize, String)> {
        let (n, line) = lines.next().ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing `{key}` header"),
        })?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::Parse {
                line: n,
                msg: format!("expected `{key}`"),
            });
        }
        let value = parts.next().ok_or_else(|| Error::Parse {
            line: n,
            msg: format!("`{key}` has no value"),
        })?;
        Ok((n, value.to_string()))
    };
    let parse_usize = |(n, s): (usize, String)| {
        s.parse::<usize>().map_err(|e| Error::Parse {
            line: n,
            msg: e.to_string(),
        })
    };
    let dims = parse_usize(header("dims")?)?;
    let half_width = parse_usize(header("half_width")?)?;
    let (vline, vtext) = header("variance")?;
    let variance: f64 = vtext.parse().map_err(|_| Error::Parse {
        line: vline,
        msg: format!("bad variance `{vtext}`"),
    })?;
    if !(1..=2).contains(&dims) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("dims must be 1 or 2, got {dims}"),
        });
    }
    let side = 2 * half_width + 1;
    let expected = side.pow(dims as u32);
    let mut values = vec![f64::NAN; expected];
    let mut seen = vec![false; expected];
    let shell = StationaryKernel::from_raw(dims, half_width, vec![]);
    let mut count = 0;
    for (n, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != dims + 1 {
            return Err(Error::Parse {
                line: n,
                msg: format!("expected {} fields, got {}", dims + 1, fields.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            line: n,
            msg: format!("bad {what}"),
        };
        let mut lag = [0i64; 2];
        for (d, f) in fields[..dims].iter().enumerate() {
            lag[d] = f.parse().map_err(|_| bad("lag"))?;
        }
        let v: f64 = fields[dims].parse().map_err(|_| bad("value"))?;
        let idx = shell.index(lag).ok_or_else(|| Error::Parse {
            line: n,
            msg: format!("lag {:?} outside half width {half_width}", &lag[..dims]),
        })?;
        if seen[idx] {
            return Err(Error::Parse {
                line: n,
                msg: format!("duplicate lag {:?}", &lag[..dims]),
            });
        }
        seen[idx] = true;
        values[idx] = v;
        count += 1;
    }
    if count != expected {
        return Err(Error::Format(format!(
            "kernel lists {count} lags, grid needs {expected}"
        )));
    }
    let k = StationaryKernel::new(dims, half_width, values)?;
    if k.variance() != variance {
        return Err(Error::Format(format!(
            "header variance {variance} disagrees with K(0) = {}",
            k.variance()
        )));
    }
    Ok(k)
}

/// JSON form of a kernel with its optional derivation trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelFile {
    pub kernel: StationaryKernel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEntry>,
}

impl KernelFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("kernel serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: KernelFile = serde_json::from_str(text)?;
        f.kernel.check_shape()?;
        f.kernel.check()?;
        Ok(f)
    }

    /// Read either format, choosing JSON when the first non-blank byte is `{`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            KernelFile::from_json(&text)
        } else {
            Ok(KernelFile {
                kernel: read_kernel_text(&text)?,
                trace: Vec::new(),
            })
        }
    }
}
