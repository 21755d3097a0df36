//! Plain file formats: 16-bit binary PGM, CSV tables and the versioned
//! text checkpoint shared by the CNN and the RBM.
//!
//! Checkpoint layout:
//!
//! ```text
//! scatternet-checkpoint v1
//! [layer 0] type=input shape=0 dims=1,16,16
//! [layer 1] type=conv shape=4,1,3,3 bias=4 stride=1
//! 1.2345678901234567e-1
//! ...
//! ```
//!
//! Each section header is followed by exactly `product(shape)` values (plus
//! `bias=n` more when that attribute is present), one per line, written with
//! 17 significant digits so they read back bit-exact.

use std::fmt::Write as _;
use std::io::{self, Write};

use num_complex::Complex64;

use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "scatternet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes a binary 16-bit PGM (P5, big-endian samples).
///
/// Values are scaled linearly so the largest maps to 65535; an all-zero image
/// stays black.
pub fn write_pgm16<W: Write>(mut w: W, width: usize, height: usize, values: &[f64]) -> io::Result<()> {
    if values.len() != width * height {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{} values for a {width}x{height} image", values.len()),
        ));
    }
    let max = values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    write!(w, "P5\n{width} {height}\n65535\n")?;
    let mut buf = Vec::with_capacity(values.len() * 2);
    for &v in values {
        let level = if max > 0.0 && v.is_finite() {
            (v.max(0.0) / max * 65535.0).round() as u16
        } else {
            0
        };
        buf.extend_from_slice(&level.to_be_bytes());
    }
    w.write_all(&buf)
}

/// Parses a P5 16-bit PGM; returns `(width, height, levels)`.
pub fn read_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse { line: 1, msg: "truncated PGM header".into() });
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(Error::Parse { line: 1, msg: "expected a 16-bit P5 image".into() });
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| Error::Parse { line: 2, msg: e.to_string() })
    };
    let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != width * height * 2 {
        return Err(Error::Parse { line: 3, msg: "pixel data length mismatch".into() });
    }
    let levels = data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((width, height, levels))
}

/// CSV with an `index,re,im` header.
pub fn write_complex_csv<W: Write>(mut w: W, values: &[Complex64]) -> io::Result<()> {
    writeln!(w, "index,re,im")?;
    for (i, z) in values.iter().enumerate() {
        writeln!(w, "{i},{},{}", z.re, z.im)?;
    }
    Ok(())
}

/// Generic CSV writer: header plus rows of numbers.
pub fn write_csv<W: Write>(mut w: W, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> io::Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// One `[layer N]` block of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub kind: String,
    pub shape: Vec<usize>,
    /// Extra `key=value` attributes after `shape`, in order.
    pub attrs: Vec<(String, String)>,
    pub values: Vec<f64>,
}

impl Section {
    pub fn new(kind: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self {
            kind: kind.into(),
            shape,
            attrs: Vec::new(),
            values,
        }
    }

    pub fn with_attr(mut self, key: &str, value: impl ToString) -> Self {
        self.attrs.push((key.to_string(), value.to_string()));
        self
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn format_checkpoint(sections: &[Section]) -> String {
    let mut out = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n");
    for (n, s) in sections.iter().enumerate() {
        let shape: Vec<String> = s.shape.iter().map(|d| d.to_string()).collect();
        let _ = write!(out, "[layer {n}] type={} shape={}", s.kind, shape.join(","));
        for (k, v) in &s.attrs {
            let _ = write!(out, " {k}={v}");
        }
        out.push('\n');
        for v in &s.values {
            let _ = writeln!(out, "{v:.16e}");
        }
    }
    out
}

pub fn parse_checkpoint(text: &str) -> Result<Vec<Section>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let bad = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };

    let (_, magic) = lines.next().ok_or_else(|| bad(1, "empty checkpoint"))?;
    if magic != format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}") {
        return Err(bad(1, "unrecognised checkpoint header or version"));
    }

    let mut sections = Vec::new();
    let mut current: Option<Section> = None;
    for (line, text) in lines {
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix("[layer ") {
            if let Some(s) = current.take() {
                sections.push(s);
            }
            let (num, attrs) = rest.split_once(']').ok_or_else(|| bad(line, "unterminated section header"))?;
            if num.trim().parse::<usize>().ok() != Some(sections.len()) {
                return Err(bad(line, "layer numbers must be consecutive from 0"));
            }
            let mut section = Section::new("", Vec::new(), Vec::new());
            for pair in attrs.split_whitespace() {
                let (k, v) = pair.split_once('=').ok_or_else(|| bad(line, "expected key=value"))?;
                match k {
                    "type" => section.kind = v.to_string(),
                    "shape" => {
                        section.shape = v
                            .split(',')
                            .map(|d| d.parse::<usize>().map_err(|e| bad(line, &e.to_string())))
                            .collect::<Result<_>>()?;
                    }
                    _ => section.attrs.push((k.to_string(), v.to_string())),
                }
            }
            if section.kind.is_empty() || section.shape.is_empty() {
                return Err(bad(line, "section needs type= and shape="));
            }
            current = Some(section);
        } else {
            let section = current.as_mut().ok_or_else(|| bad(line, "value outside a section"))?;
            let v: f64 = text.parse().map_err(|_| bad(line, "not a decimal number"))?;
            section.values.push(v);
        }
    }
    if let Some(s) = current.take() {
        sections.push(s);
    }
    for (n, s) in sections.iter().enumerate() {
        let extra = match s.attr("bias") {
            Some(v) => v.parse::<usize>().map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?,
            None => 0,
        };
        let want = s.shape.iter().product::<usize>() + extra;
        if s.values.len() != want {
            return Err(Error::Parse {
                line: 0,
                msg: format!("layer {n}: {} values for shape {:?}", s.values.len(), s.shape),
            });
        }
    }
    Ok(sections)
}
