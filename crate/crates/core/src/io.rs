//! Field dump format: one UTF-8 JSON header line, then raw little-endian
//! f64 pairs (re, im) in row-major node order. Round-trips are bit-exact.

use crate::grid::{ComplexField, GridError, GridSpec};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DumpHeader {
    pub dimension: usize,
    #[serde(rename = "M")]
    pub points_per_axis: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
    pub h: f64,
    pub name: String,
}

pub fn write_field<W: Write>(w: &mut W, field: &ComplexField, name: &str) -> Result<(), DumpError> {
    let g = field.grid();
    let header = DumpHeader {
        dimension: g.dim(),
        points_per_axis: g.points_per_axis(),
        half_width: g.half_width(),
        h: g.spacing(),
        name: name.to_string(),
    };
    let line = serde_json::to_string(&header)
        .map_err(|e| DumpError::Header(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(field.values().len() * 16);
    for z in field.values() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_field<R: Read>(r: &mut R) -> Result<(ComplexField, String), DumpError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| DumpError::Header("missing newline after header".into()))?;
    let header: DumpHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| DumpError::Header(e.to_string()))?;
    let grid = GridSpec::new(header.dimension, header.half_width, header.points_per_axis)?;
    if (grid.spacing() - header.h).abs() > 1e-12 * (1.0 + header.h.abs()) {
        return Err(DumpError::Header(format!(
            "spacing {} inconsistent with M and L",
            header.h
        )));
    }
    let payload = &bytes[nl + 1..];
    let n = grid.num_nodes();
    if payload.len() != 16 * n {
        return Err(DumpError::Header(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            16 * n
        )));
    }
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        let re = f64::from_le_bytes(payload[16 * k..16 * k + 8].try_into().unwrap());
        let im = f64::from_le_bytes(payload[16 * k + 8..16 * k + 16].try_into().unwrap());
        values.push(Complex64::new(re, im));
    }
    // bypass the finiteness check so dumps round-trip bit-exactly even for
    // fields written with unusual payloads; construction validated above
    let mut field = ComplexField::zeros(grid);
    field.values_mut().copy_from_slice(&values);
    Ok((field, header.name))
}
