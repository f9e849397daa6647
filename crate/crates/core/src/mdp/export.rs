//! Plain-text and image exports of per-cell maps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::GridMap;
use crate::error::{Error, Result};

/// One line per grid row, comma-separated, shortest round-trip float formatting.
pub fn to_csv(map: &GridMap) -> String {
    let shape = map.shape();
    let mut out = String::new();
    for row in map.data().chunks(shape.cols) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Binary 16-bit PGM, min-max scaled; a constant map encodes as all zeros.
pub fn to_pgm16(map: &GridMap) -> Vec<u8> {
    let shape = map.shape();
    let mut out = format!("P5\n{} {}\n65535\n", shape.cols, shape.rows).into_bytes();
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for &v in map.data() {
        let level = if span > 0.0 {
            ((v - lo) / span * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    out
}

pub fn write_csv(map: &GridMap, path: &Path) -> Result<()> {
    fs::write(path, to_csv(map)).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(map: &GridMap, path: &Path) -> Result<()> {
    fs::write(path, to_pgm16(map)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::GridShape;

    #[test]
    fn csv_is_row_major() {
        let shape = GridShape::new(2, 3).unwrap();
        let m = GridMap::from_vec(shape, vec![0.0, 1.5, -2.0, 3.0, 4.0, 0.25]).unwrap();
        assert_eq!(to_csv(&m), "0,1.5,-2\n3,4,0.25\n");
    }

    #[test]
    fn pgm_scales_to_full_range() {
        let shape = GridShape::new(1, 3).unwrap();
        let m = GridMap::from_vec(shape, vec![-1.0, 0.0, 1.0]).unwrap();
        let bytes = to_pgm16(&m);
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let px: Vec<u16> = bytes[header.len()..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![0, 32768, 65535]);
        let flat = to_pgm16(&GridMap::filled(shape, 2.0));
        assert!(flat[header.len()..].iter().all(|&b| b == 0));
    }
}
