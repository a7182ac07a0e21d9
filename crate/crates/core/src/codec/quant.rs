//! Quality-scaled quantization with the standard JPEG tables.

use super::dct::Block;
use crate::error::{Error, Result};

#[rustfmt::skip]
pub const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
pub const CHROMA_TABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Percentage applied to the base table: `5000/q` below 50, `200 − 2q` above.
pub fn quality_scale(quality: u8) -> Result<u32> {
    match quality {
        1..=49 => Ok(5000 / quality as u32),
        50..=100 => Ok(200 - 2 * quality as u32),
        _ => Err(Error::Param(format!("quality must be in 1..=100, got {quality}"))),
    }
}

/// Base table scaled for `quality`, entries clamped to `1..=255`.
pub fn scaled_table(base: &[u16; 64], quality: u8) -> Result<[u16; 64]> {
    let s = quality_scale(quality)?;
    Ok(base.map(|b| ((b as u32 * s + 50) / 100).clamp(1, 255) as u16))
}

pub fn quantize(coeffs: &Block, table: &[u16; 64]) -> [i32; 64] {
    std::array::from_fn(|i| (coeffs[i] / table[i] as f64).round() as i32)
}

pub fn dequantize(levels: &[i32; 64], table: &[u16; 64]) -> Block {
    std::array::from_fn(|i| levels[i] as f64 * table[i] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quality_fifty_uses_base_table() {
        assert_eq!(quality_scale(50).unwrap(), 100);
        assert_eq!(scaled_table(&LUMA_TABLE, 50).unwrap(), LUMA_TABLE);
        assert_eq!(scaled_table(&LUMA_TABLE, 100).unwrap(), [1; 64]);
        assert!(quality_scale(0).is_err());
        assert!(quality_scale(101).is_err());
    }

    #[test]
    fn rounding_error_is_at_most_half_a_step() {
        let t = scaled_table(&LUMA_TABLE, 30).unwrap();
        let c: Block = std::array::from_fn(|i| (i as f64 * 13.7).sin() * 300.0);
        let back = dequantize(&quantize(&c, &t), &t);
        for i in 0..64 {
            assert!((back[i] - c[i]).abs() <= t[i] as f64 / 2.0 + 1e-9);
        }
        assert_eq!(quantize(&[0.0; 64], &t), [0; 64]);
    }
}
