//! Zigzag run-length symbols and their order-0 entropy.

use std::collections::BTreeMap;
use std::sync::OnceLock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    /// `run` zeros followed by a nonzero `level`.
    Run { run: u8, level: i32 },
    /// Remaining coefficients of the block are zero.
    Eob,
    /// DPCM difference of a block's intra predictor.
    Predictor(i32),
}

/// Raster index of each zigzag position.
pub fn zigzag() -> &'static [usize; 64] {
    static ORDER: OnceLock<[usize; 64]> = OnceLock::new();
    ORDER.get_or_init(|| {
        let mut order = [0; 64];
        let mut k = 0;
        for s in 0..15 {
            let cells: Vec<(usize, usize)> = (0..8).filter(|&i| s >= i && s - i < 8).map(|i| (i, s - i)).collect();
            // even diagonals run bottom-left to top-right
            let iter: Box<dyn Iterator<Item = &(usize, usize)>> = if s % 2 == 0 {
                Box::new(cells.iter().rev())
            } else {
                Box::new(cells.iter())
            };
            for &(r, c) in iter {
                order[k] = r * 8 + c;
                k += 1;
            }
        }
        order
    })
}

/// Appends the zigzag run-length symbols of one block of levels.
pub fn encode_block(levels: &[i32; 64], out: &mut Vec<Symbol>) {
    let mut run = 0u8;
    for &idx in zigzag() {
        let l = levels[idx];
        if l == 0 {
            run += 1;
        } else {
            out.push(Symbol::Run { run, level: l });
            run = 0;
        }
    }
    out.push(Symbol::Eob);
}

/// Order-0 Shannon entropy of the stream, in bits per symbol. Terms are
/// summed in symbol order so the result is reproducible to the bit.
pub fn entropy_bits(symbols: &[Symbol]) -> f64 {
    if symbols.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<Symbol, usize> = BTreeMap::new();
    for s in symbols {
        *counts.entry(*s).or_default() += 1;
    }
    let n = symbols.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Entropy times symbol count over pixel count.
pub fn bpp_estimate(symbols: &[Symbol], pixels: usize) -> f64 {
    entropy_bits(symbols) * symbols.len() as f64 / pixels as f64
}
