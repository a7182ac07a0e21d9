use crate::error::{Error, Result};

/// Index bookkeeping for (shifted) window partitioning of an `H×W` plane.
///
/// The plane is zero-padded on the bottom/right to a multiple of the window,
/// cyclically rolled by `(-shift, -shift)` and cut into `window×window`
/// tiles in raster order. Tokens inside a tile are also in raster order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowGeometry {
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub shift: usize,
    pub padded_h: usize,
    pub padded_w: usize,
    /// Source pixel `y * width + x` for every `(window, token)` slot, or
    /// `None` for padding.
    sources: Vec<Option<usize>>,
}

impl WindowGeometry {
    pub fn new(height: usize, width: usize, window: usize, shift: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Param("window must be positive".into()));
        }
        if shift >= window {
            return Err(Error::Param(format!(
                "shift {shift} must be smaller than window {window}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::shape("window partition of an empty plane"));
        }
        let padded_h = height.div_ceil(window) * window;
        let padded_w = width.div_ceil(window) * window;
        let wins_w = padded_w / window;
        let windows = (padded_h / window) * wins_w;
        let tokens = window * window;
        let mut sources = Vec::with_capacity(windows * tokens);
        for win in 0..windows {
            let (wy, wx) = (win / wins_w, win % wins_w);
            for t in 0..tokens {
                let (ty, tx) = (t / window, t % window);
                let py = (wy * window + ty + shift) % padded_h;
                let px = (wx * window + tx + shift) % padded_w;
                sources.push((py < height && px < width).then_some(py * width + px));
            }
        }
        Ok(WindowGeometry {
            height,
            width,
            window,
            shift,
            padded_h,
            padded_w,
            sources,
        })
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    pub fn windows(&self) -> usize {
        (self.padded_h / self.window) * (self.padded_w / self.window)
    }

    /// Source pixel of token `t` in window `win`.
    pub fn source(&self, win: usize, t: usize) -> Option<usize> {
        self.sources[win * self.tokens_per_window() + t]
    }

    /// Additive attention mask of shape `(windows, T, T)` that blocks pairs
    /// of tokens which were not spatial neighbours before the cyclic roll.
    /// `None` when `shift == 0`.
    pub fn shift_mask(&self) -> Option<Vec<f64>> {
        if self.shift == 0 {
            return None;
        }
        let region = |p: usize, extent: usize| -> usize {
            if p < extent - self.window {
                0
            } else if p < extent - self.shift {
                1
            } else {
                2
            }
        };
        let wins_w = self.padded_w / self.window;
        let t_count = self.tokens_per_window();
        let mut mask = vec![0.0; self.windows() * t_count * t_count];
        for win in 0..self.windows() {
            let (wy, wx) = (win / wins_w, win % wins_w);
            let labels: Vec<usize> = (0..t_count)
                .map(|t| {
                    let y = wy * self.window + t / self.window;
                    let x = wx * self.window + t % self.window;
                    region(y, self.padded_h) * 3 + region(x, self.padded_w)
                })
                .collect();
            let block = &mut mask[win * t_count * t_count..(win + 1) * t_count * t_count];
            for i in 0..t_count {
                for j in 0..t_count {
                    if labels[i] != labels[j] {
                        block[i * t_count + j] = f64::NEG_INFINITY;
                    }
                }
            }
        }
        Some(mask)
    }
}
