//! Shows the window layout used by the alignment blocks and which token
//! pairs the shifted-window mask blocks.
//!
//! Usage: `window_attention [height] [width] [window]`.

use hmjnd::tensor::WindowGeometry;

fn main() -> hmjnd::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|s| s.parse().expect("integer argument"))
        .collect();
    let (h, w, win) = (
        *args.first().unwrap_or(&6),
        *args.get(1).unwrap_or(&6),
        *args.get(2).unwrap_or(&4),
    );

    for shift in [0, win / 2] {
        let geom = WindowGeometry::new(h, w, win, shift)?;
        println!(
            "shift {shift}: {} windows of {} tokens",
            geom.windows(),
            geom.tokens_per_window()
        );
        // Window id of every pixel, after the roll.
        let mut owner = vec![usize::MAX; h * w];
        for wi in 0..geom.windows() {
            for t in 0..geom.tokens_per_window() {
                if let Some(src) = geom.source(wi, t) {
                    owner[src] = wi;
                }
            }
        }
        for row in owner.chunks(w) {
            println!(
                "  {}",
                row.iter().map(|o| format!("{o:2}")).collect::<Vec<_>>().join(" ")
            );
        }
        if let Some(mask) = geom.shift_mask() {
            let t = geom.tokens_per_window();
            let blocked = mask.iter().filter(|m| m.is_infinite()).count();
            println!("  mask blocks {blocked} of {} pairs", mask.len());
            let per_window: Vec<usize> = mask
                .chunks(t * t)
                .map(|m| m.iter().filter(|x| x.is_infinite()).count())
                .collect();
            println!("  blocked pairs per window {per_window:?}");
        }
    }
    Ok(())
}
