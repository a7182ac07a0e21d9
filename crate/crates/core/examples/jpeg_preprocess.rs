//! Compares the plain block codec with JND-guided pixel preprocessing over
//! a small corpus.
//!
//! Usage: `jpeg_preprocess [jnd_value] [quality]`.

use hmjnd::codec::{compress, CodecMode};
use hmjnd::eval::JndMap;
use hmjnd::io::synth_corpus;

fn main() -> hmjnd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let vt: f64 = args.first().map_or(0.02, |s| s.parse().expect("jnd value"));
    let quality: u8 = args.get(1).map_or(50, |s| s.parse().expect("quality"));
    let corpus = synth_corpus(13, 10, 64, 64)?;
    let map = JndMap::constant(64, 64, vt)?;

    println!("scene  plain_bpp  pre_bpp  saving  pre_psnr  pre_ms_ssim");
    let mut total = 0.0;
    for (k, b) in corpus.iter().enumerate() {
        let plain = compress(&b.rgb, &map, CodecMode::Plain, quality)?.stats;
        let pre = compress(&b.rgb, &map, CodecMode::JpegPre, quality)?.stats;
        let saving = 100.0 * (plain.bpp - pre.bpp) / plain.bpp;
        total += saving;
        println!(
            "{k:5}  {:9.4}  {:7.4}  {saving:5.1}%  {:8.2}  {:.4}",
            plain.bpp, pre.bpp, pre.psnr, pre.ms_ssim
        );
    }
    println!("mean saving {:.2}%", total / corpus.len() as f64);
    Ok(())
}
