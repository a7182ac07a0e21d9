//! Tabulates the residual filter over a few contexts and runs residual
//! mode on one scene.

use hmjnd::codec::{compress, filter_residual, CodecMode};
use hmjnd::eval::JndMap;
use hmjnd::io::synth_bundle;

fn main() -> hmjnd::Result<()> {
    let contexts = [(1.0, 4.0), (9.0, 4.0), (4.0, 0.0)];
    print!("     r");
    for (vl, vb) in contexts {
        print!("  vl={vl:<3} vb={vb:<3}");
    }
    println!();
    for r in [-12.0, -6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0, 12.0] {
        print!("{r:6.1}");
        for (vl, vb) in contexts {
            print!("  {:>14.3}", filter_residual(r, 3.0, vl, vb));
        }
        println!();
    }

    // A zero block variance hits the small-variance guard; the codec clips
    // such outputs to the 8-bit residual range.
    let b = synth_bundle(5, 48, 48)?;
    let map = JndMap::constant(48, 48, 0.02)?;
    let plain = compress(&b.rgb, &map, CodecMode::Plain, 50)?.stats;
    let res = compress(&b.rgb, &map, CodecMode::Residual, 50)?.stats;
    println!("\nplain     bpp {:.4}  psnr {:.2}", plain.bpp, plain.psnr);
    println!("residual  bpp {:.4}  psnr {:.2}", res.bpp, res.psnr);
    println!("branches  {:?}", res.counts);
    Ok(())
}
