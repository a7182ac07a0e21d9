//! Runs the prior-fusion branch on one scene and reports how much each
//! stage changes the features.

use hmjnd::hmpf::{embed_modality, fuse_saliency_depth, modulate_with_segmentation, HmpfParams};
use hmjnd::io::{synth_bundle, ImagePlane};
use hmjnd::nn::Init;
use hmjnd::tensor::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rms(g: &Graph, v: Var) -> f64 {
    let x = g.value(v);
    (x.iter().map(|a| a * a).sum::<f64>() / x.len() as f64).sqrt()
}

fn main() -> hmjnd::Result<()> {
    let b = synth_bundle(3, 32, 32)?;
    let mut store = ParamStore::new();
    let params = HmpfParams::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), 8, 2, Init::FanIn)?;

    let mut g = Graph::new();
    let input = |g: &mut Graph, p: &ImagePlane| -> hmjnd::Result<Var> {
        Ok(g.input(Tensor::new(vec![1, 1, p.height(), p.width()], p.channel(0))?))
    };
    let sa = input(&mut g, &b.saliency)?;
    let de = input(&mut g, &b.depth)?;
    let se = input(&mut g, &b.segmentation)?;

    let f_sa = embed_modality(&mut g, &store, sa, &params.embed_sa)?;
    let f_de = embed_modality(&mut g, &store, de, &params.embed_de)?;
    let f_se = embed_modality(&mut g, &store, se, &params.embed_se)?;
    let f_fuse = fuse_saliency_depth(&mut g, &store, f_sa, f_de, &params)?;
    let f_pr = modulate_with_segmentation(&mut g, &store, f_fuse, f_se, &params)?;

    for (name, v) in [
        ("F_sa", f_sa),
        ("F_de", f_de),
        ("F_se", f_se),
        ("F_fuse", f_fuse),
        ("F_pr", f_pr),
    ] {
        println!("{name:<7} shape {:?}  rms {:.4}", g.shape(v), rms(&g, v));
    }
    Ok(())
}
