//! Images, modality bundles and synthetic scenes.

mod bundle;
mod image;
mod synth;

pub use bundle::{
    load_bundle, save_bundle, LabelMap, Modality, ModalityBundle, DEPTH_FILE, GT_FILE, LABELS_FILE, MAX_CLASSES,
    RGB_FILE, SALIENCY_FILE, SEGMENTATION_FILE,
};
pub use image::{decode_pnm, encode_pnm, load_image, quantize, save_image, ImagePlane};
pub use synth::{
    corpus_scene_seed, synth_bundle, synth_corpus, synth_scene, SynthScene, MIN_SYNTH_SIZE, SYNTH_CLASSES,
};
