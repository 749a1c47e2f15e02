//! File formats, dataset manifests, model serialization and the seeded
//! synthetic parallel corpus.
//!
//! Three binary formats, all little-endian and platform-independent:
//! - AFM1: one acoustic/derived feature matrix (f32 payload, kind-tagged).
//! - TRJ1: one articulatory trajectory in millimetres (18 or 54 columns).
//! - A2AM: a serialized model, JSON metadata plus an f64 parameter blob.
//!
//! Manifests are UTF-8 JSON-lines, one utterance per line, with paths
//! stored relative to the manifest file. The synthetic corpus generator
//! emits a two-domain, multi-speaker parallel corpus whose bytes are a pure
//! function of its config.

mod formats;
mod manifest;
mod synth;
mod wav;

pub use formats::{
    atomic_write, load_model, read_a2am, read_afm, read_labels, read_trj, save_model,
    write_a2am, write_afm, write_labels, write_trj, A2amModel, A2AM_MAGIC, AFM1_MAGIC,
    FORMAT_VERSION, TRJ1_MAGIC,
};
pub use manifest::{Manifest, ManifestEntry};
pub use synth::{
    synth_acoustics_from_trajectory, synth_generate, synth_items, SynthConfig, SynthUtterance,
};
pub use wav::{read_wav, write_wav};
