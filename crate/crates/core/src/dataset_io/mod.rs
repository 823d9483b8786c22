//! Audio and label input: WAV files, manifests and synthetic corpora.

mod manifest;
mod synth;
mod wav;

pub use manifest::{load_manifest, parse_manifest, Manifest, ManifestEntry, Split, MANIFEST_HEADER};
pub use synth::{synth_clip, synth_dataset, SynthSpec};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav, AudioClip};
