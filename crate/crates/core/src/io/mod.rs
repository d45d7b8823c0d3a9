//! File formats: WAV audio, JSONL manifests, `ENV1` envelopes, `F32M`
//! embeddings, the loss log and the TOML run configuration.

mod config;
mod formats;
mod wav;

pub use config::{RunConfig, SynthConfig};
pub use formats::{
    decode_embeddings, decode_envelope, encode_embeddings, encode_envelope, parse_manifest, read_embeddings,
    read_loss_log, read_manifest, write_manifest, LossLog, EMBEDDING_MAGIC, ENVELOPE_MAGIC,
};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav, WavFormat};
