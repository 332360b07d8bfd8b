//! On-disk formats: PNG frames, manifests and config files.

mod config;
mod manifest;
mod png;

/// Manifest file name inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.tsv";

pub use self::config::{load_config, parse_config};
pub use self::manifest::{base_dir, valid_id, write_atomic, FrameRecord, Manifest, Status, HEADER as MANIFEST_HEADER};
pub use self::png::{
    decode_color_png, decode_depth_png, decode_label_png, encode_color_png, encode_depth_png, encode_label_png,
    load_color_png, load_depth_png, load_label_png, save_color_png, save_depth_png, save_label_png,
};
