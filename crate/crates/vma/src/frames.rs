//! Pre-extracted frame directories: `frame_000000.jpg`, `frame_000001.png`, ...
//! sampled at 1 fps.

use std::io;
use std::path::Path;

use vma_core::backend::MediaRef;
use vma_core::digest::sha256_hex;

fn frame_number(name: &str) -> Option<(u64, &'static str)> {
    let (stem, ext) = name.rsplit_once('.')?;
    let mime = match ext.to_ascii_lowercase().as_str() {
        "jpg" | "jpeg" => "image/jpeg",
        "png" => "image/png",
        _ => return None,
    };
    let digits = stem.strip_prefix("frame_")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((digits.parse().ok()?, mime))
}

/// Frames of one video in index order, each identified by its content digest.
pub fn list_frames(dir: &Path) -> io::Result<Vec<MediaRef>> {
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some((n, mime)) = name.to_str().and_then(frame_number) else {
            continue;
        };
        let path = entry.path();
        let digest = sha256_hex(&std::fs::read(&path)?);
        frames.push((
            n,
            MediaRef {
                uri: path.display().to_string(),
                digest,
                mime: mime.to_string(),
            },
        ));
    }
    frames.sort_by_key(|(n, _)| *n);
    Ok(frames.into_iter().map(|(_, m)| m).collect())
}
