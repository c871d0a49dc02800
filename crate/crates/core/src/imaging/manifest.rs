//! Dataset samples and the JSON-lines manifest that indexes them on disk.

use super::image::Image;
use super::ppm::{decode_ppm, encode_ppm};
use super::MIN_SIDE;
use crate::environment::Window;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Probe,
    Gallery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub identity: u32,
    pub camera: u8,
    pub split: Split,
    pub truth_window: Option<Window>,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub identity: u32,
    pub camera: u8,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_window: Option<Window>,
}

/// File name used for sample `index`.
pub fn sample_file_name(index: usize, s: &Sample) -> String {
    format!("{:05}_id{:04}_c{}.ppm", index, s.identity, s.camera)
}

/// Writes `images/*.ppm` and `manifest.jsonl` under `dir`.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images)?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.jsonl"))?);
    for (i, s) in samples.iter().enumerate() {
        let name = sample_file_name(i, s);
        std::fs::write(images.join(&name), encode_ppm(&s.image))?;
        let entry = ManifestEntry {
            path: format!("images/{name}"),
            identity: s.identity,
            camera: s.camera,
            split: s.split,
            truth_window: s.truth_window,
        };
        serde_json::to_writer(&mut manifest, &entry)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    Ok(())
}

/// Reads `manifest.jsonl` under `dir` and decodes every referenced image.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(dir.join("manifest.jsonl"))?;
    let mut samples = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| Error::Dataset(format!("manifest line {}: {e}", line_no + 1)))?;
        let image = decode_ppm(&std::fs::read(dir.join(&entry.path))?)?;
        if image.width() < MIN_SIDE || image.height() < MIN_SIDE {
            return Err(Error::Dataset(format!(
                "{}: images must be at least {MIN_SIDE}×{MIN_SIDE}",
                entry.path
            )));
        }
        if entry.camera > 1 {
            return Err(Error::Dataset(format!("{}: camera must be 0 or 1", entry.path)));
        }
        samples.push(Sample {
            image,
            identity: entry.identity,
            camera: entry.camera,
            split: entry.split,
            truth_window: entry.truth_window,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_line_shape() {
        let e = ManifestEntry {
            path: "images/a.ppm".into(),
            identity: 3,
            camera: 1,
            split: Split::Gallery,
            truth_window: Some(Window::new(0.0, 0.25, 1.0, 0.75).unwrap()),
        };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"path":"images/a.ppm","identity":3,"camera":1,"split":"gallery","truth_window":[0.0,0.25,1.0,0.75]}"#
        );
        let no_window = r#"{"path":"p","identity":0,"camera":0,"split":"train"}"#;
        assert_eq!(serde_json::from_str::<ManifestEntry>(no_window).unwrap().truth_window, None);
        let extra = r#"{"path":"p","identity":0,"camera":0,"split":"train","x":1}"#;
        assert!(serde_json::from_str::<ManifestEntry>(extra).is_err());
    }
}
