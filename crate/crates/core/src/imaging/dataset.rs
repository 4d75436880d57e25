//! Dataset directories: `<root>/train/*.{png,pgm}` and
//! `<root>/test/*.{png,pgm}`.

use std::path::{Path, PathBuf};

use super::{load_image, save_image, ImageGray};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<(String, ImageGray)>,
    pub test: Vec<(String, ImageGray)>,
}

/// PNG and PGM files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", dir.display())));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn load_split(dir: &Path) -> Result<Vec<(String, ImageGray)>> {
    list_images(dir)?
        .into_iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            load_image(&p).map(|img| (name, img))
        })
        .collect()
}

/// Loads both splits. A missing `test/` directory yields an empty test
/// split; a missing or empty `train/` is an error.
pub fn load_dir(root: &Path) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset directory {} not found", root.display())));
    }
    let train = load_split(&root.join("train"))?;
    if train.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", root.join("train").display())));
    }
    let test_dir = root.join("test");
    let test = if test_dir.is_dir() { load_split(&test_dir)? } else { Vec::new() };
    Ok(Dataset { train, test })
}

/// Writes `train` and `test` images as 16-bit PNGs under `root`.
pub fn write_dataset(root: &Path, train: &[ImageGray], test: &[ImageGray]) -> Result<()> {
    for (split, imgs) in [("train", train), ("test", test)] {
        let dir = root.join(split);
        std::fs::create_dir_all(&dir)?;
        for (i, img) in imgs.iter().enumerate() {
            save_image(dir.join(format!("{split}_{i:04}.png")), img)?;
        }
    }
    Ok(())
}
