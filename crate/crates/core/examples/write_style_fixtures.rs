//! Regenerates `fixtures/styles/*.png` from the procedural style set.

use std::path::PathBuf;

use splatstyle_core::fixtures::{style_fixture, STYLE_NAMES};

fn main() -> splatstyle_core::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures/styles"));
    std::fs::create_dir_all(&dir).map_err(|e| splatstyle_core::Error::io(&dir, e))?;
    for (i, name) in STYLE_NAMES.iter().enumerate() {
        let path = dir.join(format!("{i:02}_{name}.png"));
        style_fixture(i, 128).save_png(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}
