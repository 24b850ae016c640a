//! Shared inputs for the benchmarks.

use splatstyle_core::fixtures::style_fixtures;
use splatstyle_core::scene::{make_synthetic_scene, SceneSpec, SyntheticKind};
use splatstyle_core::{SceneBundle, StyleSet};

/// Synthetic spheres scene with `n` Gaussians and two cameras at `res`.
pub fn spheres(n: usize, res: (u32, u32)) -> SceneBundle {
    let mut spec = SceneSpec::new(SyntheticKind::Spheres, n, 2, 1);
    spec.resolution = res;
    make_synthetic_scene(&spec).expect("synthetic scene")
}

/// The first `k` procedural style fixtures at `side` pixels.
pub fn styles(k: usize, side: usize) -> StyleSet {
    let (names, images) = style_fixtures(side);
    StyleSet::new(names[..k].to_vec(), images[..k].to_vec()).expect("style fixtures")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_build() {
        assert_eq!(spheres(100, (32, 24)).cloud.len(), 100);
        assert_eq!(styles(4, 16).len(), 4);
    }
}
