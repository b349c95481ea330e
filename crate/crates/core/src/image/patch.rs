use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{GrayImage, IMAGE_SIDE};

/// Patches per side.
pub const GRID: usize = 8;
pub const PATCH_SIDE: usize = IMAGE_SIDE / GRID;
pub const PATCH_LEN: usize = PATCH_SIDE * PATCH_SIDE;
pub const PATCHES: usize = GRID * GRID;
pub const KEPT_PATCHES: usize = 40;

/// 64 row-major 28×28 blocks; patch `i` sits at grid row `i / 8`, column `i % 8`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patches: Vec<[f64; PATCH_LEN]>,
}

pub fn patchify(img: &GrayImage) -> Result<PatchGrid> {
    if img.height != IMAGE_SIDE || img.width != IMAGE_SIDE || img.data.len() != IMAGE_SIDE * IMAGE_SIDE {
        return Err(Error::invalid(format!(
            "patchify needs a {IMAGE_SIDE}x{IMAGE_SIDE} image, got {}x{}",
            img.height, img.width
        )));
    }
    let mut patches = vec![[0.0; PATCH_LEN]; PATCHES];
    for r in 0..IMAGE_SIDE {
        let row = &img.data[r * IMAGE_SIDE..(r + 1) * IMAGE_SIDE];
        let (gr, pr) = (r / PATCH_SIDE, r % PATCH_SIDE);
        for gc in 0..GRID {
            patches[gr * GRID + gc][pr * PATCH_SIDE..(pr + 1) * PATCH_SIDE]
                .copy_from_slice(&row[gc * PATCH_SIDE..(gc + 1) * PATCH_SIDE]);
        }
    }
    Ok(PatchGrid { patches })
}

pub fn unpatchify(grid: &PatchGrid) -> Result<GrayImage> {
    if grid.patches.len() != PATCHES {
        return Err(Error::invalid(format!("expected {PATCHES} patches, got {}", grid.patches.len())));
    }
    let mut data = vec![0.0; IMAGE_SIDE * IMAGE_SIDE];
    for (i, p) in grid.patches.iter().enumerate() {
        let (gr, gc) = (i / GRID, i % GRID);
        for pr in 0..PATCH_SIDE {
            let r = gr * PATCH_SIDE + pr;
            data[r * IMAGE_SIDE + gc * PATCH_SIDE..r * IMAGE_SIDE + (gc + 1) * PATCH_SIDE]
                .copy_from_slice(&p[pr * PATCH_SIDE..(pr + 1) * PATCH_SIDE]);
        }
    }
    GrayImage::new(IMAGE_SIDE, IMAGE_SIDE, data)
}

/// The 40 patches that survive masking, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSelection {
    pub kept: Vec<usize>,
    pub seed: u64,
}

impl MaskSelection {
    pub fn masked(&self) -> Vec<usize> {
        (0..PATCHES).filter(|i| self.kept.binary_search(i).is_err()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let sorted = self.kept.windows(2).all(|w| w[0] < w[1]);
        if self.kept.len() != KEPT_PATCHES || !sorted || self.kept.iter().any(|&i| i >= PATCHES) {
            return Err(Error::invalid(format!(
                "mask must keep {KEPT_PATCHES} distinct sorted indices below {PATCHES}"
            )));
        }
        Ok(())
    }
}

/// Uniformly random 40-subset of the 64 patches, reproducible from `seed`.
pub fn select_mask(seed: u64) -> MaskSelection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = sample(&mut rng, PATCHES, KEPT_PATCHES).into_vec();
    kept.sort_unstable();
    MaskSelection { kept, seed }
}
