use super::{BenchError, DatasetManifest, ManifestEntry};
use crate::imaging::save_image;
use crate::ocr::GlyphLayout;
use crate::refinement::MAX_REGISTER_LENGTH;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    pub count: usize,
    pub digits: usize,
    pub seed: u64,
    pub layout: GlyphLayout,
}

impl SynthOptions {
    pub fn new(count: usize, digits: usize, seed: u64) -> Self {
        Self { count, digits, seed, layout: GlyphLayout::default() }
    }
}

/// Renders `count` random readings as PNG plates under `out_dir` and writes
/// `manifest.json` next to them. Each entry's last reading sits 0 to 50 units
/// below its ground truth.
pub fn synth_dataset(opts: &SynthOptions, out_dir: &Path) -> Result<DatasetManifest, BenchError> {
    if opts.count == 0 {
        return Err(BenchError::InvalidArgument("count must be at least 1".into()));
    }
    if !(1..=MAX_REGISTER_LENGTH).contains(&opts.digits) {
        return Err(BenchError::InvalidArgument(format!("digits must be 1..=12, got {}", opts.digits)));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::with_capacity(opts.count);
    for i in 0..opts.count {
        let truth: String = (0..opts.digits).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect();
        let value: u64 = truth.parse().expect("digits");
        let last = value.saturating_sub(rng.gen_range(0..=50));
        let plate = rng.gen_range(190..=235u8);
        let ink = rng.gen_range(15..=60u8);
        let warm = rng.gen_range(0.80..0.95f32);
        let img = opts.layout.render(&truth, plate, ink, [warm, 1.0, 0.85]);
        let name = format!("meter_{i:04}.png");
        save_image(&img, &out_dir.join(&name))?;
        entries.push(ManifestEntry {
            id: format!("meter_{i:04}"),
            image_path: name.into(),
            ground_truth: truth,
            last_reading: Some(format!("{last:0width$}", width = opts.digits)),
        });
    }
    let manifest = DatasetManifest::new(entries, out_dir);
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
