//! Builds a synthetic corpus and measures the template matcher on the clean
//! images and under a few degradations, in both scoring modes.

use meterpipe::bench::{evaluate, synth_dataset, Dataset, ScoringMode, SynthOptions};
use meterpipe::imaging::DegradationSpec;
use meterpipe::ocr::{GlyphLayout, SevenSegBackend};
use meterpipe::refinement::DEFAULT_MAX_DELTA;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let manifest = synth_dataset(&SynthOptions::new(30, 5, 42), dir.path())?;
    let dataset = Dataset::load(&manifest)?;
    let backend = SevenSegBackend::new(GlyphLayout::default());

    let specs = [
        None,
        Some(DegradationSpec::blur(11)),
        Some(DegradationSpec::scale(0.3)),
        Some(DegradationSpec::gamma(3.0)),
        Some(DegradationSpec::salt_pepper(0.05, 1)),
    ];
    println!("{:<22} {:>6} {:>8}", "variant", "raw", "refined");
    for spec in &specs {
        let raw = evaluate(&backend, &dataset, spec.as_ref(), ScoringMode::Raw)?;
        let refined = evaluate(&backend, &dataset, spec.as_ref(), ScoringMode::Refined { max_delta: DEFAULT_MAX_DELTA })?;
        let label = spec.map_or("original".to_string(), |s| s.to_string());
        println!("{label:<22} {:>6} {:>8}", raw.accuracy().to_string(), refined.accuracy().to_string());
    }
    Ok(())
}
