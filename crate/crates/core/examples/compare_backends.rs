//! Compares the template matcher against a recorded backend over every sweep and
//! prints the report table and summary.

use meterpipe::bench::{compare, study_suites, synth_dataset, Dataset, ScoringMode, SynthOptions};
use meterpipe::ocr::{detect_text, BBox, DetectRequest, GlyphLayout, ReplayBackend, SevenSegBackend, TextDetection, TextDetector};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let manifest = synth_dataset(&SynthOptions::new(12, 5, 3), dir.path())?;
    let dataset = Dataset::load(&manifest)?;
    let sevenseg = SevenSegBackend::new(GlyphLayout::default());

    // A recording of the matcher's answers on the clean images, with every third
    // entry answered with a stray serial number.
    let mut recorded = ReplayBackend::default().with_name("recorded");
    for (i, item) in dataset.entries.iter().enumerate() {
        let req = DetectRequest { image: &item.image, encoded: Some(&item.bytes), source_digest: &item.digest };
        let dets = if i % 3 == 0 {
            vec![TextDetection::new("SN-55120", 0.9, BBox::new(0.0, 0.0, 10.0, 10.0))]
        } else {
            detect_text(&sevenseg, &req)?
        };
        recorded.insert(item.digest.clone(), dets);
    }

    let backends: [&dyn TextDetector; 2] = [&sevenseg, &recorded];
    let matrix = compare(&backends, &dataset, &study_suites(3), ScoringMode::Raw)?;
    print!("{}", matrix.csv());
    println!();
    print!("{}", matrix.summary());
    Ok(())
}
