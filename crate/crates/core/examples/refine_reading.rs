//! Picks a reading out of noisy detections using the meter's history.

use meterpipe::ocr::{BBox, TextDetection};
use meterpipe::refinement::{refine, MeterContext};

fn main() -> anyhow::Result<()> {
    let detections = vec![
        TextDetection::new("kWh", 0.99, BBox::new(120.0, 10.0, 30.0, 12.0)),
        TextDetection::new("SN 4410023", 0.95, BBox::new(5.0, 80.0, 90.0, 10.0)),
        TextDetection::new("01287.4", 0.81, BBox::new(10.0, 30.0, 100.0, 24.0)),
        TextDetection::new("01207", 0.64, BBox::new(10.0, 30.0, 100.0, 24.0)),
        TextDetection::new("230V", 0.97, BBox::new(5.0, 100.0, 30.0, 10.0)),
    ];
    for (last, max_delta) in [("01250", 100), ("01290", 100), ("01200", 5)] {
        let ctx = MeterContext::new(last, max_delta)?;
        let result = refine(&detections, &ctx);
        println!("last={last} max_delta={max_delta} -> {} fallback={}", result.reading, result.fallback);
        for c in &result.candidates {
            println!("    {:<10} delta={:<6} conf={:.2}", c.token, c.delta.map_or("-".into(), |d| d.to_string()), c.confidence);
        }
    }
    Ok(())
}
