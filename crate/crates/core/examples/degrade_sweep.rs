//! Renders one seven-segment plate and writes every degradation level of the
//! study sweeps next to it.
//!
//!     cargo run --example degrade_sweep -- out/sweep

use meterpipe::bench::study_suites;
use meterpipe::imaging::{apply_spec, save_image};
use meterpipe::ocr::GlyphLayout;
use std::path::PathBuf;

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "sweep".into()));
    std::fs::create_dir_all(&out)?;
    let plate = GlyphLayout::default().render("04721", 215, 35, [0.9, 1.0, 0.85]);
    save_image(&plate, &out.join("original.png"))?;
    for suite in study_suites(7) {
        for spec in &suite.specs {
            let img = apply_spec(&plate, spec)?;
            let name = format!("{}_{}.png", suite.name, spec.level);
            save_image(&img, &out.join(&name))?;
            println!("{spec:<24} {:>4}x{:<4} {name}", img.width(), img.height());
        }
    }
    Ok(())
}
