//! Renders a small pre-training dataset for a given flag string and writes a
//! PPM contact sheet (one row per class) next to the dataset file.
//!
//! ```bash
//! cargo run --release --example render_dataset -- 11111111 /tmp/dr
//! ```

use adaptsim::scenegen::{render_dataset, GenSpec, SimParams};

fn main() -> adaptsim::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let params: SimParams = args.get(1).map_or("11111111", |s| s.as_str()).parse()?;
    let out = std::path::PathBuf::from(args.get(2).map_or("render_example", |s| s.as_str()));
    let spec = GenSpec {
        num_classes: 12,
        images_per_class: 10,
        image_size: 32,
        seed: 7,
        params,
    };
    let ds = render_dataset(&spec)?;
    ds.save(&out.with_extension("s2tds"))?;
    let sheet = out.with_extension("ppm");
    adaptsim::io::write_atomic(&sheet, &ds.contact_sheet_ppm(10))?;
    println!(
        "rendered {} images of {} classes with flags {}; contact sheet at {}",
        ds.len(),
        ds.num_classes(),
        spec.params,
        sheet.display()
    );
    Ok(())
}
