//! Generates one phantom, prints its class histogram and per-modality
//! contrast, then round-trips it through the volume file format.
//!
//! cargo run --release --example generate_phantom -- [seed] [out_dir]

use mmtsn::phantom::io::{read_labels, read_volume, write_labels, write_volume};
use mmtsn::phantom::{derive_regions, generate_phantom, Modality, Region};

fn main() -> mmtsn::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out_dir = args.next().map(std::path::PathBuf::from).unwrap_or_else(std::env::temp_dir);

    let (image, labels) = generate_phantom(seed, [32, 32, 32])?;
    let names = ["background", "necrotic", "edema", "enhancing"];
    for (class, name) in names.iter().enumerate() {
        println!("{name:<11} {:6} voxels", labels.count(class as u8));
    }

    let regions = derive_regions(&labels)?;
    for m in Modality::ALL {
        let channel = image.channel(m);
        let mean_in = |mask: &[bool]| {
            let (s, n) = mask
                .iter()
                .zip(channel)
                .filter(|(&on, &v)| on && v != 0.0)
                .fold((0.0, 0usize), |(s, n), (_, &v)| (s + v as f64, n + 1));
            s / n.max(1) as f64
        };
        let outside: Vec<bool> = regions.wt.iter().map(|&w| !w).collect();
        println!(
            "{m:?}: healthy {:7.2}  WT {:7.2}  TC {:7.2}  ET {:7.2}",
            mean_in(&outside),
            mean_in(regions.get(Region::WholeTumor)),
            mean_in(regions.get(Region::TumorCore)),
            mean_in(regions.get(Region::Enhancing)),
        );
    }

    let image_path = out_dir.join(format!("phantom_{seed}_image.vol"));
    let label_path = out_dir.join(format!("phantom_{seed}_label.vol"));
    write_volume(&image_path, &image)?;
    write_labels(&label_path, &labels)?;
    assert_eq!(read_volume(&image_path)?, image);
    assert_eq!(read_labels(&label_path)?, labels);
    println!("round trip ok: {}", image_path.display());
    Ok(())
}
