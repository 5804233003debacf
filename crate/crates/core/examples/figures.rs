//! Heatmap and rating histogram for a synthetic latent DSM.

use repalign::backend::clustered_latent;
use repalign::corpus::StimulusSet;
use repalign::viz::{heatmap_svg, rating_histogram, write_text};

fn main() -> repalign::Result<()> {
    let all = StimulusSet::builtin();
    let set = StimulusSet::new("first 20", all.items()[..20].to_vec())?;
    let dsm = clustered_latent(&set, 3.0, 11);
    let dir = std::env::temp_dir().join("repalign-example-figures");
    write_text(&dir.join("heatmap.svg"), &heatmap_svg(&dsm)?)?;

    let mut ratings = Vec::new();
    for i in 0..dsm.n() {
        for j in 0..i {
            ratings.push((100.0 * (1.0 - dsm.get(i, j).unwrap_or(0.5))).round());
        }
    }
    let h = rating_histogram(&ratings, 10)?;
    write_text(&dir.join("histogram.csv"), &h.to_csv())?;
    write_text(&dir.join("histogram.svg"), &h.to_svg("latent similarities"))?;
    print!("{}", h.to_csv());
    println!("wrote {}", dir.display());
    Ok(())
}
