//! Exact t-SNE on three clusters, scored with trustworthiness and drawn as SVG.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use repalign::viz::{cohort_scatter, trustworthiness, tsne, write_text, TsneParams};

fn main() -> repalign::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut groups = HashMap::new();
    for c in 0..3 {
        for i in 0..15 {
            data.push((0..8).map(|d| if d == c { 10.0 } else { 0.0 } + noise.sample(&mut rng)).collect::<Vec<f64>>());
            let label = format!("c{c}_{i}");
            groups.insert(label.clone(), format!("cluster {c}"));
            labels.push(label);
        }
    }
    let params = TsneParams {
        perplexity: 10.0,
        max_iter: 1000,
        seed: 3,
        ..TsneParams::default()
    };
    let layout = tsne(&labels, &data, &params)?;
    let coords: Vec<Vec<f64>> = layout.coords.iter().map(|c| c.to_vec()).collect();
    println!("KL {:.4}", layout.kl_divergence);
    println!("trustworthiness(k=5) {:.3}", trustworthiness(&data, &coords, 5)?);
    let out = std::env::temp_dir().join("repalign-example-tsne.svg");
    write_text(&out, &cohort_scatter(&layout, &groups)?)?;
    println!("wrote {}", out.display());
    Ok(())
}
