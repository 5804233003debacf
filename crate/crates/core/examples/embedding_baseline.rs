//! Cosine-distance DSM from a small word-vector file.

use repalign::baseline::{cosine_dsm, load_word_vectors};
use repalign::viz::write_text;

fn main() -> repalign::Result<()> {
    let dir = std::env::temp_dir().join("repalign-example-baseline");
    let path = dir.join("vectors.txt");
    let text = "dog 0.9 0.1 0.0\ncat 0.8 0.2 0.1\ncar 0.0 0.1 0.9\nice 0.1 0.9 0.2\ncream 0.2 0.8 0.1\n";
    write_text(&path, text)?;

    let wanted: Vec<String> = ["dog", "cat", "car", "ice_cream", "zebra"].iter().map(|s| s.to_string()).collect();
    let load = load_word_vectors(&path, &wanted)?;
    println!("missing: {:?}", load.missing);
    let present: Vec<String> = wanted.into_iter().filter(|w| !load.missing.contains(w)).collect();
    let c = cosine_dsm(&load.table, &present)?;
    println!("halved: {}", c.halved);
    let mut out = Vec::new();
    c.dsm.write_csv(&mut out)?;
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}
