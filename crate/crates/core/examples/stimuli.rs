//! The built-in roster: item counts, pair enumeration and category masks.

use repalign::corpus::{category_masks, enumerate_pairs, intersect_sets, PairMode, StimulusSet};

fn main() -> repalign::Result<()> {
    let all = StimulusSet::builtin();
    let carlson = all.with_images("carlson_image")?;
    let things = all.with_images("things_image")?;
    let both = intersect_sets(&carlson, &things)?;
    println!("{} items, {} with images in both sets", all.len(), both.len());

    for (name, set) in [("words", &all), ("images", &both)] {
        println!(
            "{name}: {} ordered pairs with diagonal, {} unordered",
            enumerate_pairs(set, PairMode::OrderedWithDiagonal).len(),
            enumerate_pairs(set, PairMode::UnorderedNoDiagonal).len()
        );
    }

    let (within, between) = category_masks(&all);
    println!("within-category pairs: {}, between: {}", within.count(), between.count());
    for item in all.items().iter().take(5) {
        println!("  {} ({})", item.id, item.category);
    }
    Ok(())
}
