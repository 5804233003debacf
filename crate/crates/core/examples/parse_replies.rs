//! Classify free-text replies as strict, recovered or noncompliant.

use std::collections::HashSet;

use repalign::parse::{extract_description, extract_ranking, extract_rating};

fn main() {
    for reply in ["40", "I'd say about 85.", "95%", "70-80", "As an AI, I cannot rate this.", "150"] {
        let p = extract_rating(reply);
        println!("{reply:?} -> {:?} {:?} {}", p.compliance, p.rating, p.reason.unwrap_or_default());
    }

    let d = extract_description("A brown dog sitting on grass.");
    println!("description -> {:?} {:?}", d.compliance, d.description);

    let expected: HashSet<u64> = [11, 12, 13, 14].into_iter().collect();
    for reply in ["13, 11, 14, 12", "13 11 12", "13, 11, 99"] {
        let p = extract_ranking(reply, &expected);
        println!("{reply:?} -> {:?} {:?} missing {:?}", p.compliance, p.ranking, p.missing);
    }
}
