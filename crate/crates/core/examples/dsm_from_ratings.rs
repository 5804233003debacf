//! Ordered ratings to a DSM, cohort averaging and display fill.

use repalign::dsm::{fill_missing, flatten, group_average, to_dsm, RatingMatrix};

fn main() -> repalign::Result<()> {
    let labels: Vec<String> = ["dog", "cat", "car"].iter().map(|s| s.to_string()).collect();

    let mut a = RatingMatrix::new(labels.clone());
    a.set(0, 1, 80.0)?;
    a.set(1, 0, 70.0)?;
    a.set(0, 2, 10.0)?;
    a.set(1, 1, 100.0)?;
    let mut b = RatingMatrix::new(labels.clone());
    b.set(0, 1, 90.0)?;
    b.set(2, 1, 20.0)?;

    let (da, db) = (to_dsm(&a), to_dsm(&b));
    println!("dog-cat: {:?} ({:?})", da.get(0, 1), da.provenance(0, 1));
    println!("dog-car: {:?} ({:?})", da.get(0, 2), da.provenance(0, 2));
    println!("cat-car missing in first: {:?}", da.get(1, 2));

    let group = group_average(&[da, db])?;
    println!("group dog-cat {:?} from {} participants", group.dsm.get(0, 1), group.count(0, 1));
    println!("flattened lower triangle: {:?}", flatten(&group.dsm, None).values);

    let shown = fill_missing(&group.dsm, 0.5)?;
    let mut out = Vec::new();
    shown.write_csv(&mut out)?;
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}
