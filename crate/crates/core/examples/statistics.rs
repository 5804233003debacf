//! Spearman with p-values, Bonferroni, rank-sum test and ICC.

use repalign::stats::{
    bonferroni, icc_two_way, spearman_test, wilcoxon_ranksum, PValueMethod,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = [0.1, 0.4, 0.35, 0.8, 0.9, 0.2, 0.55, 0.6];
    let y = [0.15, 0.3, 0.5, 0.7, 0.95, 0.1, 0.5, 0.65];
    for method in [
        PValueMethod::Exhaustive,
        PValueMethod::Permutation { n_perm: 10_000, seed: 1 },
        PValueMethod::TApprox,
    ] {
        let t = spearman_test(&x, &y, method)?;
        let b = bonferroni(t.p, 15, 0.05)?;
        println!("r_s {:.3}, p {:.4} ({}), significant at m=15: {}", t.r_s, t.p, t.method, b.significant);
    }

    let w = wilcoxon_ranksum(&[0.91, 0.88, 0.95, 0.9], &[0.7, 0.8, 0.65, 0.85, 0.75])?;
    println!("W = {}, U = {}, p = {:.4} ({:?})", w.w, w.u_statistic(), w.p_two_sided, w.method);

    let rows = vec![
        vec![9.0, 2.0, 5.0, 8.0],
        vec![6.0, 1.0, 3.0, 2.0],
        vec![8.0, 4.0, 6.0, 8.0],
        vec![7.0, 1.0, 2.0, 6.0],
        vec![10.0, 5.0, 6.0, 9.0],
        vec![6.0, 2.0, 4.0, 7.0],
    ];
    let icc = icc_two_way(&rows)?;
    println!("ICC(2,1) {:.3}, ICC(2,k) {:.3}", icc.icc_single, icc.icc_average);
    Ok(())
}
