//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use repalign::cohort::{build_cohort, Honorific, DEFAULT_HONORIFICS, DEFAULT_SURNAMES};
use repalign::corpus::{enumerate_pairs, intersect_sets, pair_count, PairMode, StimulusSet};
use repalign::dsm::{paired_vectors, Dsm, Provenance};
use repalign::pipeline::{
    cmd_analyze, cmd_baseline, cmd_ingest_human, cmd_report, cmd_run, load_system, AnalyzeOptions, BaselineOptions,
    IngestOptions, LatentSource, SystemInput, SystemSource,
};
use repalign::stats::{
    cohort_icc, icc_two_way, inter_subject, median, spearman, wilcoxon_ranksum_with, RankTestMethod,
};
use repalign::backend::random_latent;
use repalign::viz::{conditional_affinities, joint_affinities, trustworthiness, tsne, tsne_objective, TsneParams};

type Check = fn() -> String;

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let criteria: [(&str, Check, Option<Duration>); 10] = [
        ("pair and cohort counts", combinatorics, Some(Duration::from_secs(1))),
        ("spearman against naive ranks", spearman_oracle, None),
        ("exact rank-sum against enumeration", wilcoxon_oracle, None),
        ("ICC against ANOVA mean squares", icc_oracle, None),
        ("synthetic cohort recovers latent DSM", synthetic_recovery, Some(Duration::from_secs(30))),
        ("consistent cohort beats variable cohort", variability_contrast, Some(Duration::from_secs(60))),
        ("parser corpus", parser_corpus, None),
        ("t-SNE gradient, quality, tolerance, determinism", tsne_checks, Some(Duration::from_secs(60))),
        ("six-system analysis report", report_shape, None),
        ("identical runs are byte-identical", determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let took = start.elapsed();
        let result = match outcome {
            Ok(detail) => match limit {
                Some(l) if took > *l => Err(format!("took {took:.2?}, limit {l:?} ({detail})")),
                _ => Ok(detail),
            },
            Err(payload) => Err(payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match result {
            Ok(detail) => println!("PASS criterion {}: {name} [{took:.2?}] {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name} [{took:.2?}] {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn combinatorics() -> String {
    let all = StimulusSet::builtin();
    assert_eq!(all.len(), 67);
    assert_eq!(enumerate_pairs(&all, PairMode::OrderedWithDiagonal).len(), 4489);
    assert_eq!(enumerate_pairs(&all, PairMode::UnorderedNoDiagonal).len(), 2211);
    let things = all.with_images("things_image").unwrap();
    let carlson = all.with_images("carlson_image").unwrap();
    let both = intersect_sets(&carlson, &things).unwrap();
    assert_eq!(things.len(), 55);
    assert_eq!(enumerate_pairs(&things, PairMode::OrderedWithDiagonal).len(), 3025);
    assert_eq!(pair_count(55, PairMode::OrderedWithDiagonal), 3025);
    let surnames: Vec<String> = DEFAULT_SURNAMES.iter().map(|s| s.to_string()).collect();
    let full = build_cohort(&surnames, &DEFAULT_HONORIFICS, None, 0).unwrap();
    assert_eq!(full.len(), 24);
    let one_title = build_cohort(&surnames, &[Honorific::Dr], None, 0).unwrap();
    assert_eq!(one_title.len(), 8);
    format!("67 items, {} imaged in both sets, cohorts 24 and 8", both.len())
}

fn spearman_oracle() -> String {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 200 {
        let n = r.random_range(3..=50);
        let x = tied_vector(&mut r, n);
        let y = tied_vector(&mut r, n);
        let want = naive_spearman(&x, &y);
        if !want.is_finite() {
            assert!(spearman(&x, &y).is_err(), "constant input must be rejected");
            continue;
        }
        worst = worst.max((spearman(&x, &y).unwrap() - want).abs());
        checked += 1;
    }
    assert!(worst <= 1e-12, "max deviation {worst:e}");
    for n in [3, 10, 50] {
        let x = tied_vector(&mut r, n);
        if naive_ranks(&x).iter().all(|&v| v == naive_ranks(&x)[0]) {
            continue;
        }
        let up: Vec<f64> = x.iter().map(|v| (0.3 * v).exp() + v.powi(3)).collect();
        let down: Vec<f64> = x.iter().map(|v| -v.powi(3) - 5.0 * v).collect();
        assert_eq!(spearman(&x, &up).unwrap(), 1.0);
        assert_eq!(spearman(&x, &down).unwrap(), -1.0);
    }
    format!("200 pairs, max deviation {worst:.1e}")
}

fn wilcoxon_oracle() -> String {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    let mut sizes = 0;
    for n1 in 1..10 {
        for n2 in 1..=(10 - n1) {
            sizes += 1;
            for _ in 0..100 {
                let a = tied_vector(&mut r, n1);
                let b = tied_vector(&mut r, n2);
                let got = wilcoxon_ranksum_with(&a, &b, RankTestMethod::Exact).unwrap().p_two_sided;
                worst = worst.max((got - enumerated_ranksum_p(&a, &b)).abs());
            }
        }
    }
    assert!(worst <= 1e-12, "exact vs enumeration {worst:e}");
    let mut gap = 0.0f64;
    for _ in 0..100 {
        let a: Vec<f64> = (0..10).map(|_| r.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..10).map(|_| r.random_range(0.0..1.0) + 0.3).collect();
        let exact = wilcoxon_ranksum_with(&a, &b, RankTestMethod::Exact).unwrap().p_two_sided;
        let approx = wilcoxon_ranksum_with(&a, &b, RankTestMethod::NormalApprox).unwrap().p_two_sided;
        gap = gap.max((exact - approx).abs());
    }
    assert!(gap < 0.02, "approx vs exact at (10,10): {gap}");
    format!("{sizes} size pairs x 100, max deviation {worst:.1e}; approx gap {gap:.4}")
}

fn icc_oracle() -> String {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(3..=10);
        let k = r.random_range(2..=6);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| r.random_range(0.0..100.0)).collect())
            .collect();
        let (single, average) = definitional_icc(&rows);
        let got = icc_two_way(&rows).unwrap();
        worst = worst.max((got.icc_single - single).abs()).max((got.icc_average - average).abs());

        let (shift, scale) = (r.random_range(-50.0..50.0), r.random_range(0.1..10.0));
        let moved: Vec<Vec<f64>> = rows.iter().map(|row| row.iter().map(|v| shift + scale * v).collect()).collect();
        let m = icc_two_way(&moved).unwrap();
        assert!((m.icc_single - got.icc_single).abs() <= 1e-9, "location/scale changed ICC(2,1)");
        assert!((m.icc_average - got.icc_average).abs() <= 1e-9, "location/scale changed ICC(2,k)");

        let same: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 * 3.5 + 1.0; k]).collect();
        let p = icc_two_way(&same).unwrap();
        assert!((p.icc_single - 1.0).abs() <= 1e-12, "perfect agreement gave {}", p.icc_single);
    }
    assert!(worst <= 1e-9, "max deviation {worst:e}");
    format!("50 matrices, max deviation {worst:.1e}")
}

fn group_vs_latent(run_dir: &Path, latent: &Dsm) -> f64 {
    let group = Dsm::load_csv(&run_dir.join("temp-1/group.csv")).unwrap();
    let latent = latent.restrict(group.labels()).unwrap();
    let (x, y) = paired_vectors(&group, &latent, None).unwrap();
    assert_eq!(x.len(), 190, "group DSM is missing pairs");
    spearman(&x, &y).unwrap()
}

fn synthetic_recovery() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let seed = 5;
    let items = first_items(20);
    let latent = random_latent(&items, 5, latent_seed(seed));
    let mut r_s = Vec::new();
    for noise in [0.0, 5.0, 15.0, 30.0] {
        let out = tmp.path().join(format!("noise-{noise}"));
        let cfg = word_config(
            &out,
            items.clone(),
            named(&DEFAULT_SURNAMES, &DEFAULT_HONORIFICS),
            settings(LatentSource::Random { dims: 5 }, 5.0, noise),
            seed,
        );
        let s = cmd_run(&cfg).unwrap();
        assert!(s.complete);
        assert_eq!(s.manifest.runs[0].participants.len(), 24);
        r_s.push(group_vs_latent(&out, &latent));
    }
    assert!(r_s[0] >= 0.999, "noise 0 gave r_s = {}", r_s[0]);
    assert!(r_s[1] >= r_s[2] && r_s[2] >= r_s[3], "not non-increasing: {r_s:?}");
    format!("r_s at noise 0/5/15/30: {:.4} {:.4} {:.4} {:.4}", r_s[0], r_s[1], r_s[2], r_s[3])
}

struct CohortStats {
    icc: f64,
    median_pairwise: f64,
}

fn cohort_stats(dir: &Path, name: &str) -> CohortStats {
    let system = load_system(&SystemInput::new(name, SystemSource::Run(dir.to_path_buf())))
        .unwrap()
        .remove(0);
    let names: Vec<String> = system.members.iter().map(|(k, _)| k.clone()).collect();
    let dsms: Vec<Dsm> = system.members.iter().map(|(_, d)| d.clone()).collect();
    assert_eq!(dsms.len(), 24);
    let icc = cohort_icc(&dsms).unwrap().icc_single;
    let inter = inter_subject(&names, &dsms).unwrap();
    CohortStats {
        icc,
        median_pairwise: median(&inter.pairwise_values()).unwrap(),
    }
}

fn variability_contrast() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let items = first_items(20);
    let mut stats = Vec::new();
    for (name, offset, noise) in [("llm", 1.0, 2.0), ("human", 10.0, 12.0)] {
        let out = tmp.path().join(name);
        let cfg = word_config(
            &out,
            items.clone(),
            named(&DEFAULT_SURNAMES, &DEFAULT_HONORIFICS),
            settings(LatentSource::Random { dims: 5 }, offset, noise),
            6,
        );
        assert!(cmd_run(&cfg).unwrap().complete);
        stats.push(cohort_stats(&out, name));
    }
    let (llm, human) = (&stats[0], &stats[1]);
    assert!(llm.icc > human.icc, "ICC {} vs {}", llm.icc, human.icc);
    assert!(
        llm.median_pairwise > human.median_pairwise,
        "median r_s {} vs {}",
        llm.median_pairwise,
        human.median_pairwise
    );
    format!(
        "ICC {:.3} vs {:.3}; median pairwise r_s {:.3} vs {:.3}",
        llm.icc, human.icc, llm.median_pairwise, human.median_pairwise
    )
}

fn parser_corpus() -> String {
    let text = std::fs::read_to_string(crate_dir().join("fixtures/replies.jsonl")).unwrap();
    for id in [
        "word-trial-zebra-house",
        "word-trial-path-path",
        "word-trial-garlic-radish",
        "ranking-lawyer-full",
        "ranking-dog-30-of-31",
    ] {
        assert!(text.contains(&format!("\"id\": \"{id}\"")), "fixture {id} missing");
    }
    let (total, failures) = check_reply_corpus();
    assert!(total >= 50, "only {total} cases");
    assert!(failures.is_empty(), "{} wrong: {}", failures.len(), failures.join(" | "));
    format!("{total}/{total} correct")
}

fn tsne_checks() -> String {
    // gradient against central differences
    let mut r = rng(8);
    let data: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let p = joint_affinities(&data, 2.0);
    let y: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
    let (_, grad) = tsne_objective(&p, &y, 6, 1.0);
    let h = 1e-5;
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..12 {
        let mut plus = y.clone();
        let mut minus = y.clone();
        plus[k] += h;
        minus[k] -= h;
        let fd = (tsne_objective(&p, &plus, 6, 1.0).0 - tsne_objective(&p, &minus, 6, 1.0).0) / (2.0 * h);
        num += (fd - grad[k]).powi(2);
        den += grad[k].powi(2);
    }
    let rel = (num / den).sqrt();
    assert!(rel < 1e-4, "gradient relative error {rel:e}");

    // three clusters
    let (points, truth) = blobs(3, 20, 10, 9);
    let labels: Vec<String> = (0..60).map(|i| format!("p{i}")).collect();
    let params = TsneParams {
        seed: 4,
        ..TsneParams::default()
    };
    let layout = tsne(&labels, &points, &params).unwrap();
    let coords: Vec<Vec<f64>> = layout.coords.iter().map(|c| c.to_vec()).collect();
    let trust = trustworthiness(&points, &coords, 10).unwrap();
    assert!(trust >= 0.95, "trustworthiness {trust}");
    let mut centroids = vec![[0.0f64; 2]; 3];
    for (c, &t) in coords.iter().zip(&truth) {
        centroids[t][0] += c[0] / 20.0;
        centroids[t][1] += c[1] / 20.0;
    }
    let correct = coords
        .iter()
        .zip(&truth)
        .filter(|(c, &t)| {
            let dist = |m: &[f64; 2]| (c[0] - m[0]).powi(2) + (c[1] - m[1]).powi(2);
            (0..3).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))) == Some(t)
        })
        .count();
    let purity = correct as f64 / 60.0;
    assert!(purity >= 0.95, "purity {purity}");

    // perplexity search tolerance
    let mut sq = vec![0.0; 3600];
    for i in 0..60 {
        for j in 0..60 {
            sq[i * 60 + j] = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    let (_, entropies) = conditional_affinities(&sq, 60, 30.0);
    let worst = entropies.iter().map(|h| (h - 30f64.ln()).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-5, "entropy off by {worst:e}");

    // determinism
    let again = tsne(&labels, &points, &params).unwrap();
    let same = layout
        .coords
        .iter()
        .zip(&again.coords)
        .all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits());
    assert!(same, "layouts differ for a fixed seed");
    format!("grad rel err {rel:.1e}, trustworthiness {trust:.3}, purity {purity:.3}, entropy err {worst:.1e}")
}

/// Items spread over the roster so several categories are present.
fn spread_items(n: usize) -> Vec<String> {
    StimulusSet::builtin().ids().into_iter().step_by(3).take(n).collect()
}

/// Category-clustered points for `items` and their normalised Euclidean DSM.
fn ground_truth(items: &[String], seed: u64) -> (Vec<Vec<f64>>, Dsm) {
    let set = StimulusSet::builtin();
    let mut r = rng(seed);
    let mut centres: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let points: Vec<Vec<f64>> = items
        .iter()
        .map(|id| {
            let cat = set.items()[set.index_of(id).unwrap()].category.to_string();
            let centre = centres
                .entry(cat)
                .or_insert_with(|| (0..6).map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut r)).collect::<Vec<f64>>())
                .clone();
            centre
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    c + z
                })
                .collect()
        })
        .collect();
    let n = items.len();
    let mut dense = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            dense[i * n + j] = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    let max = dense.iter().copied().fold(0.0, f64::max);
    dense.iter_mut().for_each(|v| *v /= max);
    (points, Dsm::from_dense(items.to_vec(), &dense, Provenance::Rated).unwrap())
}

fn report_shape() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let items = spread_items(20);
    let (points, truth) = ground_truth(&items, 10);
    let truth_path = root.join("truth.csv");
    truth.save_csv(&truth_path).unwrap();

    let ratings = root.join("human.csv");
    std::fs::write(&ratings, human_ratings_csv(&truth, 12, 6.0, 11)).unwrap();
    cmd_ingest_human(&IngestOptions {
        ratings,
        labels: Some(items.clone()),
        out_dir: root.join("human"),
    })
    .unwrap();

    let mut systems = vec![SystemInput::new("human", SystemSource::Cohort(root.join("human")))];
    for (i, (offset, noise)) in [(1.0, 2.0), (5.0, 10.0), (10.0, 25.0)].iter().enumerate() {
        let out = root.join(format!("model{i}"));
        let cfg = word_config(
            &out,
            items.clone(),
            named(&DEFAULT_SURNAMES, &[Honorific::Dr]),
            settings(LatentSource::DsmFile { path: truth_path.clone() }, *offset, *noise),
            20 + i as u64,
        );
        assert!(cmd_run(&cfg).unwrap().complete);
        systems.push(SystemInput::new(format!("model{i}"), SystemSource::Run(out)));
    }
    for (i, noise) in [0.5, 2.0].iter().enumerate() {
        let vectors = root.join(format!("emb{i}.txt"));
        std::fs::write(&vectors, word_vectors(&items, &points, *noise, 30 + i as u64)).unwrap();
        let out = root.join(format!("emb{i}.csv"));
        cmd_baseline(&BaselineOptions {
            embeddings: vectors,
            format: None,
            labels: items.clone(),
            out: out.clone(),
            strict: true,
        })
        .unwrap();
        systems.push(SystemInput::new(format!("embedding{i}"), SystemSource::Dsm(out)));
    }

    let mut opts = AnalyzeOptions::new(systems, root.join("analysis"));
    opts.stimuli = Some(stimuli_path());
    let report = cmd_analyze(&opts).unwrap();
    assert_eq!(report.inputs.len(), 6);
    assert_eq!(report.m_comparisons, 15);
    assert_eq!(report.tables.len(), 3);
    let by_mask: HashMap<Option<&str>, _> = report.tables.iter().map(|t| (t.mask_name.as_deref(), t)).collect();
    let all = by_mask[&None];
    let (within, between) = (by_mask[&Some("within")], by_mask[&Some("between")]);
    assert_eq!(all.cells.len(), 15);
    let mut significant = 0;
    for cell in &all.cells {
        let r = cell.report.as_ref().unwrap_or_else(|| panic!("cell {}-{} unavailable", cell.a, cell.b));
        assert!(r.r_s.is_finite() && (0.0..=1.0).contains(&r.p_raw));
        assert_eq!(r.m_comparisons, 15);
        assert_eq!(r.significant_bonferroni, r.p_raw * 15.0 < r.alpha);
        significant += usize::from(r.significant_bonferroni);
        let w = within.get(cell.a, cell.b).unwrap().report.as_ref().unwrap();
        let b = between.get(cell.a, cell.b).unwrap().report.as_ref().unwrap();
        assert_eq!(w.n_pairs_used + b.n_pairs_used, r.n_pairs_used);
    }
    let out = root.join("analysis");
    for f in ["report.json", "report.md", "alignment_all.csv", "alignment_within.csv", "alignment_between.csv"] {
        assert!(out.join(f).exists(), "{f} not written");
    }
    let csv = std::fs::read_to_string(out.join("alignment_all.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    format!("15 cells, {significant} significant at m = 15, within + between partition every cell")
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for copy in ["first", "second"] {
        let run = tmp.path().join(copy).join("run");
        let mut cfg = word_config(
            &run,
            spread_items(12),
            named(&["Olson", "Garcia", "Nguyen"], &DEFAULT_HONORIFICS),
            settings(LatentSource::Clustered { separation: 3.0 }, 5.0, 10.0),
            42,
        );
        cfg.temperatures = vec![0.7, 1.5];
        cfg.synthetic.noncompliance_rate = 0.05;
        assert!(cmd_run(&cfg).unwrap().complete);
        cmd_report(&run, None).unwrap();
        let mut opts = AnalyzeOptions::new(
            vec![SystemInput::new("model", SystemSource::Run(run.clone()))],
            tmp.path().join(copy).join("analysis"),
        );
        opts.stimuli = Some(stimuli_path());
        opts.tsne = Some(TsneParams {
            perplexity: 5.0,
            max_iter: 500,
            ..TsneParams::default()
        });
        cmd_analyze(&opts).unwrap();
        let mut files = files_under(&tmp.path().join(copy));
        // the manifest carries wall-clock timestamps
        files.remove(Path::new("run/manifest.json"));
        outputs.push(files);
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>(), "different file sets");
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b[*k] != **v)
        .map(|(k, _)| k.display().to_string())
        .collect();
    assert!(differing.is_empty(), "files differ: {}", differing.join(", "));
    let transcripts = a.keys().filter(|k| k.extension().is_some_and(|e| e == "jsonl")).count();
    assert_eq!(transcripts, 18);
    format!("{} files identical, {transcripts} transcripts", a.len())
}
