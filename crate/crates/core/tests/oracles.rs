//! Library results checked against independent, deliberately naive
//! reimplementations.

mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use repalign::backend::{ChatBackend, ChatRequest, RequestMeta, SyntheticBackend, SyntheticRaterConfig};
use repalign::baseline::{cosine_dsm, EmbeddingTable};
use repalign::cohort::{derive_seed, Honorific, Identity, Payload, TaskKind};
use repalign::backend::random_latent;
use repalign::stats::{
    icc_two_way, spearman, spearman_test, wilcoxon_ranksum_with, PValueMethod, RankTestMethod,
};
use repalign::viz::{pca, trustworthiness};

#[test]
fn spearman_matches_naive_ranks() {
    let mut r = rng(11);
    for _ in 0..100 {
        let n = r.random_range(3..=40);
        let x = tied_vector(&mut r, n);
        let y = tied_vector(&mut r, n);
        let want = naive_spearman(&x, &y);
        if !want.is_finite() {
            assert!(spearman(&x, &y).is_err());
            continue;
        }
        let got = spearman(&x, &y).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn exhaustive_p_matches_brute_force() {
    let mut r = rng(12);
    for n in [4, 5, 6, 7] {
        let x = tied_vector(&mut r, n);
        let y: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let Ok(t) = spearman_test(&x, &y, PValueMethod::Exhaustive) else {
            continue;
        };
        let obs = naive_spearman(&x, &y).abs();
        let perms = permutations(n);
        let hits = perms
            .iter()
            .filter(|p| {
                let yp: Vec<f64> = p.iter().map(|&i| y[i]).collect();
                naive_spearman(&x, &yp).abs() >= obs - 1e-12
            })
            .count();
        let want = hits as f64 / perms.len() as f64;
        assert!((t.p - want).abs() < 1e-12, "n={n}: {} vs {want}", t.p);
    }
}

#[test]
fn exact_ranksum_matches_enumeration() {
    let mut r = rng(13);
    for n1 in 1..=5 {
        for n2 in 1..=5 {
            let a = tied_vector(&mut r, n1);
            let b = tied_vector(&mut r, n2);
            let got = wilcoxon_ranksum_with(&a, &b, RankTestMethod::Exact).unwrap();
            let want = enumerated_ranksum_p(&a, &b);
            assert!((got.p_two_sided - want).abs() < 1e-12, "({n1},{n2}): {} vs {want}", got.p_two_sided);
        }
    }
}

#[test]
fn icc_matches_anova_table() {
    let mut r = rng(14);
    for _ in 0..20 {
        let n = r.random_range(3..=8);
        let k = r.random_range(2..=5);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| r.random_range(0.0..10.0)).collect())
            .collect();
        let (single, average) = definitional_icc(&rows);
        let got = icc_two_way(&rows).unwrap();
        assert!((got.icc_single - single).abs() < 1e-9);
        assert!((got.icc_average - average).abs() < 1e-9);
    }
}

/// Cyclic Jacobi eigenvalues of a small symmetric matrix, descending.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum().max(0.0) * 2.0 - 1.0;
                let t = t / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

#[test]
fn pca_variances_match_jacobi() {
    let mut r = rng(15);
    let data: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..3).map(|_| r.random_range(-3.0..3.0)).collect())
        .collect();
    let n = data.len() as f64;
    let means: Vec<f64> = (0..3).map(|j| data.iter().map(|row| row[j]).sum::<f64>() / n).collect();
    let cov: Vec<Vec<f64>> = (0..3)
        .map(|a| {
            (0..3)
                .map(|b| data.iter().map(|row| (row[a] - means[a]) * (row[b] - means[b])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect();
    let want = jacobi_eigenvalues(cov);
    let got = pca(&data, 3).unwrap();
    for (g, w) in got.explained_variance.iter().zip(&want) {
        assert!((g - w).abs() < 1e-9, "{g} vs {w}");
    }
    // score variance along each component equals its eigenvalue
    for c in 0..3 {
        let v: f64 = got.scores.iter().map(|s| s[c] * s[c]).sum::<f64>() / (n - 1.0);
        assert!((v - want[c]).abs() < 1e-9);
    }
}

#[test]
fn synthetic_reply_follows_formula() {
    let labels = first_items(6);
    let latent = random_latent(&labels, 4, 99);
    let mut cfg = SyntheticRaterConfig::new(latent.clone());
    cfg.persona_offset_scale = 5.0;
    cfg.noise_scale = 10.0;
    cfg.bimodal_push = 0.3;
    cfg.seed = 7;
    let backend = SyntheticBackend::new(cfg).unwrap();
    let who = Identity::named(Honorific::Dr, "Olson", 3);

    let mut persona = ChaCha8Rng::seed_from_u64(derive_seed(who.seed ^ 7, "persona"));
    let z0: f64 = StandardNormal.sample(&mut persona);
    let offset = 5.0 * z0;

    let temperature = 0.7;
    for trial in 0..20 {
        let (i, j) = (trial % 6, (trial * 5 + 1) % 6);
        let request = ChatRequest {
            messages: Vec::new(),
            temperature,
            max_tokens: None,
            meta: RequestMeta {
                identity: who.clone(),
                task: TaskKind::WordWord,
                trial_index: trial,
                item_ids: vec![labels[i].clone(), labels[j].clone()],
                payload: Payload::WordPair(labels[i].clone(), labels[j].clone()),
            },
        };
        let reply = backend.send(&request).unwrap();

        let mut t = ChaCha8Rng::seed_from_u64(derive_seed(who.seed ^ 7, &format!("trial:{trial}")));
        let _u: f64 = t.random();
        let z: f64 = StandardNormal.sample(&mut t);
        let d = latent.get(i, j).unwrap();
        let mut s = 100.0 * (1.0 - d) + offset + 10.0 * temperature * z;
        let target = if s < 50.0 { 0.0 } else { 100.0 };
        s += 0.3 * (target - s);
        let want = s.clamp(0.0, 100.0).round() as i64;
        assert_eq!(reply.text, want.to_string(), "trial {trial}");
    }
}

/// Trustworthiness straight from its definition, with input ranks found by
/// counting closer points.
fn naive_trustworthiness(x: &[Vec<f64>], y: &[Vec<f64>], k: usize) -> f64 {
    let n = x.len();
    let d = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut penalty = 0.0;
    for i in 0..n {
        let mut out: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        out.sort_by(|&a, &b| d(&y[i], &y[a]).total_cmp(&d(&y[i], &y[b])).then(a.cmp(&b)));
        for &j in out.iter().take(k) {
            let rank = (0..n)
                .filter(|&m| m != i)
                .filter(|&m| {
                    let (dm, dj) = (d(&x[i], &x[m]), d(&x[i], &x[j]));
                    dm < dj || (dm == dj && m <= j)
                })
                .count();
            if rank > k {
                penalty += (rank - k) as f64;
            }
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty
}

#[test]
fn trustworthiness_matches_definition() {
    let mut r = rng(16);
    let x: Vec<Vec<f64>> = (0..25).map(|_| (0..4).map(|_| r.random_range(0.0..1.0)).collect()).collect();
    let y: Vec<Vec<f64>> = (0..25).map(|_| (0..2).map(|_| r.random_range(0.0..1.0)).collect()).collect();
    for k in [1, 3, 7] {
        let got = trustworthiness(&x, &y, k).unwrap();
        let want = naive_trustworthiness(&x, &y, k);
        assert!((got - want).abs() < 1e-12, "k={k}: {got} vs {want}");
    }
    let same = trustworthiness(&x, &x, 5).unwrap();
    assert!((same - 1.0).abs() < 1e-12);
}

#[test]
fn cosine_matches_hand_computation() {
    let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let vectors = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 2.0]];
    let table = EmbeddingTable::new(labels.clone(), vectors).unwrap();
    let c = cosine_dsm(&table, &labels).unwrap();
    assert!(!c.halved);
    let inv_sqrt2 = 1.0 / 2f64.sqrt();
    assert!((c.dsm.get(0, 1).unwrap() - (1.0 - inv_sqrt2)).abs() < 1e-12);
    assert!((c.dsm.get(0, 2).unwrap() - 1.0).abs() < 1e-12);
    assert!((c.dsm.get(1, 2).unwrap() - (1.0 - inv_sqrt2)).abs() < 1e-12);

    let flipped = EmbeddingTable::new(labels.clone(), vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let c = cosine_dsm(&flipped, &labels).unwrap();
    assert!(c.halved);
    assert!((c.dsm.get(0, 1).unwrap() - 1.0).abs() < 1e-12);
    assert!((c.dsm.get(0, 2).unwrap() - 0.5).abs() < 1e-12);
}
