//! Invariants checked with proptest, plus brute-force oracles for the small
//! closed-form helpers.

use diffaudit::data::raw::{decode_raw, export_raw, ingest_raw, RawManifest};
use diffaudit::data::Dataset;
use diffaudit::defenses::{deduplicate, exposure, exposures, CanaryPool};
use diffaudit::extraction::calibrate_score_cutoff;
use diffaudit::image::{ImageTensor, Shape};
use diffaudit::inpainting::contrastive_scores;
use diffaudit::membership::{auc, fit_stats, lira_score, roc_curve, tpr_at_fpr};
use diffaudit::seed::derive;
use diffaudit::stats::{sign_test, spearman};
use proptest::prelude::*;

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..120).prop_flat_map(|n| {
        (
            prop::collection::vec((-40i32..40).prop_map(|k| k as f64 / 8.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = true;
                l[1] = false;
                (s, l)
            })
    })
}

proptest! {
    #[test]
    fn roc_ignores_increasing_transforms((scores, labels) in labelled_scores(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let base = roc_curve(&scores, &labels).unwrap();
        for f in [|x: f64| x.exp(), |x: f64| x.powi(3) + x] {
            let moved: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            let r = roc_curve(&moved, &labels).unwrap();
            prop_assert_eq!(&r.fpr, &base.fpr);
            prop_assert_eq!(&r.tpr, &base.tpr);
        }
        let affine: Vec<f64> = scores.iter().map(|&x| a * x + b).collect();
        prop_assert_eq!(roc_curve(&affine, &labels).unwrap().tpr, base.tpr);
    }

    #[test]
    fn auc_of_reversed_scores_is_complement((scores, labels) in labelled_scores()) {
        let r = roc_curve(&scores, &labels).unwrap();
        let neg: Vec<f64> = scores.iter().map(|x| -x).collect();
        let a = auc(&r);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + auc(&roc_curve(&neg, &labels).unwrap()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_pair_counting((scores, labels) in labelled_scores()) {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        prop_assert!((auc(&roc_curve(&scores, &labels).unwrap()) - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn tpr_at_fpr_is_monotone_and_respects_bound((scores, labels) in labelled_scores(), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let r = roc_curve(&scores, &labels).unwrap();
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        prop_assert!(tpr_at_fpr(&r, lo) <= tpr_at_fpr(&r, hi));
        // brute force over every threshold "member iff score >= tau"
        let pos = labels.iter().filter(|&&l| l).count() as f64;
        let neg = labels.len() as f64 - pos;
        let best = scores
            .iter()
            .map(|&tau| {
                let fp = scores.iter().zip(&labels).filter(|(s, l)| **s >= tau && !**l).count() as f64;
                let tp = scores.iter().zip(&labels).filter(|(s, l)| **s >= tau && **l).count() as f64;
                (fp / neg, tp / pos)
            })
            .filter(|(f, _)| *f <= lo)
            .map(|(_, t)| t)
            .fold(0.0, f64::max);
        prop_assert!((tpr_at_fpr(&r, lo) - best).abs() < 1e-12);
    }

    #[test]
    fn lira_is_antisymmetric(l in 0.0f64..2.0, mi in 0.0f64..2.0, mo in 0.0f64..2.0, si in 1e-3f64..1.0, so in 1e-3f64..1.0) {
        let fwd = fit_like(mi, si, mo, so);
        let back = fit_like(mo, so, mi, si);
        prop_assert!((lira_score(l, &fwd).unwrap() + lira_score(l, &back).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn equal_variance_lira_ranks_like_loss(ls in prop::collection::vec(0.0f64..2.0, 2..40), mi in 0.0f64..1.0, gap in 0.01f64..1.0, sd in 1e-2f64..1.0) {
        // with one shared deviation and mu_in < mu_out the score falls as the loss rises
        let st = fit_like(mi, sd, mi + gap, sd);
        let scores: Vec<f64> = ls.iter().map(|&l| lira_score(l, &st).unwrap()).collect();
        let neg: Vec<f64> = ls.iter().map(|l| -l).collect();
        prop_assert!((spearman(&scores, &neg).unwrap_or(1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fitted_stats_floor_deviation(ins in prop::collection::vec(0.0f64..1.0, 1..6), outs in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let st = fit_stats(&ins, &outs).unwrap();
        prop_assert!(st.sigma_in >= 1e-6 && st.sigma_out >= 1e-6);
        prop_assert!(st.in_losses.len() == ins.len() && st.out_losses.len() == outs.len());
    }

    #[test]
    fn exposure_bounded_and_rank_based(losses in prop::collection::vec(0.0f64..1.0, 2..64), k in 0u32..4) {
        let p = 1usize << (k + 2);
        let losses: Vec<f64> = losses.into_iter().cycle().take(p).collect();
        let pool = pool_with(losses.clone());
        let e = exposures(&pool).unwrap();
        let top = (p as f64).log2();
        prop_assert!(e.iter().all(|&x| (0.0..=top).contains(&x)));
        let moved = pool_with(losses.iter().map(|l| (3.0 * l).exp()).collect());
        prop_assert_eq!(exposures(&moved).unwrap(), e);
        let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let unique_min = losses.iter().filter(|&&l| l == min).count() == 1;
        let i = losses.iter().position(|&l| l == min).unwrap();
        prop_assert_eq!(exposure(&pool, i).unwrap() == top, unique_min);
    }

    #[test]
    fn contrastive_scores_ignore_common_scale(pairs in prop::collection::vec((1e-3f64..2.0, 1e-3f64..2.0), 1..50), c in 1e-2f64..100.0) {
        let (m, s): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = contrastive_scores(&m, &s).unwrap();
        let ms: Vec<f64> = m.iter().map(|x| x * c).collect();
        let ss: Vec<f64> = s.iter().map(|x| x * c).collect();
        for (a, b) in base.iter().zip(contrastive_scores(&ms, &ss).unwrap()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn cutoff_quantile_is_monotone(v in prop::collection::vec(0.0f64..3.0, 1..100), q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
        let (lo, hi) = (q1.min(q2), q1.max(q2));
        let a = calibrate_score_cutoff(&v, lo).unwrap();
        prop_assert!(a <= calibrate_score_cutoff(&v, hi).unwrap());
        prop_assert_eq!(calibrate_score_cutoff(&v, 0.0).unwrap(), v.iter().copied().fold(f64::INFINITY, f64::min));
        prop_assert!(v.contains(&a));
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct(m in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assert_eq!(derive(m, &[a, b]), derive(m, &[a, b]));
        if a != b {
            prop_assert_ne!(derive(m, &[a]), derive(m, &[b]));
        }
        prop_assert_ne!(derive(m, &[a]), derive(m, &[a, 0]));
    }

    #[test]
    fn raw_round_trip_is_bit_identical(n in 1usize..6, side in 1usize..5, c in 1usize..4, seed in any::<u64>()) {
        let shape = Shape::new(side, side, c);
        let images = random_images(shape, n, seed);
        let ds = Dataset::from_images(shape, images, "prop").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (t, m) = (dir.path().join("x.f32"), dir.path().join("x.json"));
        export_raw(&ds, &t, &m).unwrap();
        let back = ingest_raw(&t, &m).unwrap();
        prop_assert_eq!(back.clamped, 0);
        prop_assert_eq!(back.dataset.images(), ds.images());
        let manifest: RawManifest = serde_json::from_slice(&std::fs::read(&m).unwrap()).unwrap();
        let decoded = decode_raw(&manifest, &std::fs::read(&t).unwrap()).unwrap();
        prop_assert_eq!(decoded.dataset.images(), ds.images());
    }

    #[test]
    fn dedup_is_idempotent_and_consistent(n in 2usize..14, copies in prop::collection::vec(0usize..14, 0..6), threshold in 0.5f64..1.0, seed in any::<u64>()) {
        let shape = Shape::new(6, 6, 1);
        let mut images = random_images(shape, n, seed);
        for c in copies {
            images.push(images[c % n].clone());
        }
        let ds = Dataset::from_images(shape, images, "prop").unwrap();
        let r = deduplicate(&ds, threshold).unwrap();
        prop_assert_eq!(r.kept.len() + r.removed.len(), ds.len());
        prop_assert!(r.removed.iter().all(|x| x.similarity >= threshold && x.representative < x.id));
        // a pixel-identical pair can never both survive
        for (i, &a) in r.kept.iter().enumerate() {
            for &b in &r.kept[i + 1..] {
                prop_assert_ne!(ds.image(a), ds.image(b));
            }
        }
        let again = deduplicate(&r.apply(&ds), threshold).unwrap();
        prop_assert!(again.removed.is_empty());
    }
}

fn fit_like(
    mu_in: f64,
    sigma_in: f64,
    mu_out: f64,
    sigma_out: f64,
) -> diffaudit::membership::LiraStats {
    diffaudit::membership::LiraStats {
        in_losses: vec![],
        out_losses: vec![],
        mu_in,
        sigma_in,
        mu_out,
        sigma_out,
    }
}

fn pool_with(losses: Vec<f64>) -> CanaryPool {
    let shape = Shape::new(1, 1, 1);
    CanaryPool {
        canaries: vec![ImageTensor::filled(shape, 0.0); losses.len()],
        inserted: vec![],
        losses: Some(losses),
    }
}

fn random_images(shape: Shape, n: usize, seed: u64) -> Vec<ImageTensor> {
    use rand::Rng;
    let mut rng = diffaudit::seed::rng(seed);
    (0..n)
        .map(|_| {
            ImageTensor::new(
                shape,
                (0..shape.dim()).map(|_| rng.random::<f32>()).collect(),
            )
            .unwrap()
        })
        .collect()
}

/// `P(X >= s)` for `X ~ Binomial(n, 1/2)` by exact counting.
fn binomial_tail(s: u64, n: u64) -> f64 {
    let mut c: u128 = 1;
    let mut total: u128 = 0;
    for k in 0..=n {
        if k >= s {
            total += c;
        }
        c = c * (n - k) as u128 / (k + 1) as u128;
    }
    total as f64 / 2f64.powi(n as i32)
}

#[test]
fn sign_test_matches_exact_counting() {
    for n in 1..=60 {
        for s in 0..=n {
            let want = binomial_tail(s, n);
            let got = sign_test(s, n).unwrap();
            assert!(
                (got - want).abs() <= 1e-9 * want,
                "n={n} s={s}: {got} vs {want}"
            );
        }
    }
    assert!(sign_test(3, 2).is_err());
}
