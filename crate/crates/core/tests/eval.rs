mod common;

use common::{auc_bruteforce, component_sizes, rng};
use pcnet::eval::{
    csv_header, csv_row, evaluate_region, mean_csv_row, remove_small_components, roc_auc, threshold_metrics,
    Counts, EvalReport, MeanReport, Region, CSV_COLUMNS, MIN_COMPONENT, THRESHOLD,
};
use pcnet::{Error, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn scores(v: Vec<f64>) -> Tensor<f64> {
    Tensor::new(vec![v.len()], v).unwrap()
}

fn labels(v: Vec<u8>) -> Tensor<u8> {
    Tensor::new(vec![v.len()], v).unwrap()
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn check_filter(mask: &[u8], dims: &[usize]) {
    let t = Tensor::new(dims.to_vec(), mask.to_vec()).unwrap();
    let out = remove_small_components(&t, MIN_COMPONENT).unwrap();
    for (o, i) in out.data().iter().zip(mask) {
        assert!(*o <= *i, "filter added foreground");
    }
    let want: Vec<usize> = component_sizes(mask, dims).into_iter().filter(|&s| s >= MIN_COMPONENT).collect();
    assert_eq!(sorted(component_sizes(out.data(), dims)), sorted(want));
    let again = remove_small_components(&out, MIN_COMPONENT).unwrap();
    assert_eq!(again.data(), out.data(), "filter not idempotent");
}

fn blobs(dims: &[usize], count: usize, seed: u64) -> Vec<u8> {
    let mut r = rng(seed);
    let n: usize = dims.iter().product();
    let mut m = vec![0u8; n];
    for _ in 0..count {
        let mut at = r.random_range(0..n);
        let len = r.random_range(1..90);
        for _ in 0..len {
            m[at] = 1;
            let step = match r.random_range(0..dims.len()) {
                0 => 1,
                1 => dims[dims.len() - 1],
                _ => dims[1] * dims[2],
            };
            at = if r.random_bool(0.5) { (at + step) % n } else { (at + n - step) % n };
        }
    }
    m
}

#[test]
fn auc_matches_pairwise_oracle_exactly() {
    let mut r = rng(11);
    for case in 0..100 {
        let n = r.random_range(2..300);
        let coarse = case % 3 == 0;
        let s: Vec<f64> = (0..n)
            .map(|_| if coarse { r.random_range(0..5) as f64 / 4.0 } else { r.random::<f64>() })
            .collect();
        let mut l: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.3))).collect();
        l[0] = 0;
        l[1] = 1;
        let got = roc_auc(&scores(s.clone()), &labels(l.clone())).unwrap();
        assert_eq!(got, auc_bruteforce(&s, &l), "case {case}");
    }
}

#[test]
fn auc_examples() {
    let l = labels(vec![0, 0, 1, 1]);
    assert_eq!(roc_auc(&scores(vec![0.1, 0.4, 0.35, 0.8]), &l).unwrap(), 0.75);
    assert_eq!(roc_auc(&scores(vec![0.1, 0.2, 0.8, 0.9]), &l).unwrap(), 1.0);
    assert_eq!(roc_auc(&scores(vec![0.5; 4]), &l).unwrap(), 0.5);
    assert!(matches!(roc_auc(&scores(vec![0.1, 0.2]), &labels(vec![0, 0])), Err(Error::SingleClass { .. })));
    assert!(roc_auc(&scores(vec![0.1, 0.2]), &labels(vec![0, 1, 1])).is_err());
}

proptest! {
    #[test]
    fn auc_complement_and_monotone(raw in prop::collection::vec((0u8..20, any::<bool>()), 2..120)) {
        let s: Vec<f64> = raw.iter().map(|(v, _)| *v as f64 / 19.0).collect();
        let mut l: Vec<u8> = raw.iter().map(|(_, b)| u8::from(*b)).collect();
        l[0] = 0;
        l[1] = 1;
        let a = roc_auc(&scores(s.clone()), &labels(l.clone())).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let neg: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        let c = roc_auc(&scores(neg), &labels(l.clone())).unwrap();
        prop_assert!((a + c - 1.0).abs() < 1e-12);
        let warped: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + v.powi(3)).collect();
        prop_assert_eq!(roc_auc(&scores(warped), &labels(l)).unwrap(), a);
    }

    #[test]
    fn ratios_follow_counts(raw in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..200)) {
        let s = scores(raw.iter().map(|r| r.0).collect());
        let l = labels(raw.iter().map(|r| u8::from(r.1)).collect());
        let r = evaluate_region(&s, &l, None, THRESHOLD).unwrap();
        let c = r.counts;
        prop_assert_eq!(c.total() as usize, raw.len());
        prop_assert_eq!(r.acc, Some((c.tp + c.tn) as f64 / c.total() as f64));
        if let (Some(d), Some(se), Some(p)) = (r.dice, r.se, c.precision()) {
            if se + p > 0.0 {
                prop_assert!((d - 2.0 * se * p / (se + p)).abs() < 1e-12);
            }
        }
        prop_assert_eq!(r.se.is_none(), c.tp + c.fn_ == 0);
        prop_assert_eq!(r.sp.is_none(), c.tn + c.fp == 0);
    }
}

#[test]
fn threshold_is_inclusive() {
    let c = threshold_metrics(&scores(vec![0.5, 0.4999]), &labels(vec![1, 1]), THRESHOLD).unwrap();
    assert_eq!(c, Counts { tp: 1, fp: 0, tn: 0, fn_: 1 });
}

#[test]
fn component_boundary_39_and_40() {
    let dims = [60, 60];
    let mut m = vec![0u8; 3600];
    for i in 0..39 {
        m[5 * 60 + 5 + i] = 1;
    }
    for i in 0..40 {
        m[30 * 60 + 5 + i] = 1;
    }
    let out = remove_small_components(&Tensor::new(dims.to_vec(), m.clone()).unwrap(), MIN_COMPONENT).unwrap();
    assert!(out.data()[5 * 60..6 * 60].iter().all(|&v| v == 0));
    assert_eq!(out.data()[30 * 60..31 * 60], m[30 * 60..31 * 60]);
}

#[test]
fn diagonal_chains_connect() {
    // 40 voxels touching only through corners form a single object
    let mut m2 = vec![0u8; 50 * 50];
    for i in 0..40 {
        m2[i * 50 + i] = 1;
    }
    let out = remove_small_components(&Tensor::new(vec![50, 50], m2.clone()).unwrap(), 40).unwrap();
    assert_eq!(out.data(), &m2[..]);
    let mut m3 = vec![0u8; 45 * 45 * 45];
    for i in 0..40 {
        m3[(i * 45 + i) * 45 + i] = 1;
    }
    let out = remove_small_components(&Tensor::new(vec![45, 45, 45], m3.clone()).unwrap(), 40).unwrap();
    assert_eq!(out.data(), &m3[..]);
}

#[test]
fn tube_survives_and_speck_goes() {
    let d = [32, 32, 32];
    let mut m = vec![0u8; 32 * 32 * 32];
    for z in 0..32 {
        for y in 14..17 {
            for x in 14..17 {
                m[(z * 32 + y) * 32 + x] = 1;
            }
        }
    }
    let tube = m.clone();
    for z in 2..4 {
        for y in 2..4 {
            m[(z * 32 + y) * 32 + 2] = 1;
        }
    }
    let out = remove_small_components(&Tensor::new(d.to_vec(), m).unwrap(), MIN_COMPONENT).unwrap();
    assert_eq!(out.data(), &tube[..]);
}

#[test]
fn random_masks_match_labelling_oracle() {
    for seed in 0..25 {
        check_filter(&blobs(&[1, 64, 64], 30, seed), &[64, 64]);
        check_filter(&blobs(&[20, 20, 20], 25, 100 + seed), &[20, 20, 20]);
    }
    assert!(remove_small_components(&Tensor::new(vec![8], vec![0u8; 8]).unwrap(), 40).is_err());
}

#[test]
fn slab_region_restricts_evaluation() {
    let d = vec![4, 4, 4];
    let mut r = rng(3);
    let p: Vec<f64> = (0..64).map(|_| r.random()).collect();
    let t: Vec<u8> = (0..64).map(|i| u8::from(i % 3 == 0)).collect();
    let slab: Vec<u8> = (0..64).map(|i| u8::from(i / 16 == 1)).collect();
    let pred = Tensor::new(d.clone(), p.clone()).unwrap();
    let truth = Tensor::new(d.clone(), t.clone()).unwrap();
    let region = Tensor::new(d.clone(), slab).unwrap();
    let rep = evaluate_region(&pred, &truth, Some(&region), THRESHOLD).unwrap();
    assert_eq!(rep.region, Region::Subregion);
    assert_eq!(rep.counts.total(), 16);
    let sub = evaluate_region(&scores(p[16..32].to_vec()), &labels(t[16..32].to_vec()), None, THRESHOLD).unwrap();
    assert_eq!(rep.counts, sub.counts);
    assert_eq!(rep.auc, Some(auc_bruteforce(&p[16..32], &t[16..32])));

    let empty = Tensor::new(d.clone(), vec![0u8; 64]).unwrap();
    assert!(evaluate_region(&pred, &truth, Some(&empty), THRESHOLD).is_err());
    let one_class: Vec<u8> = (0..64).map(|i| u8::from(i == 0)).collect();
    let rep = evaluate_region(&pred, &truth, Some(&Tensor::new(d, one_class).unwrap()), THRESHOLD).unwrap();
    assert_eq!(rep.auc, None);
}

#[test]
fn csv_rows_round_trip_counts() {
    let r = EvalReport::new(Region::All, Counts { tp: 7, fp: 3, tn: 80, fn_: 10 }, Some(0.91));
    let row = csv_row("PCNet", "case01", &r);
    let cells: Vec<&str> = row.split(',').collect();
    assert_eq!(cells.len(), CSV_COLUMNS.len());
    assert_eq!(csv_header().split(',').count(), CSV_COLUMNS.len());
    let n: Vec<u64> = cells[8..].iter().map(|c| c.parse().unwrap()).collect();
    let c = Counts { tp: n[0], fp: n[1], tn: n[2], fn_: n[3] };
    assert_eq!(cells[7].parse::<f64>().ok(), c.dice());
    assert_eq!(cells[6].parse::<f64>().ok(), c.sensitivity());
    let undefined = EvalReport::new(Region::All, Counts { tp: 0, fp: 0, tn: 9, fn_: 0 }, None);
    let m = MeanReport::from_reports(Region::All, &[r, undefined]);
    assert_eq!(m.dice, r.dice);
    assert_eq!(m.acc, Some((0.87 + 1.0) / 2.0));
    assert!(mean_csv_row("PCNet", &m).starts_with("PCNet,mean,all,0.91,"));
}
