use std::collections::HashSet;

use proptest::prelude::*;
use weakroute_core::data::{batches, DatasetSplit};
use weakroute_core::stats::{contingency, mcnemar, ContingencyTable};
use weakroute_core::weakroute::{
    average_loss_baseline, compose_weakest, mean_inference, pseudo_target, strong_inference, weakness, weakroute_loss, LogProbMatrix,
    LogitBundle, LossOptions, TargetBatch,
};
use weakroute_core::{Tape, Tensor};

#[derive(Clone, Debug)]
struct Case {
    batch: usize,
    classes: usize,
    pathways: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Case {
    fn tensors(&self) -> Vec<Tensor> {
        self.pathways
            .iter()
            .map(|p| Tensor::new(vec![self.batch, self.classes], p.clone()).unwrap())
            .collect()
    }

    fn lp(&self) -> LogProbMatrix {
        LogProbMatrix::from_logits(&self.tensors()).unwrap()
    }

    fn target(&self) -> TargetBatch {
        TargetBatch::from_labels(self.labels.clone(), self.classes).unwrap()
    }
}

fn case(n_range: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Case> {
    (1usize..=8, 2usize..=5, n_range).prop_flat_map(|(batch, classes, n)| {
        (
            prop::collection::vec(prop::collection::vec(-8.0f64..8.0, batch * classes), n),
            prop::collection::vec(0..classes, batch),
        )
            .prop_map(move |(pathways, labels)| Case {
                batch,
                classes,
                pathways,
                labels,
            })
    })
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn has_ties(xs: &[f64]) -> bool {
    xs.iter().enumerate().any(|(k, a)| xs[k + 1..].iter().any(|b| (a - b).abs() < 1e-9))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn shift_invariance(c in case(1..=4), shifts in prop::collection::vec(-50.0f64..50.0, 4)) {
        let mut shifted = c.clone();
        for (j, p) in shifted.pathways.iter_mut().enumerate() {
            p.iter_mut().for_each(|v| *v += shifts[j]);
        }
        let (a, b) = (c.lp(), shifted.lp());
        prop_assert!(close(a.values(), b.values(), 1e-12));
        let (wa, wb) = (weakness(&a, &c.target()).unwrap(), weakness(&b, &c.target()).unwrap());
        prop_assert!(close(wa.values(), wb.values(), 1e-12));
        prop_assert!(close(mean_inference(&a).logits.data(), mean_inference(&b).logits.data(), 1e-12));
    }

    #[test]
    fn permutation_equivariance(c in case(2..=4), seed in any::<u64>()) {
        let n = c.pathways.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for k in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(k, (s >> 33) as usize % (k + 1));
        }
        let permuted = Case { pathways: perm.iter().map(|&j| c.pathways[j].clone()).collect(), ..c.clone() };
        let (a, b) = (c.lp(), permuted.lp());
        let t = c.target();
        let (wa, wb) = (weakness(&a, &t).unwrap(), weakness(&b, &t).unwrap());
        for bi in 0..c.batch {
            for i in 0..c.classes {
                prop_assume!(!has_ties(wa.row(bi, i)));
                for (k, &j) in perm.iter().enumerate() {
                    prop_assert!((wb.get(bi, i, k) - wa.get(bi, i, j)).abs() <= 1e-12);
                }
            }
        }
        let (ca, cb) = (compose_weakest(&a, &t).unwrap(), compose_weakest(&b, &t).unwrap());
        prop_assert!(close(ca.logits.data(), cb.logits.data(), 1e-12));
        let (sa, sb) = (ca.selection.unwrap(), cb.selection.unwrap());
        for (x, y) in sa.indices().iter().zip(sb.indices()) {
            prop_assert_eq!(*x, perm[*y]);
        }
        prop_assert!(close(strong_inference(&a).logits.data(), strong_inference(&b).logits.data(), 1e-12));
        prop_assert!(close(mean_inference(&a).logits.data(), mean_inference(&b).logits.data(), 1e-12));
    }

    #[test]
    fn weakness_range(c in case(2..=4)) {
        let lp = c.lp();
        let w = weakness(&lp, &c.target()).unwrap();
        for b in 0..c.batch {
            for i in 0..c.classes {
                for &v in w.row(b, i) {
                    prop_assert!(v.is_finite());
                    if c.labels[b] == i {
                        prop_assert!(v > 1.0 && v < 2.0, "positive {}", v);
                    } else {
                        prop_assert!(v > -1.0 && v < 0.0, "negative {}", v);
                    }
                }
            }
        }
    }

    #[test]
    fn single_pathway_collapse(c in case(1..=1)) {
        let lp = c.lp();
        let u = lp.values();
        prop_assert!(close(compose_weakest(&lp, &c.target()).unwrap().logits.data(), u, 1e-12));
        prop_assert!(close(strong_inference(&lp).logits.data(), u, 1e-12));
        prop_assert!(close(mean_inference(&lp).logits.data(), u, 1e-12));
        let mut tape = Tape::new();
        let p = tape.leaf(c.tensors().remove(0));
        let bundle = LogitBundle::new(&tape, vec![p]).unwrap();
        let routed = weakroute_loss(&mut tape, &bundle, &c.target(), LossOptions::default()).unwrap();
        let base = average_loss_baseline(&mut tape, &bundle, &c.target()).unwrap();
        prop_assert!((tape.value(routed.loss).data()[0] - tape.value(base).data()[0]).abs() <= 1e-12);
    }

    #[test]
    fn protocol_opposition(c in case(2..=4)) {
        let lp = c.lp();
        let t = pseudo_target(&lp);
        let w = weakness(&lp, &t).unwrap();
        for b in 0..c.batch {
            for i in 0..c.classes {
                prop_assume!(!has_ties(w.row(b, i)));
            }
        }
        let train = compose_weakest(&lp, &t).unwrap().selection.unwrap();
        let strong = strong_inference(&lp).selection.unwrap();
        for (x, y) in train.indices().iter().zip(strong.indices()) {
            prop_assert_ne!(x, y);
        }
    }

    #[test]
    fn every_sample_once_per_epoch(n in 1usize..60, batch in 1usize..17, seed in any::<u64>(), epoch in 0usize..5, shuffle in any::<bool>()) {
        let images = Tensor::zeros(&[n, 1, 1, 1]);
        let split = DatasetSplit::new(images, (0..n).map(|i| i % 2).collect(), 2).unwrap();
        let mut seen: Vec<usize> = batches(&split, batch, seed, epoch, shuffle).unwrap().flat_map(|b| b.indices).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn contingency_matches_enumeration(rows in prop::collection::vec((0usize..3, 0usize..3, 0usize..3), 0..80)) {
        let a: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let b: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let y: Vec<usize> = rows.iter().map(|r| r.2).collect();
        let t = contingency(&a, &b, &y).unwrap();
        let mut want = ContingencyTable::default();
        for k in 0..rows.len() {
            let cell = match (a[k] == y[k], b[k] == y[k]) {
                (true, true) => &mut want.n11,
                (true, false) => &mut want.n10,
                (false, true) => &mut want.n01,
                (false, false) => &mut want.n00,
            };
            *cell += 1;
        }
        prop_assert_eq!(t, want);
        prop_assert_eq!(t.total() as usize, rows.len());
    }

    #[test]
    fn mcnemar_is_symmetric_and_bounded(n01 in 0u64..200, n10 in 0u64..200) {
        let t = ContingencyTable { n00: 3, n01, n10, n11: 9 };
        let (r, s) = (mcnemar(&t), mcnemar(&t.swapped()));
        prop_assert_eq!(r, s);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }
}

#[test]
fn selections_cover_only_declared_pathways() {
    let c = Case {
        batch: 2,
        classes: 3,
        pathways: vec![vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.0], vec![0.0, 2.0, 0.0, -1.0, 0.0, 1.0]],
        labels: vec![0, 2],
    };
    let sel = compose_weakest(&c.lp(), &c.target()).unwrap().selection.unwrap();
    let used: HashSet<usize> = sel.indices().iter().copied().collect();
    assert!(used.iter().all(|&j| j < 2));
}
