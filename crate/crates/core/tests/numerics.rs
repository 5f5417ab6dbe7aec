use lga_core::gradsuite;
use lga_core::numerics::{argmax_first, cross_entropy, softmax, OpKind, Tape, Tensor};
use proptest::prelude::*;

#[test]
fn every_op_passes_at_twenty_points() {
    let mut worst = vec![0.0f64; OpKind::ALL.len() + 1];
    for seed in 0..20 {
        let rows = gradsuite::run(seed, 1e-6).unwrap();
        assert_eq!(rows.len(), worst.len());
        for (w, row) in worst.iter_mut().zip(&rows) {
            assert!(
                row.report.passed(),
                "seed {seed}, {}: {:e}",
                row.name,
                row.report.max_rel_error
            );
            *w = w.max(row.report.max_rel_error);
        }
    }
    assert!(worst.iter().all(|&w| w <= 1e-6));
}

#[test]
fn suite_names_each_op_once() {
    let rows = gradsuite::run(7, 1e-6).unwrap();
    let mut names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), OpKind::ALL.len() + 1);
    for k in OpKind::ALL {
        assert!(names.contains(&k.name()));
        assert_eq!(k.name().parse::<OpKind>().unwrap(), k);
    }
}

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

proptest! {
    #[test]
    fn broadcast_add_matches_loops(a in vec_strategy(6), b in vec_strategy(3)) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[2, 3], a.clone()).unwrap());
        let y = t.constant(Tensor::new(&[3], b.clone()).unwrap());
        let z = t.add(x, y).unwrap();
        let out = t.value(z).data();
        for i in 0..2 {
            for j in 0..3 {
                prop_assert_eq!(out[i * 3 + j], a[i * 3 + j] + b[j]);
            }
        }
    }

    #[test]
    fn matmul_matches_loops(a in vec_strategy(6), b in vec_strategy(8)) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[3, 2], a.clone()).unwrap());
        let y = t.constant(Tensor::new(&[2, 4], b.clone()).unwrap());
        let z = t.matmul(x, y).unwrap();
        let out = t.value(z).data();
        for i in 0..3 {
            for j in 0..4 {
                let want = a[i * 2] * b[j] + a[i * 2 + 1] * b[4 + j];
                prop_assert!((out[i * 4 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_is_a_distribution(z in vec_strategy(5), label in 0usize..5) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ce = cross_entropy(&z, label);
        prop_assert!(ce >= 0.0);
        prop_assert!((ce + p[label].ln()).abs() < 1e-9);
        let top = argmax_first(&z);
        prop_assert!(z.iter().all(|&v| v <= z[top]));
    }

    #[test]
    fn maximum_commutes(a in vec_strategy(4), b in vec_strategy(4)) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[4], a).unwrap());
        let y = t.constant(Tensor::new(&[4], b).unwrap());
        let m1 = t.maximum(&[x, y]).unwrap();
        let m2 = t.maximum(&[y, x]).unwrap();
        prop_assert!(t.value(m1).bits_eq(t.value(m2)));
    }

    #[test]
    fn backward_is_deterministic(a in vec_strategy(6)) {
        let run = || {
            let mut t = Tape::new();
            let p = t.param(Tensor::new(&[6], a.clone()).unwrap());
            let e = t.tanh(p).unwrap();
            let s = t.square(e).unwrap();
            let r = t.sum(s).unwrap();
            t.backward(r).unwrap().take(p).unwrap()
        };
        prop_assert!(run().bits_eq(&run()));
    }
}
