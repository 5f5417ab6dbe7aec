use std::time::Instant;

use lga_core::data::{
    decode_box, encode_box, gen_dataset, gen_dataset_with, gen_instance, load_dataset,
    save_dataset, signatures, Dataset, Generator, Instance, TaskConfig,
};
use lga_core::numerics::argmax_first;
use lga_core::parallel::Execution;
use lga_core::rng::{derive_seed, Rng};

/// Inner product of the true block with each signature, then argmax.
fn oracle_label(inst: &Instance, cfg: &TaskConfig, sigs: &[Vec<f64>]) -> usize {
    let cells = cfg.cells();
    let [cy, cx, h, w] = inst.patch_box;
    let (y0, x0) = ((cy - h / 2.0) as usize, (cx - w / 2.0) as usize);
    let f = inst.features.data();
    let scores: Vec<f64> = sigs
        .iter()
        .map(|s| {
            let mut total = 0.0;
            for i in y0..y0 + h as usize {
                for j in x0..x0 + w as usize {
                    let cell = i * cfg.width + j;
                    total += (0..cfg.channels)
                        .map(|c| s[c] * f[c * cells + cell])
                        .sum::<f64>();
                }
            }
            total
        })
        .collect();
    argmax_first(&scores)
}

fn oracle_accuracy(data: &Dataset) -> f64 {
    let sigs = signatures(&data.config);
    let hits = data
        .instances
        .iter()
        .filter(|i| oracle_label(i, &data.config, &sigs) == i.label)
        .count();
    hits as f64 / data.len() as f64
}

fn channel_means(inst: &Instance, cfg: &TaskConfig) -> Vec<f64> {
    inst.features
        .data()
        .chunks(cfg.cells())
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Nearest-centroid accuracy on per-channel global means.
fn global_mean_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let cfg = &train.config;
    let mut centroids = vec![vec![0.0; cfg.channels]; cfg.classes];
    let mut counts = vec![0usize; cfg.classes];
    for inst in &train.instances {
        for (c, m) in centroids[inst.label]
            .iter_mut()
            .zip(channel_means(inst, cfg))
        {
            *c += m;
        }
        counts[inst.label] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let hits = test
        .instances
        .iter()
        .filter(|inst| {
            let m = channel_means(inst, cfg);
            let d: Vec<f64> = centroids
                .iter()
                .map(|c| -c.iter().zip(&m).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .collect();
            argmax_first(&d) == inst.label
        })
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn noise_free_oracle_is_perfect() {
    let cfg = TaskConfig {
        noise: 0.0,
        distractors: 0,
        ..TaskConfig::default()
    };
    assert_eq!(oracle_accuracy(&gen_dataset(3, 2000, &cfg).unwrap()), 1.0);
    // the distractor projects equally on every signature, so it cannot flip the rule
    let with_distractor = TaskConfig {
        noise: 0.0,
        ..TaskConfig::default()
    };
    assert_eq!(
        oracle_accuracy(&gen_dataset(4, 2000, &with_distractor).unwrap()),
        1.0
    );
}

#[test]
fn default_task_is_locally_solvable_but_globally_ambiguous() {
    let cfg = TaskConfig::default();
    for seed in [1u64, 2, 3] {
        let train = gen_dataset(seed, 2000, &cfg).unwrap();
        let test = gen_dataset(derive_seed(seed, 1), 1000, &cfg).unwrap();
        let oracle = oracle_accuracy(&test);
        let global = global_mean_accuracy(&train, &test);
        assert!(
            oracle > 1.0 / cfg.classes as f64,
            "seed {seed}: oracle {oracle}"
        );
        assert!(
            global < oracle,
            "seed {seed}: global {global} vs oracle {oracle}"
        );
    }
}

#[test]
fn patches_stay_inside_the_grid() {
    let cfg = TaskConfig::default();
    let generator = Generator::new(cfg.clone()).unwrap();
    let mut seen = [[false; 6]; 6];
    for i in 0..100_000u64 {
        let mut rng = Rng::seed(derive_seed(77, i));
        let inst = generator.instance(&mut rng, (i % 4) as usize);
        let [cy, cx, h, w] = inst.patch_box;
        assert_eq!((h, w), (2.0, 2.0));
        assert!(cy - h / 2.0 >= 0.0 && cy + h / 2.0 <= 7.0);
        assert!(cx - w / 2.0 >= 0.0 && cx + w / 2.0 <= 7.0);
        assert_eq!(inst.patch_center, (cy, cx));
        seen[(cy - 1.0) as usize][(cx - 1.0) as usize] = true;
    }
    assert!(seen.iter().flatten().all(|&s| s));
}

#[test]
fn label_histograms() {
    let cfg = TaskConfig::default();
    let data = gen_dataset(5, 1000, &cfg).unwrap();
    let mut counts = [0usize; 4];
    data.instances.iter().for_each(|i| counts[i.label] += 1);
    assert_eq!(counts, [250; 4]);

    let mut rng = Rng::seed(6);
    let mut counts = [0usize; 4];
    for _ in 0..1000 {
        counts[gen_instance(&mut rng, &cfg).unwrap().label] += 1;
    }
    for c in counts {
        assert!((c as f64 / 1000.0 - 0.25).abs() <= 0.05, "{counts:?}");
    }

    let four = gen_dataset(9, 4, &cfg).unwrap();
    let mut labels: Vec<usize> = four.instances.iter().map(|i| i.label).collect();
    labels.sort_unstable();
    assert_eq!(labels, vec![0, 1, 2, 3]);
}

#[test]
fn generation_is_deterministic_and_fast() {
    let cfg = TaskConfig::default();
    let t = Instant::now();
    let a = gen_dataset_with(Execution::Parallel, 12, 2000, &cfg).unwrap();
    assert!(t.elapsed().as_secs_f64() < 5.0);
    let b = gen_dataset_with(Execution::Sequential, 12, 2000, &cfg).unwrap();
    assert!(a.bits_eq(&b));
    let c = gen_dataset(13, 2000, &cfg).unwrap();
    assert!(!a.bits_eq(&c));
}

#[test]
fn box_encoding() {
    let cfg = TaskConfig::default();
    assert_eq!(encode_box([3.5, 3.5, 7.0, 7.0], &cfg).unwrap(), [0.0; 4]);
    let t = encode_box([1.5, 5.5, 2.0, 2.0], &cfg).unwrap();
    let want = [
        -2.0 / 7.0,
        2.0 / 7.0,
        (2.0f64 / 7.0).ln(),
        (2.0f64 / 7.0).ln(),
    ];
    for (a, b) in t.iter().zip(&want) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((t[0] + 0.285714).abs() < 1e-6);
    assert!(encode_box([1.0, 1.0, 0.0, 2.0], &cfg).is_err());

    let mut rng = Rng::seed(1);
    for _ in 0..100 {
        let b = [
            rng.uniform_in(0.0, 7.0),
            rng.uniform_in(0.0, 7.0),
            rng.uniform_in(0.1, 7.0),
            rng.uniform_in(0.1, 7.0),
        ];
        let back = decode_box(encode_box(b, &cfg).unwrap(), &cfg);
        for (x, y) in b.iter().zip(&back) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.lgaf");
    let data = gen_dataset(2, 50, &TaskConfig::default()).unwrap();
    save_dataset(&data, &path).unwrap();
    let first = std::fs::read(&path).unwrap();
    assert!(load_dataset(&path).unwrap().bits_eq(&data));
    save_dataset(&gen_dataset(2, 50, &TaskConfig::default()).unwrap(), &path).unwrap();
    assert_eq!(first, std::fs::read(&path).unwrap());

    std::fs::write(&path, &first[..first.len() / 2]).unwrap();
    assert_eq!(
        load_dataset(&path).unwrap_err().to_string(),
        "truncated payload"
    );
    let mut bad = first.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert_eq!(load_dataset(&path).unwrap_err().to_string(), "bad magic");
}
