use super::*;

fn fixture_small() -> SynthTaskConfig {
    let mut cfg = SynthTaskConfig::fixture();
    cfg.seed = 11;
    cfg
}

#[test]
fn generation_respects_length_ranges() {
    let task = SynthTask::new(fixture_small()).unwrap();
    let utts = task.generate(50, 1, "tr");
    for u in &utts {
        let n = u.target.len();
        assert!((5..=12).contains(&n), "{}: N={}", u.id, n);
        let t = u.features.shape()[0];
        assert!(t >= 6 * n && t <= 12 * n, "{}: T={} N={}", u.id, t, n);
        assert_eq!(u.features.shape()[1], 20);
        assert!(u.target.iter().all(|&l| l < 10));
    }
    // ids are unique and ordered
    assert_eq!(utts[0].id, "tr00000");
    assert_eq!(utts[49].id, "tr00049");
}

#[test]
fn same_seed_is_bit_identical() {
    let task = SynthTask::new(fixture_small()).unwrap();
    let a = task.generate(10, 3, "x");
    let b = task.generate(10, 3, "x");
    for (ua, ub) in a.iter().zip(&b) {
        assert_eq!(ua.target, ub.target);
        assert_eq!(ua.features.to_vec(), ub.features.to_vec());
    }
    let c = task.generate(10, 4, "x");
    assert_ne!(a[0].features.to_vec(), c[0].features.to_vec());
}

#[test]
fn noiseless_frames_carry_exact_patterns() {
    let mut cfg = fixture_small();
    cfg.noise_std = 0.0;
    let task = SynthTask::new(cfg).unwrap();
    let u = &task.generate(1, 5, "u")[0];
    let d = u.features.to_vec();
    let f = 20;
    // every frame equals some target label's pattern exactly; frames appear
    // in target order as contiguous runs
    let mut label_idx = 0;
    for t in 0..u.features.shape()[0] {
        let row = &d[t * f..(t + 1) * f];
        // repeated labels merge into one indistinguishable run, so advance
        // past every label whose pattern does not match
        while row != task.pattern(u.target[label_idx]) {
            label_idx += 1;
            assert!(label_idx < u.target.len(), "frame {} matches no pattern run", t);
        }
    }
}

#[test]
fn normalization_zeroes_constant_dims_and_standardizes() {
    // dim 0: constant 3.0 (zero variance); dim 1: alternating +/-2
    let utts = vec![Utterance {
        id: "a".into(),
        features: Tensor::new(vec![3.0, 2.0, 3.0, -2.0, 3.0, 2.0, 3.0, -2.0], &[4, 2]).unwrap(),
        target: vec![0],
    }];
    let stats = FeatureStats::fit(&utts).unwrap();
    assert_eq!(stats.mean, vec![3.0, 0.0]);
    assert_eq!(stats.std, vec![1.0, 2.0]); // zero-variance dim keeps scale 1
    let out = stats.apply(&utts[0].features).unwrap().to_vec();
    assert_eq!(out, vec![0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0]);
}

#[test]
fn normalization_statistics_are_accurate_on_gaussian_data() {
    let mut rng = SaaRng::from_seed(2);
    let t = 5000;
    let f = 20; // 1e5 frames total
    let data: Vec<f64> = (0..t * f).map(|_| 1.5 + 0.5 * rng.normal(1.0)).collect();
    let utts = vec![Utterance {
        id: "g".into(),
        features: Tensor::new(data, &[t, f]).unwrap(),
        target: vec![0],
    }];
    let stats = FeatureStats::fit(&utts).unwrap();
    for j in 0..f {
        assert!((stats.mean[j] - 1.5).abs() < 0.03, "mean[{}] = {}", j, stats.mean[j]);
        assert!((stats.std[j] - 0.5).abs() < 0.01, "std[{}] = {}", j, stats.std[j]);
    }
    // normalized output is (0,1) within 2%
    let out = stats.apply(&utts[0].features).unwrap();
    let d = out.data();
    let mean: f64 = d.iter().sum::<f64>() / d.len() as f64;
    let var: f64 = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d.len() as f64;
    assert!(mean.abs() < 0.02);
    assert!((var.sqrt() - 1.0).abs() < 0.02);
}

#[test]
fn stats_roundtrip_through_named_tensors() {
    let stats = FeatureStats { mean: vec![1.0, -2.0], std: vec![0.5, 3.0] };
    let named = stats.to_named_tensors();
    let map: HashMap<String, (Vec<usize>, Vec<f64>)> = named
        .into_iter()
        .map(|(n, t)| (n, (t.shape().to_vec(), t.to_vec())))
        .collect();
    assert_eq!(FeatureStats::from_loaded(&map).unwrap(), stats);
    assert!(FeatureStats::from_loaded(&HashMap::new()).is_err());
}

#[test]
fn batch_pads_and_slices_back_exactly() {
    let task = SynthTask::new(fixture_small()).unwrap();
    let utts = task.generate(3, 9, "b");
    let refs: Vec<&Utterance> = utts.iter().collect();
    let batch = Batch::new(&refs).unwrap();
    let t_max = utts.iter().map(|u| u.features.shape()[0]).max().unwrap();
    for (i, u) in utts.iter().enumerate() {
        assert_eq!(batch.features[i].shape(), &[t_max, 20]);
        assert_eq!(batch.lens[i], u.features.shape()[0]);
        assert_eq!(batch.item_features(i).unwrap().to_vec(), u.features.to_vec());
        // mask marks exactly the real frames; padded rows are zero
        let m = &batch.mask[i];
        assert_eq!(m.iter().filter(|&&x| x).count(), batch.lens[i]);
        let d = batch.features[i].to_vec();
        for t in batch.lens[i]..t_max {
            assert!(d[t * 20..(t + 1) * 20].iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn batch_indices_cover_everything_once() {
    let mut rng = SaaRng::from_seed(3);
    for (n, bs) in [(10, 3), (7, 7), (5, 1), (4, 9)] {
        for shuffled in [false, true] {
            let batches = if shuffled {
                batch_indices(n, bs, Some(&mut rng))
            } else {
                batch_indices(n, bs, None)
            };
            let mut seen: Vec<usize> = batches.concat();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            assert!(batches.iter().all(|b| b.len() <= bs));
        }
    }
}

#[test]
fn dataset_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let task = SynthTask::new(fixture_small()).unwrap();
    let utts = task.generate(4, 13, "rt");
    let manifest = write_dataset(dir.path(), "train", &utts).unwrap();
    let loaded = load_dataset(&manifest).unwrap();
    assert_eq!(loaded.len(), 4);
    for (a, b) in utts.iter().zip(&loaded) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.target, b.target);
        assert_eq!(a.features.shape(), b.features.shape());
        assert_eq!(a.features.to_vec(), b.features.to_vec());
    }
}

#[test]
fn corrupt_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.feat");
    fs::write(&bad, b"NOPE").unwrap();
    assert!(matches!(read_features(&bad), Err(SaaError::Data(_)) | Err(SaaError::Io(_))));

    let manifest = dir.path().join("m.jsonl");
    fs::write(&manifest, "{\"id\": \"x\"}\n").unwrap();
    assert!(load_dataset(&manifest).is_err());

    let empty = dir.path().join("e.jsonl");
    fs::write(&empty, "\n").unwrap();
    assert!(matches!(load_dataset(&empty), Err(SaaError::Data(_))));
}

#[test]
fn label_corpus_roundtrip_and_vocab_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("text.txt");
    let seqs = vec![vec![0, 3, 2], vec![1], vec![4, 4]];
    write_label_corpus(&path, &seqs).unwrap();
    assert_eq!(read_label_corpus(&path, 5).unwrap(), seqs);
    assert!(matches!(read_label_corpus(&path, 4), Err(SaaError::Data(_))));
}
