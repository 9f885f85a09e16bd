use super::*;
use crate::rng::SaaRng;

fn t(data: &[f64], shape: &[usize]) -> Tensor {
    Tensor::new(data.to_vec(), shape).unwrap()
}

fn p(data: &[f64], shape: &[usize]) -> Tensor {
    Tensor::param(data.to_vec(), shape).unwrap()
}

#[test]
fn matmul_identity() {
    let eye = t(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
    let a = t(&[1.5, -2.0, 3.0, 0.5, 7.0, -1.0, 2.0, 2.0, 9.0], &[3, 3]);
    let c = eye.matmul(&a).unwrap();
    assert_eq!(c.to_vec(), a.to_vec());
}

#[test]
fn matmul_shape_error_names_op() {
    let a = t(&[0.0; 6], &[2, 3]);
    let b = t(&[0.0; 4], &[2, 2]);
    let err = a.matmul(&b).unwrap_err().to_string();
    assert!(err.contains("matmul"), "{}", err);
}

#[test]
fn softmax_uniform() {
    let x = t(&[3.0, 3.0, 3.0, 3.0], &[1, 4]);
    let y = x.softmax_rows(None).unwrap();
    for v in y.data().iter() {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn softmax_rows_normalized_with_bias() {
    let x = t(&[0.3, -1.2, 2.0, 0.0, 5.0, -5.0], &[2, 3]);
    let bias = [0.0, -0.7, -1e9, 0.1, 0.0, 0.0];
    let y = x.softmax_rows(Some(&bias)).unwrap();
    let d = y.data();
    for i in 0..2 {
        let s: f64 = d[i * 3..(i + 1) * 3].iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(d[i * 3..(i + 1) * 3].iter().all(|v| *v >= 0.0));
    }
    // -1e9 bias suppresses the entry below double resolution
    assert!(d[2] < 1e-300);
}

#[test]
fn layer_norm_constant_row_is_shift() {
    let x = t(&[5.0, 5.0, 5.0, 5.0], &[1, 4]);
    let scale = t(&[1.0; 4], &[4]);
    let shift = t(&[0.0; 4], &[4]);
    let y = x.layer_norm_rows(&scale, &shift).unwrap();
    for v in y.data().iter() {
        assert_eq!(*v, 0.0);
    }
}

#[test]
fn backward_sum_of_squares() {
    let x = p(&[1.0, 2.0, 3.0], &[3]);
    let x2 = x.reshape(&[1, 3]).unwrap();
    let loss = x2.mul(&x2).unwrap().sum();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
}

#[test]
fn backward_relu() {
    let x = p(&[-1.0, 2.0], &[2]);
    let loss = x.relu().sum();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0, 1.0]);
}

#[test]
fn backward_logsumexp_symmetry() {
    let x = p(&[0.0, 0.0], &[2]);
    let loss = x.logsumexp().unwrap();
    loss.backward().unwrap();
    let g = x.grad().unwrap();
    assert!((g[0] - 0.5).abs() < 1e-15);
    assert!((g[1] - 0.5).abs() < 1e-15);
}

#[test]
fn backward_twice_doubles_grads() {
    let x = p(&[1.0, -2.0], &[2]);
    let loss = x.mul(&x).unwrap().sum();
    loss.backward().unwrap();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0, -8.0]);
}

#[test]
fn backward_requires_scalar() {
    let x = p(&[1.0, 2.0], &[2]);
    let y = x.relu();
    assert!(y.backward().is_err());
}

#[test]
fn grad_of_offpath_tensor_stays_empty() {
    let x = p(&[1.0], &[1]);
    let unused = p(&[9.0], &[1]);
    let loss = x.sum();
    loss.backward().unwrap();
    assert!(unused.grad().is_none());
    assert!(x.grad().is_some());
}

#[test]
fn logsumexp_matches_naive_and_stays_finite() {
    let vals = [-20.0, 3.5, 19.0, -7.25];
    let x = t(&vals, &[4]);
    let lse = x.logsumexp().unwrap().item();
    let naive = vals.iter().map(|v| v.exp()).sum::<f64>().ln();
    assert!((lse - naive).abs() < 1e-12);

    let masked = t(&[-1e9, 0.0, -1e9], &[3]);
    let v = masked.logsumexp().unwrap().item();
    assert!(v.is_finite());
    assert!((v - 0.0).abs() < 1e-12);
}

#[test]
fn logaddexp_scalars() {
    let a = Tensor::scalar((0.3f64).ln());
    let b = Tensor::scalar((0.7f64).ln());
    let s = Tensor::logaddexp(&a, &b).unwrap();
    assert!(s.item().abs() < 1e-12);
}

#[test]
fn dropout_eval_is_identity_train_preserves_mean() {
    let mut rng = SaaRng::from_seed(7);
    let x = t(&[2.0; 100_000], &[100_000]);
    let e = x.dropout(0.3, false, &mut rng).unwrap();
    assert_eq!(e.to_vec(), x.to_vec());

    let y = x.dropout(0.3, true, &mut rng).unwrap();
    let mean = y.data().iter().sum::<f64>() / 100_000.0;
    assert!((mean - 2.0).abs() / 2.0 < 0.01, "mean {}", mean);
}

#[test]
fn grad_check_quadratic() {
    let x = p(&[1.0, -2.0, 0.5], &[3]);
    let report = grad_check(&|x: &Tensor| Ok(x.mul(x)?.sum()), &x, 1e-4).unwrap();
    assert!(report.max_rel_err < 1e-6, "{}", report);
}

#[test]
fn grad_check_composite_primitives() {
    // exercise matmul, add_row, relu, tanh, sigmoid, softmax, layer norm,
    // concat, rows, transpose in one composite loss
    let mut rng = SaaRng::from_seed(11);
    let x = Tensor::param((0..12).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[3, 4]).unwrap();
    let w = Tensor::param((0..8).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[4, 2]).unwrap();
    let b = Tensor::param(vec![0.1, -0.2], &[2]).unwrap();
    let scale = Tensor::param(vec![1.0, 1.1, 0.9, 1.2], &[4]).unwrap();
    let shift = Tensor::param(vec![0.0, 0.1, -0.1, 0.2], &[4]).unwrap();
    let xc = x.clone();
    let wc = w.clone();
    let bc = b.clone();
    let sc = scale.clone();
    let hc = shift.clone();
    let f = move || {
        let xn = xc.layer_norm_rows(&sc, &hc)?;
        let y = xn.matmul(&wc)?.add_row(&bc)?;
        let a = y.relu().add(&y.tanh_t())?.add(&y.sigmoid())?;
        let sm = a.softmax_rows(None)?;
        let cat = Tensor::concat_cols(&[a.clone(), sm])?;
        let top = cat.rows(0, 2)?.transpose()?;
        Ok(top.mul(&top)?.sum())
    };
    let params = [
        ("x", x),
        ("w", w),
        ("b", b),
        ("scale", scale),
        ("shift", shift),
    ];
    let report = grad_check_params(&f, &params, 1e-4).unwrap();
    assert!(report.max_rel_err < 1e-4, "{}", report);
}

#[test]
fn grad_check_conv_pool_embed() {
    let mut rng = SaaRng::from_seed(3);
    let x = Tensor::param((0..40).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[1, 8, 5]).unwrap();
    let w = Tensor::param((0..18).map(|_| rng.uniform(-0.5, 0.5)).collect(), &[2, 1, 3, 3]).unwrap();
    let b = Tensor::param(vec![0.05, -0.05], &[2]).unwrap();
    let table = Tensor::param((0..12).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[3, 4]).unwrap();
    let (xc, wc, bc, tc) = (x.clone(), w.clone(), b.clone(), table.clone());
    let f = move || {
        let c = xc.conv2d(&wc, &bc, (2, 1))?;
        let r = c.chw_to_rows()?;
        let pooled = r.max_pool_rows(2)?;
        let emb = Tensor::embedding(&tc, &[0, 2, 1])?;
        let lp = pooled.rows(0, 1)?.log_softmax_rows()?;
        let nll = lp.nll_gather(&[3])?;
        Ok(pooled.sum().add(&emb.mul(&emb)?.sum())?.add(&nll)?.sum())
    };
    let params = [("x", x), ("w", w), ("b", b), ("table", table)];
    let report = grad_check_params(&f, &params, 1e-4).unwrap();
    assert!(report.max_rel_err < 1e-4, "{}", report);
}

#[test]
fn detach_blocks_gradient() {
    let x = p(&[2.0], &[1]);
    let d = x.reshape(&[1, 1]).unwrap().detach();
    let loss = d.mul(&d).unwrap().sum();
    loss.backward().unwrap();
    assert!(x.grad().is_none());
}

#[test]
fn checkpoint_roundtrip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let a = p(&[1.0, 2.5, -3.125, 1e-300], &[2, 2]);
    let b = p(&[0.1; 5], &[5]);
    let named = vec![("enc.a".to_string(), a.clone()), ("dec.b".to_string(), b.clone())];
    save_checkpoint(&path, &named).unwrap();

    let a2 = p(&[0.0; 4], &[2, 2]);
    let b2 = p(&[0.0; 5], &[5]);
    let named2 = vec![("enc.a".to_string(), a2.clone()), ("dec.b".to_string(), b2.clone())];
    load_into(&path, &named2).unwrap();
    assert_eq!(a.to_vec(), a2.to_vec());
    assert_eq!(b.to_vec(), b2.to_vec());

    // shape mismatch must fail
    let bad = vec![("enc.a".to_string(), p(&[0.0; 6], &[2, 3]))];
    assert!(load_into(&path, &bad).is_err());

    // missing tensor must fail
    let missing = vec![("enc.zzz".to_string(), p(&[0.0; 4], &[2, 2]))];
    assert!(load_into(&path, &missing).is_err());
}
