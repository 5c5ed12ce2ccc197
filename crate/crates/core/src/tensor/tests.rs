use super::*;
use crate::seed::stream_rng;

type T64 = Tensor<f64>;

fn randt(rows: usize, cols: usize, tag: u64) -> T64 {
    let mut rng = stream_rng(42, "tensor-test", tag);
    Tensor::randn(rows, cols, 1.0, &mut rng)
}

/// Finite-difference check of one op: `loss = sum(build(params))`.
fn check_op(
    names: &[(&str, usize, usize)],
    build: impl Fn(&ParamSet<f64>) -> Result<T64, TensorError>,
) -> f64 {
    let mut params = ParamSet::new();
    for (i, (name, r, c)) in names.iter().enumerate() {
        params.insert(*name, randt(*r, *c, 1000 + i as u64));
    }
    let f = move |p: &ParamSet<f64>| -> Result<T64, TensorError> { Ok(build(p)?.sum()) };
    let report = finite_diff_check(&f, &params, 1e-5).unwrap();
    report.max_rel_err
}

#[test]
fn fd_matmul() {
    let err = check_op(&[("a", 3, 4), ("b", 4, 5)], |p| {
        p.get("a").unwrap().matmul(p.get("b").unwrap())
    });
    assert!(err <= 1e-4, "matmul rel err {err}");
}

#[test]
fn fd_matmul_shared_operand() {
    // x · xᵀ exercises gradient accumulation through both slots.
    let err = check_op(&[("x", 3, 4)], |p| {
        let x = p.get("x").unwrap();
        x.matmul(&x.transpose())
    });
    assert!(err <= 1e-4, "x xᵀ rel err {err}");
}

#[test]
fn fd_transpose() {
    let err = check_op(&[("a", 3, 4), ("b", 3, 5)], |p| {
        p.get("a").unwrap().transpose().matmul(p.get("b").unwrap())
    });
    assert!(err <= 1e-4);
}

#[test]
fn fd_add_mul_scale() {
    let err = check_op(&[("a", 3, 4), ("b", 3, 4)], |p| {
        let a = p.get("a").unwrap();
        let b = p.get("b").unwrap();
        a.add(b)?.mul(a)?.scale(0.7).add(b)
    });
    assert!(err <= 1e-4);
}

#[test]
fn fd_add_bias_mul_bias() {
    let err = check_op(&[("a", 4, 3), ("b", 1, 3), ("g", 1, 3)], |p| {
        p.get("a")
            .unwrap()
            .mul_bias(p.get("g").unwrap())?
            .add_bias(p.get("b").unwrap())
    });
    assert!(err <= 1e-4);
}

#[test]
fn fd_softmax() {
    let err = check_op(&[("a", 3, 5)], |p| {
        // weight rows so the loss is not constant (softmax rows sum to 1)
        let w = Tensor::from_vec(3, 5, (0..15).map(|i| i as f64 * 0.3 - 2.0).collect())?;
        p.get("a").unwrap().softmax_rows().mul(&w)
    });
    assert!(err <= 1e-4, "softmax rel err {err}");
}

#[test]
fn fd_layer_norm() {
    let err = check_op(&[("a", 3, 6)], |p| {
        let w = Tensor::from_vec(3, 6, (0..18).map(|i| (i as f64 * 0.17).sin()).collect())?;
        p.get("a").unwrap().layer_norm(1e-5).mul(&w)
    });
    assert!(err <= 1e-4, "layer_norm rel err {err}");
}

#[test]
fn fd_gelu() {
    let err = check_op(&[("a", 4, 4)], |p| Ok(p.get("a").unwrap().gelu()));
    assert!(err <= 1e-4, "gelu rel err {err}");
}

#[test]
fn fd_embed_lookup() {
    let err = check_op(&[("table", 7, 4)], |p| {
        Tensor::embed_lookup(p.get("table").unwrap(), &[2, 5, 2, 0])
    });
    assert!(err <= 1e-4);
}

#[test]
fn fd_slices_and_concats() {
    let err = check_op(&[("a", 4, 6), ("b", 4, 6)], |p| {
        let a = p.get("a").unwrap();
        let b = p.get("b").unwrap();
        let left = a.slice_cols(0, 3)?;
        let right = b.slice_cols(3, 6)?;
        let cat = Tensor::concat_cols(&[left, right])?;
        let top = cat.slice_rows(0, 2)?;
        let bottom = cat.slice_rows(2, 4)?;
        Tensor::concat_rows(&[bottom, top])
    });
    assert!(err <= 1e-4);
}

#[test]
fn fd_mean_rows() {
    let err = check_op(&[("a", 5, 3)], |p| {
        let w = Tensor::from_vec(1, 3, vec![0.3, -1.1, 2.0])?;
        p.get("a").unwrap().mean_rows(&[0, 2, 3])?.mul(&w)
    });
    assert!(err <= 1e-4);
}

#[test]
fn fd_l2_normalize() {
    let err = check_op(&[("a", 4, 5)], |p| {
        let w = Tensor::from_vec(4, 5, (0..20).map(|i| (i as f64 * 0.23).cos()).collect())?;
        p.get("a").unwrap().l2_normalize_rows().mul(&w)
    });
    assert!(err <= 1e-4, "l2_normalize rel err {err}");
}

#[test]
fn fd_cosine_similarity() {
    let err = check_op(&[("u", 1, 6), ("v", 1, 6)], |p| {
        Tensor::cosine_similarity(p.get("u").unwrap(), p.get("v").unwrap())
    });
    assert!(err <= 1e-4, "cosine rel err {err}");
}

#[test]
fn fd_cross_entropy_rows() {
    let err = check_op(&[("logits", 5, 7)], |p| {
        p.get("logits")
            .unwrap()
            .cross_entropy_rows(&[3, 1, 0, 6, 2], &[0, 2, 4], 3.0)
    });
    assert!(err <= 1e-4, "cross_entropy rel err {err}");
}

#[test]
fn fd_two_layer_mlp() {
    // Random 2-layer MLP: the stated oracle for backward() overall.
    let err = check_op(
        &[("w1", 4, 8), ("b1", 1, 8), ("w2", 8, 3), ("b2", 1, 3), ("x", 2, 4)],
        |p| {
            let h = p
                .get("x")
                .unwrap()
                .matmul(p.get("w1").unwrap())?
                .add_bias(p.get("b1").unwrap())?
                .gelu();
            let out = h.matmul(p.get("w2").unwrap())?.add_bias(p.get("b2").unwrap())?;
            out.softmax_rows().cross_entropy_rows(&[1, 2], &[0, 1], 2.0)
        },
    );
    assert!(err <= 1e-4, "mlp rel err {err}");
}

#[test]
fn backward_sum_gives_ones() {
    let x = randt(3, 4, 1);
    let loss = x.sum();
    loss.backward().unwrap();
    assert!(x.grad().iter().all(|&g| g == 1.0));
}

#[test]
fn backward_dot_gives_two_x() {
    let x = randt(1, 6, 2);
    let loss = x.mul(&x).unwrap().sum();
    loss.backward().unwrap();
    let xv = x.value_vec();
    for (g, v) in x.grad().iter().zip(&xv) {
        assert!((g - 2.0 * v).abs() < 1e-12);
    }
}

#[test]
fn backward_accumulates_across_calls() {
    let x = randt(2, 2, 3);
    let loss = x.sum();
    loss.backward().unwrap();
    loss.backward().unwrap();
    assert!(x.grad().iter().all(|&g| g == 2.0));
}

#[test]
fn backward_rejects_non_scalar() {
    let x = randt(2, 2, 4);
    match x.backward() {
        Err(TensorError::NonScalarLoss { .. }) => {}
        other => panic!("expected NonScalarLoss, got {other:?}"),
    }
}

#[test]
fn softmax_uniform_row() {
    let x: Tensor<f64> = Tensor::zeros(1, 4);
    let y = x.softmax_rows();
    for &v in y.values().iter() {
        assert!((v - 0.25).abs() < 1e-12);
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let x = randt(6, 9, 5).scale(3.0);
    let y = x.softmax_rows();
    let v = y.value_vec();
    for row in v.chunks(9) {
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() <= 1e-6, "row sum {s}");
    }
}

#[test]
fn matmul_identity() {
    let eye = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let a = randt(2, 3, 6);
    let out = eye.matmul(&a).unwrap();
    assert_eq!(out.value_vec(), a.value_vec());
}

#[test]
fn matmul_shape_mismatch() {
    let a = randt(2, 3, 7);
    let b = randt(4, 2, 8);
    assert!(matches!(
        a.matmul(&b),
        Err(TensorError::ShapeMismatch { .. })
    ));
}

#[test]
fn cosine_of_self_is_one() {
    let v = randt(1, 8, 9);
    let c = Tensor::cosine_similarity(&v, &v).unwrap();
    assert!((c.item() - 1.0).abs() < 1e-12);
}

#[test]
fn cosine_of_zero_vector_is_degenerate() {
    let z: Tensor<f64> = Tensor::zeros(1, 4);
    let v = randt(1, 4, 10);
    assert!(matches!(
        Tensor::cosine_similarity(&z, &v),
        Err(TensorError::DegenerateNorm { .. })
    ));
}

#[test]
fn layer_norm_standardizes_rows() {
    let x = randt(5, 16, 11).scale(4.0);
    let y = x.layer_norm(1e-9);
    let v = y.value_vec();
    for row in v.chunks(16) {
        let mean: f64 = row.iter().sum::<f64>() / 16.0;
        let var: f64 = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 16.0;
        assert!(mean.abs() <= 1e-6, "row mean {mean}");
        assert!((var - 1.0).abs() <= 1e-4, "row var {var}");
    }
}

#[test]
fn l2_normalize_unit_norm_and_zero_row() {
    let x = Tensor::from_vec(2, 2, vec![3.0f64, 4.0, 0.0, 0.0]).unwrap();
    let y = x.l2_normalize_rows();
    let v = y.value_vec();
    assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
    assert_eq!(&v[2..], &[0.0, 0.0]);
}

#[test]
fn embed_lookup_rejects_out_of_range() {
    let table = randt(4, 3, 12);
    assert!(matches!(
        Tensor::embed_lookup(&table, &[0, 4]),
        Err(TensorError::IdOutOfRange { id: 4, vocab: 4 })
    ));
}

#[test]
fn cross_entropy_uniform_is_log_v() {
    let logits: Tensor<f64> = Tensor::zeros(2, 50);
    let loss = logits
        .cross_entropy_rows(&[7, 13], &[0, 1], 2.0)
        .unwrap()
        .item();
    assert!((loss - 50f64.ln()).abs() < 1e-9, "loss {loss}");
}

#[test]
fn adam_first_step_is_signed_lr() {
    // With m̂ = g and v̂ = g², the first update is −lr·g/(|g|+ε) ≈ −lr·sign(g).
    let p = Tensor::from_vec(1, 3, vec![1.0f64, -2.0, 0.5]).unwrap();
    let mut params = ParamSet::new();
    params.insert("p", p.clone());
    let loss = p.mul(&Tensor::from_vec(1, 3, vec![3.0, -1.0, 2.0]).unwrap()).unwrap().sum();
    loss.backward().unwrap();
    let mut state = AdamState::new();
    state.step(&params, 0.1, 0.9, 0.999, 1e-8).unwrap();
    let v = p.value_vec();
    assert!((v[0] - (1.0 - 0.1)).abs() < 1e-6);
    assert!((v[1] - (-2.0 + 0.1)).abs() < 1e-6);
    assert!((v[2] - (0.5 - 0.1)).abs() < 1e-6);
}

#[test]
fn adam_zero_grad_is_fixed_point() {
    let p = Tensor::from_vec(1, 2, vec![1.5f64, -0.5]).unwrap();
    let mut params = ParamSet::new();
    params.insert("p", p.clone());
    let mut state = AdamState::new();
    state.step(&params, 0.1, 0.9, 0.999, 1e-8).unwrap();
    assert_eq!(p.value_vec(), vec![1.5, -0.5]);
    assert_eq!(state.step_count(), 1);
}

#[test]
fn adam_descends_quadratic() {
    // f(θ) = θ² from θ=1 with lr 0.1: |θ| strictly decreasing for 10 steps.
    let p = Tensor::from_vec(1, 1, vec![1.0f64]).unwrap();
    let mut params = ParamSet::new();
    params.insert("theta", p.clone());
    let mut state = AdamState::new();
    let mut prev = 1.0f64;
    for _ in 0..10 {
        params.zero_grads();
        let loss = p.mul(&p).unwrap().sum();
        loss.backward().unwrap();
        state.step(&params, 0.1, 0.9, 0.999, 1e-8).unwrap();
        let cur = p.item().abs();
        assert!(cur < prev, "|θ| did not decrease: {cur} vs {prev}");
        prev = cur;
    }
}

#[test]
fn adam_matches_scalar_hand_simulation() {
    let p = Tensor::from_vec(1, 1, vec![1.0f64]).unwrap();
    let mut params = ParamSet::new();
    params.insert("theta", p.clone());
    let mut state = AdamState::new();

    let (beta1, beta2, lr, eps) = (0.9f64, 0.999, 0.1, 1e-8);
    let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 1.0f64);
    for t in 1..=10 {
        params.zero_grads();
        let loss = p.mul(&p).unwrap().sum();
        loss.backward().unwrap();
        state.step(&params, lr, beta1, beta2, eps).unwrap();

        let g = 2.0 * theta;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        let m_hat = m / (1.0 - beta1.powi(t));
        let v_hat = v / (1.0 - beta2.powi(t));
        theta -= lr * m_hat / (v_hat.sqrt() + eps);
        assert!((p.item() - theta).abs() < 1e-12, "step {t}");
    }
}

#[test]
fn finite_diff_sum_of_squares_is_tight() {
    let mut params = ParamSet::new();
    params.insert("x", randt(2, 3, 20));
    let f = |p: &ParamSet<f64>| -> Result<T64, TensorError> {
        let x = p.get("x").unwrap();
        Ok(x.mul(x)?.sum())
    };
    let report = finite_diff_check(&f, &params, 1e-3).unwrap();
    assert!(report.max_rel_err <= 1e-6, "rel err {}", report.max_rel_err);
}

#[test]
fn finite_diff_detects_wrong_gradient() {
    // An op whose backward is deliberately off by 2x.
    fn broken_double<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
        let (r, c) = x.shape();
        let two = F::from_f64(2.0);
        let out = x.values().iter().map(|v| *v * two).collect();
        let xc = x.clone();
        Tensor::op_node(
            r,
            c,
            out,
            vec![x.clone()],
            "broken_double",
            Box::new(move |_, g, sink| {
                // wrong: claims dy/dx = 4
                let ga: Vec<F> = g.iter().map(|gi| *gi * F::from_f64(4.0)).collect();
                sink.add(&xc, &ga);
            }),
        )
    }
    let mut params = ParamSet::new();
    params.insert("x", randt(2, 2, 21));
    let f = |p: &ParamSet<f64>| -> Result<T64, TensorError> {
        Ok(broken_double(p.get("x").unwrap()).sum())
    };
    let report = finite_diff_check(&f, &params, 1e-4).unwrap();
    assert!(report.max_rel_err > 1e-2, "detector missed: {}", report.max_rel_err);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut entries = std::collections::BTreeMap::new();
    let mut rng = stream_rng(3, "ckpt", 0);
    let t: Tensor<f32> = Tensor::randn(4, 5, 0.3, &mut rng);
    entries.insert(
        "embed.tok".to_string(),
        CheckpointEntry {
            shape: (4, 5),
            values: t.value_vec(),
        },
    );
    entries.insert(
        "mlm.bias".to_string(),
        CheckpointEntry {
            shape: (1, 5),
            values: vec![0.0, -1.5, f32::MIN_POSITIVE, 3.25e-8, 1.0],
        },
    );
    save_checkpoint(&path, &entries).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.len(), 2);
    for (name, e) in &entries {
        let l = &loaded[name];
        assert_eq!(l.shape, e.shape);
        let a: Vec<u32> = e.values.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = l.values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "bit mismatch in {name}");
    }
    // save(load(x)) is byte-identical
    let path2 = dir.path().join("model2.ckpt");
    save_checkpoint(&path2, &loaded).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn checkpoint_header_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.ckpt");
    let mut entries = std::collections::BTreeMap::new();
    entries.insert(
        "a".to_string(),
        CheckpointEntry {
            shape: (1, 2),
            values: vec![1.0, 2.0],
        },
    );
    entries.insert(
        "b".to_string(),
        CheckpointEntry {
            shape: (2, 1),
            values: vec![3.0, 4.0],
        },
    );
    save_checkpoint(&path, &entries).unwrap();
    let header = read_header(&path).unwrap();
    assert_eq!(header["a"].offset, 0);
    assert_eq!(header["a"].dtype, "f32");
    assert_eq!(header["b"].offset, 8);
    assert_eq!(header["b"].shape, vec![2, 1]);

    let bytes = std::fs::read(&path).unwrap();
    let hlen = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    assert_eq!(bytes.len(), 8 + hlen + 16);
}

#[test]
fn adam_state_export_import_round_trip() {
    let p = Tensor::from_vec(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
    let mut params = ParamSet::new();
    params.insert("w", p.clone());
    let mut state = AdamState::new();
    for _ in 0..3 {
        params.zero_grads();
        let loss = p.mul(&p).unwrap().sum();
        loss.backward().unwrap();
        state.step(&params, 0.01, 0.9, 0.999, 1e-6).unwrap();
    }
    let rows: Vec<(String, Vec<f32>)> = state
        .export(&params)
        .into_iter()
        .map(|(n, _, v)| (n, v))
        .collect();
    let restored = AdamState::<f32>::import(&rows);
    assert_eq!(restored.step_count(), 3);

    // One more step from each must agree bitwise.
    let p2 = Tensor::from_vec(2, 2, p.value_vec()).unwrap();
    let mut params2 = ParamSet::new();
    params2.insert("w", p2.clone());
    let mut state2 = restored;

    params.zero_grads();
    p.mul(&p).unwrap().sum().backward().unwrap();
    state.step(&params, 0.01, 0.9, 0.999, 1e-6).unwrap();

    params2.zero_grads();
    p2.mul(&p2).unwrap().sum().backward().unwrap();
    state2.step(&params2, 0.01, 0.9, 0.999, 1e-6).unwrap();

    let a: Vec<u32> = p.value_vec().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u32> = p2.value_vec().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}
