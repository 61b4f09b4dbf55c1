//! Operation-level tests. Expected values for the non-trivial cases are
//! produced by independent oracles: explicit summation, finite-difference
//! Jacobians and direct moment computation.

use super::*;
use crate::rngstream::{standard_normal_at, stream};

fn randn(seed: u64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| standard_normal_at(seed, stream::X_NOISE, i as i64, 0))
        .collect()
}

fn tape_for(store: &ParameterStore) -> Tape<'_> {
    Tape::new(store)
}

// ── conv1d_offcentre ───────────────────────────────────────────────

#[test]
fn conv_zero_kernel_gives_zero_output() {
    let store = ParameterStore::new();
    let mut tape = tape_for(&store);
    let input = tape.constant(Tensor::matrix(5, 2, randn(1, 10)).unwrap());
    let kernel = tape.constant(Tensor::new(vec![3, 2, 4], vec![0.0; 24]).unwrap());
    let out = tape.conv1d_offcentre(input, kernel, 0.0).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    assert_eq!(tape.value(out).shape(), &[5, 4]);
}

#[test]
fn conv_shift_by_one_identity() {
    let store = ParameterStore::new();
    let mut tape = tape_for(&store);
    let xs = randn(2, 6);
    let input = tape.constant(Tensor::matrix(6, 1, xs.clone()).unwrap());
    // ℓ=1 kernel mapping the single channel to itself.
    let kernel = tape.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
    let out = tape.conv1d_offcentre(input, kernel, 0.0).unwrap();
    let o = tape.value(out).data();
    assert_eq!(o[0], 0.0); // pad row
    for i in 1..6 {
        assert_eq!(o[i], xs[i - 1]);
    }
}

#[test]
fn conv_pad_value_fills_leading_rows() {
    let store = ParameterStore::new();
    let mut tape = tape_for(&store);
    let input = tape.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
    let kernel = tape.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
    let out = tape.conv1d_offcentre(input, kernel, 7.0).unwrap();
    assert_eq!(tape.value(out).data()[0], 7.0);
    assert_eq!(tape.value(out).data()[1], 1.0);
}

#[test]
fn conv_matches_explicit_triple_sum() {
    // Oracle: output row i = Σ_{k=1..ℓ} Σ_c input[i-k, c] · kernel[k, c, ·].
    let (len, c_in, ell, c_out) = (8, 2, 3, 3);
    let input = randn(3, len * c_in);
    let kernel = randn(4, ell * c_in * c_out);
    let store = ParameterStore::new();
    let mut tape = tape_for(&store);
    let iv = tape.constant(Tensor::matrix(len, c_in, input.clone()).unwrap());
    let kv = tape.constant(Tensor::new(vec![ell, c_in, c_out], kernel.clone()).unwrap());
    let out = tape.conv1d_offcentre(iv, kv, 0.0).unwrap();
    let i = 5;
    for o in 0..c_out {
        let mut expect = 0.0;
        for k in 1..=ell {
            for c in 0..c_in {
                expect += input[(i - k) * c_in + c] * kernel[((k - 1) * c_in + c) * c_out + o];
            }
        }
        let got = tape.value(out).data()[i * c_out + o];
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let store = ParameterStore::new();
    let mut tape = tape_for(&store);
    let input = tape.constant(Tensor::matrix(4, 2, vec![0.0; 8]).unwrap());
    let kernel = tape.constant(Tensor::new(vec![2, 3, 1], vec![0.0; 6]).unwrap());
    assert!(tape.conv1d_offcentre(input, kernel, 0.0).is_err());
}

#[test]
fn conv_causality_jacobian_sparsity() {
    // ∂out[i]/∂in[j] = 0 whenever j >= i or j < i - ℓ, checked by finite
    // differences on random instances.
    for seed in 0..4u64 {
        let (len, c_in, ell) = (7 + seed as usize % 3, 2, 1 + seed as usize % 3);
        let kernel = Tensor::new(vec![ell, c_in, 2], randn(seed + 10, ell * c_in * 2)).unwrap();
        let base = randn(seed + 50, len * c_in);
        let eval = |x: &[f64]| -> Vec<f64> {
            let store = ParameterStore::new();
            let mut tape = tape_for(&store);
            let iv = tape.constant(Tensor::matrix(len, c_in, x.to_vec()).unwrap());
            let kv = tape.constant(kernel.clone());
            let out = tape.conv1d_offcentre(iv, kv, 0.0).unwrap();
            tape.value(out).data().to_vec()
        };
        let h = 1e-6;
        for j in 0..len {
            for c in 0..c_in {
                let mut plus = base.clone();
                plus[j * c_in + c] += h;
                let mut minus = base.clone();
                minus[j * c_in + c] -= h;
                let (fp, fm) = (eval(&plus), eval(&minus));
                for i in 0..len {
                    let sensitive = (0..2).any(|o| {
                        ((fp[i * 2 + o] - fm[i * 2 + o]) / (2.0 * h)).abs() > 1e-8
                    });
                    let allowed = j < i && j + ell >= i;
                    assert!(
                        !sensitive || allowed,
                        "out row {i} depends on in row {j} (ell={ell})"
                    );
                }
            }
        }
    }
}

#[test]
fn conv_shift_equivariance() {
    // Shifting the input by s shifts the output by s for rows >= ℓ + s.
    let (len, c_in, ell, s) = (10, 2, 3, 2);
    let xs = randn(9, len * c_in);
    let kernel = Tensor::new(vec![ell, c_in, 2], randn(11, ell * c_in * 2)).unwrap();
    let run = |x: Vec<f64>, rows: usize| {
        let store = ParameterStore::new();
        let mut tape = tape_for(&store);
        let iv = tape.constant(Tensor::matrix(rows, c_in, x).unwrap());
        let kv = tape.constant(kernel.clone());
        let out = tape.conv1d_offcentre(iv, kv, 0.0).unwrap();
        tape.value(out).data().to_vec()
    };
    let plain = run(xs.clone(), len);
    let mut shifted = vec![0.0; s * c_in];
    shifted.extend_from_slice(&xs);
    let shifted_out = run(shifted, len + s);
    for i in (ell + s)..(len + s) {
        for o in 0..2 {
            let a = shifted_out[i * 2 + o];
            let b = plain[(i - s) * 2 + o];
            assert!((a - b).abs() < 1e-14);
        }
    }
}

// ── dense ──────────────────────────────────────────────────────────

#[test]
fn dense_identity_weights() {
    let store = ParameterStore::new();
    let mut tape = tape_for(&store);
    let xs = randn(20, 12);
    let input = tape.constant(Tensor::matrix(4, 3, xs.clone()).unwrap());
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let w = tape.constant(Tensor::matrix(3, 3, eye).unwrap());
    let b = tape.constant(Tensor::vector(vec![0.0; 3]));
    let out = tape.dense(input, w, Some(b)).unwrap();
    assert_eq!(tape.value(out).data(), xs.as_slice());
}

#[test]
fn dense_zero_input_gives_bias() {
    let store = ParameterStore::new();
    let mut tape = tape_for(&store);
    let input = tape.constant(Tensor::matrix(5, 2, vec![0.0; 10]).unwrap());
    let w = tape.constant(Tensor::matrix(2, 3, randn(21, 6)).unwrap());
    let b = tape.constant(Tensor::vector(vec![1.5, -2.0, 0.25]));
    let out = tape.dense(input, w, Some(b)).unwrap();
    for r in 0..5 {
        assert_eq!(&tape.value(out).data()[r * 3..r * 3 + 3], &[1.5, -2.0, 0.25]);
    }
}

#[test]
fn dense_matches_explicit_matvec() {
    let xs = randn(22, 3);
    let ws = randn(23, 12);
    let store = ParameterStore::new();
    let mut tape = tape_for(&store);
    let input = tape.constant(Tensor::vector(xs.clone()));
    let w = tape.constant(Tensor::matrix(3, 4, ws.clone()).unwrap());
    let out = tape.dense(input, w, None).unwrap();
    for o in 0..4 {
        let expect: f64 = (0..3).map(|c| xs[c] * ws[c * 4 + o]).sum();
        assert!((tape.value(out).data()[o] - expect).abs() < 1e-12);
    }
}

#[test]
fn dense_rejects_shape_mismatch() {
    let store = ParameterStore::new();
    let mut tape = tape_for(&store);
    let input = tape.constant(Tensor::vector(vec![0.0; 3]));
    let w = tape.constant(Tensor::matrix(4, 2, vec![0.0; 8]).unwrap());
    assert!(tape.dense(input, w, None).is_err());
}

// ── masked_dense ───────────────────────────────────────────────────

/// Strict positional mask: entry (j, i) allows input position j to feed
/// output position i only when j < i (0-based).
fn strict_mask(p: usize) -> Tensor {
    let mut m = vec![0.0; p * p];
    for j in 0..p {
        for i in 0..p {
            if j < i {
                m[j * p + i] = 1.0;
            }
        }
    }
    Tensor::matrix(p, p, m).unwrap()
}

#[test]
fn masked_dense_strict_mask_blocks_later_positions() {
    let p = 3;
    let mask = strict_mask(p);
    let w = Tensor::matrix(p, p, randn(30, p * p)).unwrap();
    let b = Tensor::vector(randn(31, p));
    let run = |x: Vec<f64>| {
        let store = ParameterStore::new();
        let mut tape = tape_for(&store);
        let iv = tape.constant(Tensor::vector(x));
        let wv = tape.constant(w.clone());
        let bv = tape.constant(b.clone());
        let out = tape.masked_dense(iv, wv, bv, &mask).unwrap();
        tape.value(out).data().to_vec()
    };
    let base = vec![0.4, -1.1, 0.7];
    let mut bumped = base.clone();
    bumped[2] += 10.0; // perturb input position 3
    let (a, b2) = (run(base), run(bumped));
    // Outputs for positions 1..3 are unchanged.
    assert_eq!(a[0], b2[0]);
    assert_eq!(a[1], b2[1]);
    assert_eq!(a[2], b2[2]);
}

#[test]
fn masked_dense_zero_mask_returns_bias() {
    let p = 4;
    let mask = Tensor::matrix(p, p, vec![0.0; p * p]).unwrap();
    let store = ParameterStore::new();
    let mut tape = tape_for(&store);
    let iv = tape.constant(Tensor::vector(randn(33, p)));
    let wv = tape.constant(Tensor::matrix(p, p, randn(34, p * p)).unwrap());
    let bias = randn(35, p);
    let bv = tape.constant(Tensor::vector(bias.clone()));
    let out = tape.masked_dense(iv, wv, bv, &mask).unwrap();
    assert_eq!(tape.value(out).data(), bias.as_slice());
}

#[test]
fn masked_dense_rejects_non_binary_mask() {
    let store = ParameterStore::new();
    let mut tape = tape_for(&store);
    let iv = tape.constant(Tensor::vector(vec![0.0; 2]));
    let wv = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
    let bv = tape.constant(Tensor::vector(vec![0.0; 2]));
    let mask = Tensor::matrix(2, 2, vec![0.0, 0.5, 1.0, 0.0]).unwrap();
    assert!(tape.masked_dense(iv, wv, bv, &mask).is_err());
}

#[test]
fn masked_net_jacobian_sparsity_matches_mask_product() {
    // Two-layer masked net with degree-based masks; the finite-difference
    // Jacobian must be zero exactly where the composed mask product is zero.
    let p = 4;
    let hidden = 6;
    let deg_h: Vec<usize> = (0..hidden).map(|u| 1 + u % (p - 1)).collect();
    let mut m1 = vec![0.0; p * hidden]; // input degree j+1 feeds hidden of degree >= j+1
    for j in 0..p {
        for (u, &dh) in deg_h.iter().enumerate() {
            if dh >= j + 1 {
                m1[j * hidden + u] = 1.0;
            }
        }
    }
    let mut m2 = vec![0.0; hidden * p]; // hidden degree < output position (strict)
    for (u, &dh) in deg_h.iter().enumerate() {
        for i in 0..p {
            if dh < i + 1 {
                m2[u * p + i] = 1.0;
            }
        }
    }
    let mask1 = Tensor::matrix(p, hidden, m1.clone()).unwrap();
    let mask2 = Tensor::matrix(hidden, p, m2.clone()).unwrap();
    let w1 = Tensor::matrix(p, hidden, randn(40, p * hidden)).unwrap();
    let b1 = Tensor::vector(randn(41, hidden));
    let w2 = Tensor::matrix(hidden, p, randn(42, hidden * p)).unwrap();
    let b2 = Tensor::vector(randn(43, p));
    let run = |x: &[f64]| {
        let store = ParameterStore::new();
        let mut tape = tape_for(&store);
        let iv = tape.constant(Tensor::vector(x.to_vec()));
        let w1v = tape.constant(w1.clone());
        let b1v = tape.constant(b1.clone());
        let h = tape.masked_dense(iv, w1v, b1v, &mask1).unwrap();
        let h = tape.activation(h, Activation::Elu);
        let w2v = tape.constant(w2.clone());
        let b2v = tape.constant(b2.clone());
        let out = tape.masked_dense(h, w2v, b2v, &mask2).unwrap();
        tape.value(out).data().to_vec()
    };
    // Composed connectivity: product of the binary masks.
    let mut product = vec![0.0; p * p];
    for j in 0..p {
        for i in 0..p {
            let mut acc = 0.0;
            for u in 0..hidden {
                acc += m1[j * hidden + u] * m2[u * p + i];
            }
            product[j * p + i] = acc;
        }
    }
    let base = randn(44, p);
    let h = 1e-6;
    for j in 0..p {
        let mut plus = base.clone();
        plus[j] += h;
        let mut minus = base.clone();
        minus[j] -= h;
        let (fp, fm) = (run(&plus), run(&minus));
        for i in 0..p {
            let d = (fp[i] - fm[i]) / (2.0 * h);
            if product[j * p + i] == 0.0 {
                assert!(d.abs() < 1e-9, "J[{i}][{j}] = {d} should be zero");
            }
        }
    }
}

// ── activation ─────────────────────────────────────────────────────

#[test]
fn activation_closed_forms() {
    let store = ParameterStore::new();
    let mut tape = tape_for(&store);
    let x = tape.constant(Tensor::vector(vec![0.0, 1.5, -2.0, 40.0]));
    let sp = tape.activation(x, Activation::Softplus);
    let spv = tape.value(sp).data();
    assert!((spv[0] - 2.0f64.ln()).abs() < 1e-12);
    assert!((spv[3] - 40.0).abs() < 1e-12); // asymptote
    let el = tape.activation(x, Activation::Elu);
    let elv = tape.value(el).data();
    assert_eq!(elv[1], 1.5);
    assert!((elv[2] - ((-2.0f64).exp() - 1.0)).abs() < 1e-12);
    let lg = tape.activation(x, Activation::Logistic);
    assert!((tape.value(lg).data()[0] - 0.5).abs() < 1e-15);
    let id = tape.activation(x, Activation::Identity);
    assert_eq!(id, x);
}

// ── normalize ──────────────────────────────────────────────────────

#[test]
fn normalize_constant_channel_gives_zeros() {
    let mut store = ParameterStore::new();
    store
        .insert_learnable("g", Tensor::vector(vec![1.0, 1.0]))
        .unwrap();
    store
        .insert_learnable("b", Tensor::vector(vec![0.0, 0.0]))
        .unwrap();
    let rm = Tensor::vector(vec![0.0, 0.0]);
    let rv = Tensor::vector(vec![1.0, 1.0]);
    let mut tape = tape_for(&store);
    let g = tape.param("g").unwrap();
    let b = tape.param("b").unwrap();
    let input = tape.constant(Tensor::matrix(6, 2, vec![3.0; 12]).unwrap());
    let (out, stats) = tape
        .normalize(input, g, b, &rm, &rv, NormMode::Train)
        .unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v.abs() < 1e-12));
    let stats = stats.unwrap();
    assert!((stats.mean[0] - 3.0).abs() < 1e-12);
    assert!(stats.var[0].abs() < 1e-12);
}

#[test]
fn normalize_inference_unit_stats_is_identity() {
    let mut store = ParameterStore::new();
    store
        .insert_learnable("g", Tensor::vector(vec![1.0]))
        .unwrap();
    store
        .insert_learnable("b", Tensor::vector(vec![0.0]))
        .unwrap();
    let rm = Tensor::vector(vec![0.0]);
    let rv = Tensor::vector(vec![1.0]);
    let xs = randn(50, 8);
    let mut tape = tape_for(&store);
    let g = tape.param("g").unwrap();
    let b = tape.param("b").unwrap();
    let input = tape.constant(Tensor::matrix(8, 1, xs.clone()).unwrap());
    let (out, _) = tape
        .normalize(input, g, b, &rm, &rv, NormMode::Inference)
        .unwrap();
    assert_eq!(tape.value(out).data(), xs.as_slice());
}

#[test]
fn normalize_train_mode_standardises_each_channel() {
    // Oracle: direct moment computation on the output.
    let (rows, cols) = (64, 3);
    let mut data = randn(51, rows * cols);
    for (i, v) in data.iter_mut().enumerate() {
        *v = *v * (1.0 + (i % cols) as f64) + (i % cols) as f64; // distinct scales
    }
    let mut store = ParameterStore::new();
    store
        .insert_learnable("g", Tensor::vector(vec![1.0; cols]))
        .unwrap();
    store
        .insert_learnable("b", Tensor::vector(vec![0.0; cols]))
        .unwrap();
    let rm = Tensor::vector(vec![0.0; cols]);
    let rv = Tensor::vector(vec![1.0; cols]);
    let mut tape = tape_for(&store);
    let g = tape.param("g").unwrap();
    let b = tape.param("b").unwrap();
    let input = tape.constant(Tensor::matrix(rows, cols, data).unwrap());
    let (out, _) = tape
        .normalize(input, g, b, &rm, &rv, NormMode::Train)
        .unwrap();
    for c in 0..cols {
        let col: Vec<f64> = (0..rows)
            .map(|r| tape.value(out).data()[r * cols + c])
            .collect();
        let mean = col.iter().sum::<f64>() / rows as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows as f64;
        assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "channel {c} var {var}");
    }
}

// ── gradient ───────────────────────────────────────────────────────

#[test]
fn gradient_of_sum_of_squares() {
    let mut store = ParameterStore::new();
    let w = vec![0.5, -1.5, 2.5];
    store
        .insert_learnable("w", Tensor::vector(w.clone()))
        .unwrap();
    let mut tape = tape_for(&store);
    let wv = tape.param("w").unwrap();
    let sq = tape.square(wv);
    let out = tape.sum(sq);
    let grads = tape.gradient(out).unwrap();
    let idx = store.index_of("w").unwrap();
    for (g, x) in grads.entry(idx).data().iter().zip(&w) {
        assert!((g - 2.0 * x).abs() < 1e-14);
    }
}

#[test]
fn untouched_learnables_get_zero_gradient() {
    let mut store = ParameterStore::new();
    store
        .insert_learnable("used", Tensor::scalar(2.0))
        .unwrap();
    store
        .insert_learnable("unused", Tensor::vector(vec![1.0, 2.0]))
        .unwrap();
    let mut tape = tape_for(&store);
    let u = tape.param("used").unwrap();
    let out = tape.square(u);
    let grads = tape.gradient(out).unwrap();
    let idx = store.index_of("unused").unwrap();
    assert!(grads.entry(idx).data().iter().all(|&g| g == 0.0));
}

#[test]
fn gradient_rejects_non_scalar_output() {
    let mut store = ParameterStore::new();
    store
        .insert_learnable("w", Tensor::vector(vec![1.0, 2.0]))
        .unwrap();
    let mut tape = tape_for(&store);
    let w = tape.param("w").unwrap();
    assert!(tape.gradient(w).is_err());
}

#[test]
fn affine_layer_log_density_gradient_matches_fd() {
    // A dense layer producing shift and raw scale, a softplus scale, and
    // the resulting affine log-density term — the composite the flows use.
    let mut store = ParameterStore::new();
    store
        .insert_learnable("w", Tensor::matrix(3, 2, randn(60, 6)).unwrap())
        .unwrap();
    store
        .insert_learnable("b", Tensor::vector(randn(61, 2)))
        .unwrap();
    let z = Tensor::vector(randn(62, 3));
    let err = finite_diff_check(
        |tape| {
            let w = tape.param("w")?;
            let b = tape.param("b")?;
            let zv = tape.constant(z.clone());
            let h = tape.dense(zv, w, Some(b))?;
            let mu = tape.elem(h, 0)?;
            let raw = tape.elem(h, 1)?;
            let sigma = tape.activation(raw, Activation::Softplus);
            let zin = tape.constant_scalar(0.37);
            let scaled = tape.mul(sigma, zin)?;
            let out = tape.add(mu, scaled)?;
            let sq = tape.square(out);
            let lsig = tape.ln(sigma);
            let obj = tape.sub(sq, lsig)?;
            Ok(obj)
        },
        &mut store,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "err {err}");
}

#[test]
fn every_primitive_composite_passes_fd_on_random_configs() {
    // Gradient correctness across the op set used by the flows, on 20
    // random configurations.
    for cfg in 0..20u64 {
        let len = 4 + (cfg % 3) as usize;
        let c_in = 1 + (cfg % 2) as usize;
        let ell = 1 + (cfg % 3) as usize;
        let hidden = 3;
        let mut store = ParameterStore::new();
        store
            .insert_learnable(
                "k",
                Tensor::new(vec![ell, c_in, hidden], randn(cfg, ell * c_in * hidden)).unwrap(),
            )
            .unwrap();
        store
            .insert_learnable(
                "w",
                Tensor::matrix(hidden, 2, randn(cfg + 100, hidden * 2)).unwrap(),
            )
            .unwrap();
        store
            .insert_learnable("b", Tensor::vector(randn(cfg + 200, 2)))
            .unwrap();
        store
            .insert_learnable("g", Tensor::vector(vec![1.1; hidden]))
            .unwrap();
        store
            .insert_learnable("bet", Tensor::vector(vec![0.1; hidden]))
            .unwrap();
        store
            .insert_learnable("s", Tensor::scalar(0.8))
            .unwrap();
        let rm = Tensor::vector(randn(cfg + 300, hidden));
        let rv = Tensor::vector(
            randn(cfg + 400, hidden)
                .iter()
                .map(|v| v * v + 0.5)
                .collect(),
        );
        let input = Tensor::matrix(len, c_in, randn(cfg + 500, len * c_in)).unwrap();
        let err = finite_diff_check(
            |tape| {
                let k = tape.param("k")?;
                let w = tape.param("w")?;
                let b = tape.param("b")?;
                let g = tape.param("g")?;
                let bet = tape.param("bet")?;
                let s = tape.param("s")?;
                let iv = tape.constant(input.clone());
                let conv = tape.conv1d_offcentre(iv, k, 0.0)?;
                let (norm, _) = tape.normalize(conv, g, bet, &rm, &rv, NormMode::Inference)?;
                let act = tape.activation(norm, Activation::Elu);
                let h = tape.dense(act, w, Some(b))?;
                let mu = tape.slice_cols(h, 0, 1)?;
                let raw = tape.slice_cols(h, 1, 2)?;
                let sig = tape.activation(raw, Activation::Softplus);
                let scaled = tape.mul_scalar(mu, s)?;
                let both = tape.concat_cols(scaled, sig)?;
                let lo = tape.activation(both, Activation::Logistic);
                let rs = tape.row_sums(lo)?;
                let top = tape.slice_rows(rs, 1, len)?;
                let sq = tape.square(top);
                Ok(tape.sum(sq))
            },
            &mut store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "config {cfg}: err {err}");
    }
}

#[test]
fn single_threaded_evaluation_is_bit_deterministic() {
    let mut store = ParameterStore::new();
    store
        .insert_learnable("w", Tensor::matrix(2, 3, randn(70, 6)).unwrap())
        .unwrap();
    let run = || {
        let mut tape = tape_for(&store);
        let w = tape.param("w").unwrap();
        let x = tape.constant(Tensor::vector(randn(71, 2)));
        let h = tape.dense(x, w, None).unwrap();
        let e = tape.exp(h);
        let out = tape.sum(e);
        tape.value(out).item()
    };
    assert_eq!(run().to_bits(), run().to_bits());
}
