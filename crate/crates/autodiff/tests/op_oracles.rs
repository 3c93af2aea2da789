//! Every kernel op against an independent direct-summation oracle.

use autodiff::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random::<f64>() * 2.0 - 1.0)
}

/// Quadruple-loop cross-correlation, written independently of the kernel.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    x: &[f64],
    w: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
) -> Vec<f64> {
    let ho = h + 2 * ph - kh + 1;
    let wo = wd + 2 * pw - kw + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for ni in 0..n {
        for co in 0..cout {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = oh as isize + ki as isize - ph as isize;
                                let iw = ow as isize + kj as isize - pw as isize;
                                if ih < 0 || ih >= h as isize || iw < 0 || iw >= wd as isize {
                                    continue;
                                }
                                let xv = x[((ni * cin + ci) * h + ih as usize) * wd + iw as usize];
                                let wv = w[((co * cin + ci) * kh + ki) * kw + kj];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * cout + co) * ho + oh) * wo + ow] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_direct_summation_on_randomized_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..60 {
        let n = rng.random_range(1..4);
        let cin = rng.random_range(1..5);
        let h = rng.random_range(1..4);
        let wd = rng.random_range(3..16);
        let cout = rng.random_range(1..6);
        let kh = rng.random_range(1..=h);
        let kw = rng.random_range(1..=3.min(wd));
        let ph = rng.random_range(0..2);
        let pw = rng.random_range(0..2);
        let x = randn(&mut rng, &[n, cin, h, wd]);
        let w = randn(&mut rng, &[cout, cin, kh, kw]);

        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), false);
        let wv = g.leaf(w.clone(), false);
        let y = g.conv2d(xv, wv, (ph, pw)).unwrap();
        let expect = conv_oracle(x.data(), w.data(), n, cin, h, wd, cout, kh, kw, ph, pw);
        let got = g.value(y).data();
        assert_eq!(got.len(), expect.len(), "case {}", case);
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "case {}: {} vs {}", case, a, b);
        }
    }
}

#[test]
fn conv2d_exact_network_shape_vs_oracle() {
    // [4,2,52] single-sample shape with a 2x3 kernel, same-padding on W.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = randn(&mut rng, &[4, 2, 52]);
    let w = randn(&mut rng, &[8, 4, 2, 3]);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), false);
    let wv = g.leaf(w.clone(), false);
    let y = g.conv2d(xv, wv, (0, 1)).unwrap();
    assert_eq!(g.value(y).shape(), &[8, 1, 52]);
    let expect = conv_oracle(x.data(), w.data(), 1, 4, 2, 52, 8, 2, 3, 0, 1);
    for (a, b) in g.value(y).data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn dense_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..40 {
        let n = rng.random_range(1..8);
        let din = rng.random_range(1..20);
        let dout = rng.random_range(1..20);
        let x = randn(&mut rng, &[n, din]);
        let w = randn(&mut rng, &[din, dout]);
        let b = randn(&mut rng, &[dout]);
        let mut expect = vec![0.0; n * dout];
        for i in 0..n {
            for j in 0..dout {
                let mut acc = b.data()[j];
                for l in 0..din {
                    acc += x.data()[i * din + l] * w.data()[l * dout + j];
                }
                expect[i * dout + j] = acc;
            }
        }
        let mut g = Graph::new();
        let (xv, wv, bv) = (
            g.leaf(x.clone(), false),
            g.leaf(w.clone(), false),
            g.leaf(b.clone(), false),
        );
        let y = g.dense(xv, wv, bv).unwrap();
        for (a, e) in g.value(y).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn layer_norm_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..30 {
        let n = rng.random_range(1..4);
        let c = rng.random_range(2..9);
        let w = rng.random_range(1..7);
        let x = randn(&mut rng, &[n, c, 1, w]);
        let gain = randn(&mut rng, &[c]);
        let bias = randn(&mut rng, &[c]);
        let eps = 1e-5;

        // Direct: normalize over the channel axis for every (n, h, w).
        let mut expect = vec![0.0; n * c * w];
        for ni in 0..n {
            for wi in 0..w {
                let mut mean = 0.0;
                for ci in 0..c {
                    mean += x.data()[(ni * c + ci) * w + wi];
                }
                mean /= c as f64;
                let mut var = 0.0;
                for ci in 0..c {
                    let d = x.data()[(ni * c + ci) * w + wi] - mean;
                    var += d * d;
                }
                var /= c as f64;
                for ci in 0..c {
                    let xh = (x.data()[(ni * c + ci) * w + wi] - mean) / (var + eps).sqrt();
                    expect[(ni * c + ci) * w + wi] = xh * gain.data()[ci] + bias.data()[ci];
                }
            }
        }

        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), false);
        let gv = g.leaf(gain.clone(), false);
        let bv = g.leaf(bias.clone(), false);
        let y = g.layer_norm(xv, gv, bv, &[1], eps).unwrap();
        for (a, e) in g.value(y).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_and_l2norm_match_direct_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..30 {
        let n = rng.random_range(1..6);
        let m = rng.random_range(2..25);
        let x = randn(&mut rng, &[n, m]);
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), false);
        let sm = g.softmax_rows(xv).unwrap();
        let l2 = g.l2_normalize_rows(xv, 1e-12).unwrap();
        for i in 0..n {
            let row = &x.data()[i * m..(i + 1) * m];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for j in 0..m {
                let sm_expect = row[j].exp() / denom;
                let l2_expect = row[j] / norm;
                assert!((g.value(sm).data()[i * m + j] - sm_expect).abs() < 1e-12);
                assert!((g.value(l2).data()[i * m + j] - l2_expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gelu_matches_erf_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = randn(&mut rng, &[200]);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), false);
    let y = g.gelu(xv);
    for (&xi, &yi) in x.data().iter().zip(g.value(y).data()) {
        let expect = xi * 0.5 * (1.0 + libm::erf(xi / std::f64::consts::SQRT_2));
        assert!((yi - expect).abs() < 1e-14);
    }
}
