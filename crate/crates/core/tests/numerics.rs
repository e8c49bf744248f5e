use mcgan_core::features::Mlp;
use mcgan_core::gradcheck::finite_difference_check;
use mcgan_core::linalg::{householder_qr, symmetric_eigen};
use mcgan_core::{Norm, ParamStore, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Entries bounded away from zero by at least `gap`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let t = rand_tensor(rng, shape);
    t.map(|x| if x >= 0.0 { x + gap } else { x - gap }).unwrap()
}

fn store(tensors: Vec<Tensor>) -> ParamStore {
    let mut s = ParamStore::new();
    for (i, t) in tensors.into_iter().enumerate() {
        s.insert(format!("p{i}"), t).unwrap();
    }
    s
}

/// Reduces any tensor to a scalar through a fixed random weighting.
fn weighted_sum(tape: &mut Tape, x: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(x, w)?;
    tape.sum(p)
}

const STEP: f64 = 1e-5;
const SMOOTH_TOL: f64 = 1e-6;

fn check<F>(name: &str, instances: usize, mut make: F)
where
    F: FnMut(&mut ChaCha8Rng) -> (ParamStore, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>),
{
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ name.len() as u64);
    for i in 0..instances {
        let (params, f) = make(&mut rng);
        let err = finite_difference_check(|t, v| f(t, v), &params, STEP).unwrap();
        assert!(err < SMOOTH_TOL, "{name} instance {i}: rel err {err:e}");
    }
}

#[test]
fn primitive_gradients_match_finite_differences() {
    check("matmul", 20, |rng| {
        let w = rand_tensor(rng, &[3, 2]);
        let p = store(vec![rand_tensor(rng, &[3, 4]), rand_tensor(rng, &[4, 2])]);
        (
            p,
            Box::new(move |t, v| {
                let y = t.matmul(v[0], v[1])?;
                weighted_sum(t, y, &w)
            }),
        )
    });
    check("transpose", 20, |rng| {
        let w = rand_tensor(rng, &[4, 3]);
        let p = store(vec![rand_tensor(rng, &[3, 4])]);
        (
            p,
            Box::new(move |t, v| {
                let y = t.transpose(v[0])?;
                weighted_sum(t, y, &w)
            }),
        )
    });
    check("add_sub_mul", 20, |rng| {
        let w = rand_tensor(rng, &[2, 3]);
        let p = store(vec![rand_tensor(rng, &[2, 3]), rand_tensor(rng, &[2, 3])]);
        (
            p,
            Box::new(move |t, v| {
                let a = t.add(v[0], v[1])?;
                let b = t.sub(v[0], v[1])?;
                let c = t.mul(a, b)?;
                weighted_sum(t, c, &w)
            }),
        )
    });
    check("add_row", 20, |rng| {
        let w = rand_tensor(rng, &[5, 3]);
        let p = store(vec![rand_tensor(rng, &[5, 3]), rand_tensor(rng, &[3])]);
        (
            p,
            Box::new(move |t, v| {
                let y = t.add_row(v[0], v[1])?;
                weighted_sum(t, y, &w)
            }),
        )
    });
    check("relu", 20, |rng| {
        let w = rand_tensor(rng, &[4, 4]);
        let p = store(vec![away_from_zero(rng, &[4, 4], 1e-2)]);
        (
            p,
            Box::new(move |t, v| {
                let y = t.relu(v[0])?;
                weighted_sum(t, y, &w)
            }),
        )
    });
    check("cos_scale_neg", 20, |rng| {
        let w = rand_tensor(rng, &[6]);
        let s: f64 = rng.random_range(-2.0..2.0);
        let p = store(vec![rand_tensor(rng, &[6])]);
        (
            p,
            Box::new(move |t, v| {
                let y = t.cos(v[0])?;
                let y = t.scale(y, s)?;
                let y = t.neg(y)?;
                weighted_sum(t, y, &w)
            }),
        )
    });
    check("mean_rows", 20, |rng| {
        let w = rand_tensor(rng, &[3]);
        let p = store(vec![rand_tensor(rng, &[7, 3])]);
        (
            p,
            Box::new(move |t, v| {
                let y = t.mean_rows(v[0])?;
                weighted_sum(t, y, &w)
            }),
        )
    });
    check("dot_sq_norm", 20, |rng| {
        let p = store(vec![rand_tensor(rng, &[5]), rand_tensor(rng, &[5])]);
        (
            p,
            Box::new(|t, v| {
                let d = t.dot(v[0], v[1])?;
                let s = t.sq_norm(v[0])?;
                t.add(d, s)
            }),
        )
    });
    for q in Norm::ALL {
        check(&format!("norm_{q}"), 20, move |rng| {
            // distinct magnitudes, none near zero: no ties, no kinks
            let mut vals: Vec<f64> = (0..5).map(|i| 0.3 + 0.25 * i as f64).collect();
            for v in vals.iter_mut() {
                if rng.random_bool(0.5) {
                    *v = -*v;
                }
                *v += rng.random_range(-0.05..0.05);
            }
            let p = store(vec![Tensor::vector(vals).unwrap()]);
            (p, Box::new(move |t, v| t.norm(v[0], q)))
        });
    }
    check("softmax_ce", 20, |rng| {
        let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
        let p = store(vec![rand_tensor(rng, &[6, 4]).scale(3.0).unwrap()]);
        (p, Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels)))
    });
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mlp = Mlp::new(vec![2, 8, 8, 1], false).unwrap();
    for _ in 0..5 {
        let params = mlp.init(&mut rng, 0.8).unwrap();
        let x = rand_tensor(&mut rng, &[6, 2]);
        let err = finite_difference_check(
            |t, v| {
                let xv = t.constant(x.clone());
                let y = mlp.record(t, v, xv)?;
                t.sum(y)
            },
            &params,
            STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err:e}");
    }
}

#[test]
fn backward_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let x = rand_tensor(&mut rng, &[4]);
        let (a, b): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let grad = |which: u8| {
            let mut t = Tape::new();
            let v = t.leaf(x.clone());
            let f = t.cos(v).unwrap();
            let f = t.sum(f).unwrap();
            let g = t.sq_norm(v).unwrap();
            let out = match which {
                0 => f,
                1 => g,
                _ => {
                    let fa = t.scale(f, a).unwrap();
                    let gb = t.scale(g, b).unwrap();
                    t.add(fa, gb).unwrap()
                }
            };
            t.backward(out).unwrap().get_or_zeros(v).unwrap()
        };
        let (gf, gg, gh) = (grad(0), grad(1), grad(2));
        for i in 0..4 {
            let lin = a * gf.data()[i] + b * gg.data()[i];
            assert!((gh.data()[i] - lin).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_examples() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]).unwrap();
    assert_eq!(Tensor::eye(3).matmul(&a).unwrap(), a);
    let mut t = Tape::new();
    let x = t.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap());
    let r = t.relu(x).unwrap();
    assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
    let b = Tensor::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
    assert_eq!(b.mean_rows().unwrap().data(), &[2.0, 4.0]);

    let mut t = Tape::new();
    let x = t.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let f = t.dot(x, x).unwrap();
    assert_eq!(t.backward(f).unwrap().get_or_zeros(x).unwrap().data(), &[2.0, 4.0]);

    let mut t = Tape::new();
    let x = t.leaf(Tensor::vector(vec![-1.0, 2.0]).unwrap());
    let r = t.relu(x).unwrap();
    let f = t.sum(r).unwrap();
    assert_eq!(t.backward(f).unwrap().get_or_zeros(x).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = Mlp::new(vec![2, 16, 4], true).unwrap();
        let params = mlp.init(&mut rng, 0.5).unwrap();
        let x = rand_tensor(&mut rng, &[32, 2]);
        let mut t = Tape::new();
        let vars = params.bind(&mut t);
        let xv = t.constant(x);
        let y = mlp.record(&mut t, &vars, xv).unwrap();
        let s = t.sq_norm(y).unwrap();
        let out = t.value(s).item().unwrap();
        let grads = t.backward(s).unwrap().collect(&vars).unwrap();
        (out.to_bits(), grads)
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_values_are_rejected() {
    assert!(Tensor::vector(vec![1.0, f64::NAN]).is_err());
    assert!(Tensor::vector(vec![f64::INFINITY]).is_err());
    assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let a = rand_tensor(rng, &[n, n]);
    a.add(&a.transpose().unwrap()).unwrap().scale(0.5).unwrap()
}

#[test]
fn eigen_matches_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for &n in &[1usize, 2, 5, 8, 20] {
        for _ in 0..5 {
            let a = random_symmetric(&mut rng, n);
            let eig = symmetric_eigen(&a).unwrap();
            let na = nalgebra::DMatrix::from_row_slice(n, n, a.data());
            let mut oracle: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().cloned().collect();
            oracle.sort_by(|x, y| y.abs().partial_cmp(&x.abs()).unwrap());
            for (x, y) in eig.values.iter().zip(&oracle) {
                assert!((x.abs() - y.abs()).abs() < 1e-10, "{x} vs {y}");
            }
            // A v = λ v
            for j in 0..n {
                let v = eig.vector(j);
                for i in 0..n {
                    let av: f64 = (0..n).map(|c| a.get2(i, c) * v[c]).sum();
                    assert!((av - eig.values[j] * v[i]).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn qr_reconstructs_and_is_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..10 {
        let m = rand_tensor(&mut rng, &[8, 3]);
        let qr = householder_qr(&m).unwrap();
        let back = qr.q.matmul(&qr.r).unwrap();
        for (x, y) in back.data().iter().zip(m.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let qtq = Tensor::matmul_t(&qr.q, true, &qr.q, false).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((qtq.get2(i, j) - e).abs() < 1e-12);
            }
        }
    }
}
