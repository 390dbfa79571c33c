//! Finite-difference verification of every backward rule.
//!
//! `grad_check` compares the tape's analytic gradient of a scalar-valued
//! function against central differences, coordinate by coordinate. The
//! registry in `op_cases` pins one or more checks per primitive op kind;
//! higher-level crates append encoder- and fusion-level cases to the same
//! registry for the `gradcheck` command.

use crate::error::{Result, TensorError};
use crate::ops;
use crate::param::Parameter;
use crate::rng::Rng;
use crate::tape::{GradTape, OpKind};
use crate::tensor::{BoolTensor, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Relative error |a - n| / max(1e-8, |a| + |n|).
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Max relative error between the analytic gradient of `f` at `x` and
/// central finite differences. `f` must map a tensor to a scalar tensor and
/// be deterministic across calls.
pub fn grad_check(
    f: &mut dyn FnMut(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    eps: f64,
) -> Result<f64> {
    let tape = GradTape::new();
    let x_var = tape.var(x)?;
    let loss = f(&x_var)?;
    if loss.numel() != 1 {
        return Err(TensorError::NotScalar {
            shape: loss.shape().to_vec(),
        });
    }
    if !loss.item().is_finite() {
        return Err(TensorError::NonFiniteOutput { op: "grad_check" });
    }
    tape.backward(&loss)?;
    let analytic = x_var.grad().expect("backward ran");

    let mut worst = 0.0f64;
    let mut probe = x.data().to_vec();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&Tensor::from_vec(x.shape().to_vec(), probe.clone()))?.item();
        probe[i] = orig - eps;
        let down = f(&Tensor::from_vec(x.shape().to_vec(), probe.clone()))?.item();
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(TensorError::NonFiniteOutput { op: "grad_check" });
        }
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Spot-checks parameter gradients of a whole model: analytic gradients from
/// one backward pass vs central differences on `coords_per_param` randomly
/// chosen coordinates of every parameter. `loss` must be deterministic and
/// is called with a tape only for the analytic pass.
pub fn grad_check_params(
    loss: &mut dyn FnMut(Option<&GradTape>) -> Result<Tensor>,
    params: &[Parameter],
    coords_per_param: usize,
    eps: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let tape = GradTape::new();
    let out = loss(Some(&tape))?;
    if out.numel() != 1 {
        return Err(TensorError::NotScalar {
            shape: out.shape().to_vec(),
        });
    }
    tape.backward(&out)?;

    let mut worst = 0.0f64;
    for p in params {
        let analytic = p
            .grad()
            .ok_or_else(|| TensorError::MissingGrad { name: p.name() })?;
        let shape = p.shape();
        let n = analytic.len();
        for _ in 0..coords_per_param.min(n) {
            let i = rng.below(n);
            let mut data = p.value().data().to_vec();
            let orig = data[i];
            data[i] = orig + eps;
            p.set_value(Tensor::from_vec(shape.clone(), data.clone()));
            let up = loss(None)?.item();
            data[i] = orig - eps;
            p.set_value(Tensor::from_vec(shape.clone(), data.clone()));
            let down = loss(None)?.item();
            data[i] = orig;
            p.set_value(Tensor::from_vec(shape.clone(), data));
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
        p.clear_grad();
    }
    Ok(worst)
}

/// One entry of the verification registry.
pub struct CheckCase {
    pub name: String,
    /// Which `gradcheck --scope` bucket this belongs to.
    pub scope: CheckScope,
    /// Primitive op kind covered, for the completeness assertion.
    pub kind: Option<OpKind>,
    pub tolerance: f64,
    pub run: Box<dyn Fn() -> Result<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckScope {
    Ops,
    Encoders,
    Fusion,
}

impl CheckScope {
    pub fn label(&self) -> &'static str {
        match self {
            CheckScope::Ops => "ops",
            CheckScope::Encoders => "encoders",
            CheckScope::Fusion => "fusion",
        }
    }
}

fn case(
    name: &str,
    kind: OpKind,
    tolerance: f64,
    run: impl Fn() -> Result<f64> + 'static,
) -> CheckCase {
    CheckCase {
        name: name.to_string(),
        scope: CheckScope::Ops,
        kind: Some(kind),
        tolerance,
        run: Box::new(run),
    }
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::randn(shape.to_vec(), 0.0, 1.0, &mut rng)
}

/// Random tensor kept away from relu/max kinks.
fn rand_smooth(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.normal();
            if v.abs() < 1e-3 {
                v + 0.1
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data)
}

/// Weighted sum against a fixed random tensor, so reductions with constant
/// row sums still yield informative gradients.
fn wsum(x: &Tensor, seed: u64) -> Result<Tensor> {
    let w = rand_t(x.shape(), seed);
    x.mul(&w)?.sum_all()
}

/// Gradient checks for every primitive, at small fixed shapes and seeds.
pub fn op_cases() -> Vec<CheckCase> {
    let tol = 1e-6;
    vec![
        case("matmul_lhs", OpKind::MatMul, tol, || {
            let b = rand_t(&[5, 3], 100);
            grad_check(&mut |x| x.matmul(&b)?.sum_all(), &rand_t(&[4, 5], 101), DEFAULT_EPS)
        }),
        case("matmul_rhs", OpKind::MatMul, tol, || {
            let a = rand_t(&[4, 5], 102);
            grad_check(&mut |x| a.matmul(x)?.sum_all(), &rand_t(&[5, 3], 103), DEFAULT_EPS)
        }),
        case("matmul_batched", OpKind::MatMul, tol, || {
            let b = rand_t(&[2, 3, 2], 104);
            grad_check(
                &mut |x| wsum(&x.matmul(&b)?, 105),
                &rand_t(&[2, 4, 3], 106),
                DEFAULT_EPS,
            )
        }),
        case("add_broadcast", OpKind::Add, tol, || {
            let b = rand_t(&[4], 107);
            grad_check(&mut |x| wsum(&x.add(&b)?, 108), &rand_t(&[3, 4], 109), DEFAULT_EPS)
        }),
        case("add_bias_side", OpKind::Add, tol, || {
            let a = rand_t(&[3, 4], 110);
            grad_check(&mut |x| wsum(&a.add(x)?, 111), &rand_t(&[4], 112), DEFAULT_EPS)
        }),
        case("sub", OpKind::Sub, tol, || {
            let b = rand_t(&[3, 4], 113);
            grad_check(&mut |x| wsum(&b.sub(x)?, 114), &rand_t(&[3, 4], 115), DEFAULT_EPS)
        }),
        case("mul", OpKind::Mul, tol, || {
            let b = rand_t(&[2, 1, 3], 116);
            grad_check(
                &mut |x| wsum(&x.mul(&b)?, 117),
                &rand_t(&[1, 4, 3], 118),
                DEFAULT_EPS,
            )
        }),
        case("relu", OpKind::Relu, tol, || {
            grad_check(
                &mut |x| wsum(&x.relu()?, 119),
                &rand_smooth(&[4, 4], 120),
                DEFAULT_EPS,
            )
        }),
        case("sigmoid", OpKind::Sigmoid, tol, || {
            grad_check(&mut |x| wsum(&x.sigmoid()?, 121), &rand_t(&[4, 4], 122), DEFAULT_EPS)
        }),
        case("tanh", OpKind::Tanh, tol, || {
            grad_check(&mut |x| wsum(&x.tanh()?, 123), &rand_t(&[4, 4], 124), DEFAULT_EPS)
        }),
        case("scale", OpKind::Scale, tol, || {
            grad_check(&mut |x| wsum(&x.scale(-2.5)?, 125), &rand_t(&[3, 3], 126), DEFAULT_EPS)
        }),
        case("add_scalar", OpKind::AddScalar, tol, || {
            grad_check(&mut |x| wsum(&x.add_scalar(1.5)?, 127), &rand_t(&[5], 128), DEFAULT_EPS)
        }),
        case("sum_all", OpKind::SumAll, tol, || {
            grad_check(&mut |x| x.sum_all(), &rand_t(&[3, 2], 129), DEFAULT_EPS)
        }),
        case("softmax", OpKind::Softmax, tol, || {
            grad_check(
                &mut |x| wsum(&x.softmax(1)?, 130),
                &rand_t(&[3, 4], 131),
                DEFAULT_EPS,
            )
        }),
        case("mean_reduce", OpKind::MeanReduce, tol, || {
            grad_check(
                &mut |x| wsum(&x.mean_reduce(1, true)?, 132),
                &rand_t(&[3, 4, 2], 133),
                DEFAULT_EPS,
            )
        }),
        case("concat", OpKind::Concat, tol, || {
            let c = rand_t(&[2, 3], 134);
            grad_check(
                &mut |x| wsum(&ops::concat(&[x, &c, x], 1)?, 135),
                &rand_t(&[2, 2], 136),
                DEFAULT_EPS,
            )
        }),
        case("reshape", OpKind::Reshape, tol, || {
            grad_check(
                &mut |x| wsum(&x.relu()?.reshape(vec![2, 6])?, 137),
                &rand_smooth(&[3, 4], 138),
                DEFAULT_EPS,
            )
        }),
        case("permute", OpKind::Permute, tol, || {
            grad_check(
                &mut |x| wsum(&x.permute(&[2, 0, 1])?, 139),
                &rand_t(&[2, 3, 4], 140),
                DEFAULT_EPS,
            )
        }),
        case("gather_rows", OpKind::GatherRows, tol, || {
            grad_check(
                &mut |x| wsum(&x.gather_rows(&[1, 1, 2, 0])?, 141),
                &rand_t(&[4, 3], 142),
                DEFAULT_EPS,
            )
        }),
        case("apply_key_mask", OpKind::ApplyKeyMask, tol, || {
            let mask = BoolTensor::from_vec(vec![2, 4], vec![true, false, true, true, false, true, true, false]);
            grad_check(
                &mut |x| wsum(&ops::apply_key_mask(x, &mask)?.softmax(3)?, 143),
                &rand_t(&[2, 2, 3, 4], 144),
                DEFAULT_EPS,
            )
        }),
        case("layer_norm_x", OpKind::LayerNorm, tol, || {
            let gamma = rand_t(&[6], 145);
            let beta = rand_t(&[6], 146);
            grad_check(
                &mut |x| wsum(&ops::layer_norm(x, &gamma, &beta, 1e-5)?, 147),
                &rand_t(&[4, 6], 148),
                DEFAULT_EPS,
            )
        }),
        case("layer_norm_gamma", OpKind::LayerNorm, tol, || {
            let x = rand_t(&[4, 6], 149);
            let beta = rand_t(&[6], 150);
            grad_check(
                &mut |g| wsum(&ops::layer_norm(&x, g, &beta, 1e-5)?, 151),
                &rand_t(&[6], 152),
                DEFAULT_EPS,
            )
        }),
        case("batch_norm2d_train", OpKind::BatchNorm2d, 1e-4, || {
            let gamma = rand_t(&[3], 153);
            let beta = rand_t(&[3], 154);
            grad_check(
                &mut |x| {
                    let mut rm = vec![0.0; 3];
                    let mut rv = vec![1.0; 3];
                    wsum(
                        &ops::batch_norm2d(x, &gamma, &beta, &mut rm, &mut rv, true, 1e-5, 0.1)?,
                        155,
                    )
                },
                &rand_t(&[2, 3, 4, 4], 156),
                DEFAULT_EPS,
            )
        }),
        case("batch_norm2d_infer", OpKind::BatchNorm2d, tol, || {
            let gamma = rand_t(&[3], 157);
            let beta = rand_t(&[3], 158);
            grad_check(
                &mut |x| {
                    let mut rm = vec![0.2; 3];
                    let mut rv = vec![1.5; 3];
                    wsum(
                        &ops::batch_norm2d(x, &gamma, &beta, &mut rm, &mut rv, false, 1e-5, 0.1)?,
                        159,
                    )
                },
                &rand_t(&[2, 3, 3, 3], 160),
                DEFAULT_EPS,
            )
        }),
        case("conv2d_input", OpKind::Conv2d, tol, || {
            let w = rand_t(&[3, 2, 3, 3], 161);
            grad_check(
                &mut |x| wsum(&ops::conv2d(x, &w, 2, 1)?, 162),
                &rand_t(&[2, 2, 5, 5], 163),
                DEFAULT_EPS,
            )
        }),
        case("conv2d_kernel", OpKind::Conv2d, tol, || {
            let x = rand_t(&[2, 2, 5, 5], 164);
            grad_check(
                &mut |w| wsum(&ops::conv2d(&x, w, 1, 1)?, 165),
                &rand_t(&[3, 2, 3, 3], 166),
                DEFAULT_EPS,
            )
        }),
        case("dropout", OpKind::Dropout, tol, || {
            grad_check(
                &mut |x| {
                    // A fresh fixed-seed RNG keeps the mask identical per call.
                    let mut rng = Rng::new(777);
                    wsum(&ops::dropout(x, 0.3, true, &mut rng)?, 167)
                },
                &rand_t(&[6, 5], 168),
                DEFAULT_EPS,
            )
        }),
        case("cross_entropy", OpKind::CrossEntropy, tol, || {
            let labels = [0usize, 2, 1, 1];
            grad_check(
                &mut |x| ops::cross_entropy_loss(x, &labels),
                &rand_t(&[4, 3], 169),
                DEFAULT_EPS,
            )
        }),
        case("cross_entropy_linear", OpKind::CrossEntropy, tol, || {
            let w = rand_t(&[5, 3], 170);
            let b = rand_t(&[3], 171);
            let labels = [2usize, 0];
            grad_check(
                &mut |x| ops::cross_entropy_loss(&x.matmul(&w)?.add(&b)?, &labels),
                &rand_t(&[2, 5], 172),
                DEFAULT_EPS,
            )
        }),
    ]
}

/// Runs a list of cases and returns (name, max err, tolerance, pass).
pub fn run_cases(cases: &[CheckCase]) -> Vec<(String, Result<f64>, f64, bool)> {
    cases
        .iter()
        .map(|c| {
            let res = (c.run)();
            let pass = matches!(&res, Ok(e) if *e < c.tolerance);
            (c.name.clone(), res, c.tolerance, pass)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_exact() {
        let err = grad_check(&mut |x| x.sum_all(), &rand_t(&[4, 3], 1), DEFAULT_EPS).unwrap();
        assert!(err < 1e-10, "err {err}");
    }

    #[test]
    fn quadratic_gradient_matches() {
        // loss = sum(x*x), grad = 2x.
        let x = rand_t(&[5], 2);
        let tape = GradTape::new();
        let xv = tape.var(&x).unwrap();
        let loss = xv.mul(&xv).unwrap().sum_all().unwrap();
        tape.backward(&loss).unwrap();
        let g = xv.grad().unwrap();
        for (gi, xi) in g.iter().zip(x.data()) {
            assert!((gi - 2.0 * xi).abs() < 1e-12);
        }
    }

    #[test]
    fn every_primitive_op_passes_finite_differences() {
        for (name, res, tol, pass) in run_cases(&op_cases()) {
            let err = res.expect(&name);
            assert!(pass, "{name}: rel err {err} exceeds {tol}");
        }
    }

    #[test]
    fn registry_covers_every_differentiable_kind() {
        let cases = op_cases();
        for kind in OpKind::DIFFERENTIABLE {
            assert!(
                cases.iter().any(|c| c.kind == Some(*kind)),
                "no gradient-check case for op kind {:?}",
                kind
            );
        }
    }

    #[test]
    fn harness_detects_a_wrong_gradient() {
        // A deliberately broken "gradient": f computes sum(2x) analytically
        // via the tape, but we compare against sum(3x) numerically by scaling
        // the probe. The check must report a large error.
        let x = rand_t(&[3], 3);
        let mut flip = false;
        let err = grad_check(
            &mut |t| {
                // First call (analytic pass) sees 2x; later calls see 3x.
                let factor = if flip { 3.0 } else { 2.0 };
                flip = true;
                t.scale(factor)?.sum_all()
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err > 0.1, "sign/scale flip went undetected: {err}");
    }

    #[test]
    fn non_finite_outputs_are_reported() {
        let err = grad_check(
            &mut |x| x.scale(f64::INFINITY)?.sum_all(),
            &rand_t(&[2], 4),
            DEFAULT_EPS,
        )
        .unwrap_err();
        assert_eq!(err, TensorError::NonFiniteOutput { op: "grad_check" });
    }

    #[test]
    fn param_spot_check_matches_full_check() {
        let mut rng = Rng::new(10);
        let p = Parameter::randn("w", vec![4, 3], 0.5, &mut rng);
        let x = rand_t(&[2, 4], 11);
        let labels = [0usize, 2];
        let mut seed_rng = Rng::new(12);
        let err = grad_check_params(
            &mut |tape| {
                let w = p.bind(tape)?;
                ops::cross_entropy_loss(&x.matmul(&w)?, &labels)
            },
            &[p.clone()],
            10,
            DEFAULT_EPS,
            &mut seed_rng,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }
}
