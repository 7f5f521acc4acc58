use super::rng::Rng;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    pub pass: bool,
}

/// Relative error used by [`grad_check`].
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences, coordinate by coordinate.
///
/// `f` builds the function on a fresh tape from leaves for each point tensor.
pub fn grad_check<F>(f: F, point: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_with(f, |tape, loss| tape.backward(loss), point, step, tol)
}

/// [`grad_check`] with a caller-supplied analytic gradient, so a deliberately
/// wrong backward can serve as a negative control.
pub fn grad_check_with<F, B>(f: F, backward: B, point: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    B: Fn(&Tape, Var) -> Result<super::tape::Gradients>,
{
    let eval = |pt: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new().with_finite_checks(false);
        let vars: Vec<Var> = pt.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(Error::NotScalar(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut tape = Tape::new().with_finite_checks(false);
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = backward(&tape, out)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        pass: true,
    };
    let mut probe: Vec<Tensor> = point.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var, &tape);
        for j in 0..point[ti].numel() {
            let orig = point[ti].data()[j];
            probe[ti].data_mut()[j] = orig + step;
            let fp = eval(&probe)?;
            probe[ti].data_mut()[j] = orig - step;
            let fm = eval(&probe)?;
            probe[ti].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.data()[j];
            let e = rel_err(a, numeric);
            report.coordinates += 1;
            if e > report.max_rel_err || report.coordinates == 1 {
                report.max_rel_err = e;
                report.worst = (ti, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.pass = report.max_rel_err < tol;
    Ok(report)
}

/// Scalar function of `shapes`-shaped inputs built on a tape.
pub type ScalarFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + Send + Sync>;

pub struct PrimitiveCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub f: ScalarFn,
}

fn case(
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + Send + Sync + 'static,
) -> PrimitiveCase {
    PrimitiveCase { name, shapes, f: Box::new(f) }
}

/// Each primitive wrapped into a scalar function with a fixed random
/// projection so every output coordinate contributes.
pub fn primitive_cases() -> Vec<PrimitiveCase> {
    fn project(tape: &mut Tape, y: Var) -> Result<Var> {
        let shape = tape.shape(y).to_vec();
        let w = Tensor::from_fn(&shape, |i| ((i as f64) * 0.618_033_988_7).fract() - 0.4);
        let w = tape.constant(w);
        let p = tape.mul(y, w)?;
        tape.sum(p)
    }
    vec![
        case("add", vec![vec![3, 4], vec![3, 4]], |t, v| { let y = t.add(v[0], v[1])?; project(t, y) }),
        case("sub", vec![vec![3, 4], vec![3, 4]], |t, v| { let y = t.sub(v[0], v[1])?; project(t, y) }),
        case("mul", vec![vec![3, 4], vec![3, 4]], |t, v| { let y = t.mul(v[0], v[1])?; project(t, y) }),
        case("scale", vec![vec![5]], |t, v| { let y = t.scale(v[0], -1.7)?; project(t, y) }),
        case("relu", vec![vec![12]], |t, v| { let y = t.relu(v[0])?; project(t, y) }),
        case("exp", vec![vec![6]], |t, v| { let y = t.exp(v[0])?; project(t, y) }),
        case("reshape", vec![vec![2, 6]], |t, v| { let y = t.reshape(v[0], &[3, 4])?; project(t, y) }),
        case("sum", vec![vec![2, 3]], |t, v| { let y = t.mul(v[0], v[0])?; t.sum(y) }),
        case("mean", vec![vec![2, 3]], |t, v| { let y = t.mul(v[0], v[0])?; t.mean(y) }),
        case("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| { let y = t.matmul(v[0], v[1])?; project(t, y) }),
        case("matvec", vec![vec![3, 4], vec![4]], |t, v| { let y = t.matvec(v[0], v[1])?; project(t, y) }),
        case("affine", vec![vec![5, 4], vec![3, 4], vec![3]], |t, v| { let y = t.affine(v[0], v[1], v[2])?; project(t, y) }),
        case("channel_bias", vec![vec![2, 3, 4], vec![3]], |t, v| { let y = t.add_channel_bias(v[0], v[1])?; project(t, y) }),
        case("conv1d", vec![vec![2, 3, 9], vec![4, 3, 3]], |t, v| { let y = t.conv1d(v[0], v[1], 1, 1)?; project(t, y) }),
        case("conv1d_stride2", vec![vec![2, 3, 8], vec![2, 3, 4]], |t, v| { let y = t.conv1d(v[0], v[1], 2, 1)?; project(t, y) }),
        case("conv1d_unbatched", vec![vec![3, 7], vec![2, 3, 3]], |t, v| { let y = t.conv1d(v[0], v[1], 1, 0)?; project(t, y) }),
        case("conv1d_bias", vec![vec![2, 3, 6], vec![4, 3, 3], vec![4]], |t, v| { let y = t.conv1d_bias(v[0], v[1], Some(v[2]), 1, 1)?; project(t, y) }),
        case("conv_transpose1d_bias", vec![vec![2, 3, 4], vec![3, 2, 4], vec![2]], |t, v| { let y = t.conv_transpose1d_bias(v[0], v[1], Some(v[2]), 2, 1)?; project(t, y) }),
        case("conv_transpose1d", vec![vec![2, 3, 4], vec![3, 2, 4]], |t, v| { let y = t.conv_transpose1d(v[0], v[1], 2, 1)?; project(t, y) }),
        case("conv_transpose1d_stride1", vec![vec![2, 2, 5], vec![2, 3, 3]], |t, v| { let y = t.conv_transpose1d(v[0], v[1], 1, 1)?; project(t, y) }),
        case("softmax_temp", vec![vec![3, 5]], |t, v| { let y = t.softmax_temp(v[0], 0.7)?; project(t, y) }),
        case("sq_dist", vec![vec![4, 3], vec![5, 3]], |t, v| { let y = t.sq_dist(v[0], v[1])?; project(t, y) }),
        case("gather_rows", vec![vec![4, 3]], |t, v| { let y = t.gather_rows(v[0], &[2, 0, 2, 3])?; project(t, y) }),
        case("mse_loss", vec![vec![3, 4], vec![3, 4]], |t, v| t.mse_loss(v[0], v[1])),
    ]
}


/// Checks every primitive on `trials` random points drawn uniformly from
/// `[-1, 1]`, returning the worst report per primitive.
pub fn check_primitives(rng: &mut Rng, trials: usize, step: f64, tol: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut out = Vec::new();
    for c in primitive_cases() {
        let mut worst: Option<GradCheckReport> = None;
        for _ in 0..trials.max(1) {
            let point: Vec<Tensor> = c
                .shapes
                .iter()
                .map(|s| Tensor::from_fn(s, |_| rng.uniform_range(-1.0, 1.0)))
                .collect();
            let r = grad_check(&c.f, &point, step, tol)?;
            if worst.as_ref().map_or(true, |w| r.max_rel_err > w.max_rel_err) {
                worst = Some(r);
            }
        }
        out.push((c.name, worst.expect("at least one trial")));
    }
    Ok(out)
}
