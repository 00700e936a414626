use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NetGrads, NetParams};

/// Denominator floor so that coordinates with vanishing gradients do not
/// produce meaningless ratios.
const REL_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients against central differences on `probes`
/// randomly chosen coordinates and returns the worst relative error.
///
/// `loss_and_grad` must return the loss and its analytic gradient for the
/// given parameters; it is called once at `params` and twice per probe.
/// `probes == 0` is a vacuous check and returns 0.
pub fn finite_diff_check<F>(params: &NetParams<f64>, loss_and_grad: F, eps: f64, probes: usize, seed: u64) -> f64
where
    F: FnMut(&NetParams<f64>) -> (f64, NetGrads<f64>),
{
    finite_diff_check_piecewise(params, loss_and_grad, |_| Vec::new(), eps, probes, seed)
}

/// [`finite_diff_check`] for piecewise-smooth losses (ReLU, clipping).
///
/// `region` identifies the smooth piece containing a parameter setting,
/// e.g. the ReLU on/off pattern over the batch. A coordinate whose
/// `±eps` stencil leaves the piece of `params` straddles a kink, where a
/// central difference is not a derivative estimate; such coordinates are
/// skipped and another one is drawn in their place.
pub fn finite_diff_check_piecewise<F, R>(
    params: &NetParams<f64>,
    mut loss_and_grad: F,
    mut region: R,
    eps: f64,
    probes: usize,
    seed: u64,
) -> f64
where
    F: FnMut(&NetParams<f64>) -> (f64, NetGrads<f64>),
    R: FnMut(&NetParams<f64>) -> Vec<bool>,
{
    if probes == 0 {
        return 0.0;
    }
    let (_, analytic) = loss_and_grad(params);
    let home = region(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.len();
    let mut work = params.clone();
    let mut worst = 0.0f64;
    let mut done = 0;
    for idx in sample(&mut rng, n, n).into_iter() {
        if done == probes {
            break;
        }
        let orig = work.as_slice()[idx];
        work.as_mut_slice()[idx] = orig + eps;
        let (plus, _) = loss_and_grad(&work);
        let plus_home = region(&work) == home;
        work.as_mut_slice()[idx] = orig - eps;
        let (minus, _) = loss_and_grad(&work);
        let minus_home = region(&work) == home;
        work.as_mut_slice()[idx] = orig;
        if !(plus_home && minus_home) {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data[idx], numeric));
        done += 1;
    }
    worst
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::numkit::{HeadShape, MlpArch};

    fn params() -> NetParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        NetParams::init(&MlpArch::new(4, &[6], HeadShape::single(3)), &mut rng).unwrap()
    }

    #[test]
    fn quadratic_is_exact() {
        let p = params();
        let err = finite_diff_check(
            &p,
            |q| {
                let loss = q.as_slice().iter().map(|v| v * v).sum::<f64>() / 2.0;
                (
                    loss,
                    NetGrads {
                        data: q.as_slice().to_vec(),
                    },
                )
            },
            1e-4,
            p.len(),
            0,
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn zero_probes_is_vacuous() {
        let p = params();
        let err = finite_diff_check(&p, |_| (0.0, NetGrads { data: vec![1.0; 57] }), 1e-4, 0, 0);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let p = params();
        let err = finite_diff_check(
            &p,
            |q| {
                let loss = q.as_slice().iter().map(|v| v * v).sum::<f64>() / 2.0;
                let g = q.as_slice().iter().map(|v| 2.0 * v).collect();
                (loss, NetGrads { data: g })
            },
            1e-4,
            10,
            0,
        );
        assert!(err > 0.3);
    }

    #[test]
    fn kinks_inside_the_stencil_are_skipped() {
        // |x| with one coordinate sitting just beside its kink
        let mut p = params();
        p.as_mut_slice()[0] = 2e-5;
        let f = |q: &NetParams<f64>| {
            let loss = q.as_slice().iter().map(|v| v.abs()).sum::<f64>();
            let g = q.as_slice().iter().map(|v| v.signum()).collect();
            (loss, NetGrads { data: g })
        };
        let plain = finite_diff_check(&p, f, 1e-4, p.len(), 0);
        assert!(plain > 0.5, "{plain}");
        let signs = |q: &NetParams<f64>| q.as_slice().iter().map(|&v| v > 0.0).collect();
        let piecewise = finite_diff_check_piecewise(&p, f, signs, 1e-4, p.len(), 0);
        assert!(piecewise < 1e-9, "{piecewise}");
    }
}
