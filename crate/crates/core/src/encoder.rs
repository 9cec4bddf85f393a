//! Feature-to-sphere encoder: a learned Euclidean adapter closes the gap
//! between the upstream feature width and the embedding dimension, a tangent
//! lift at the north pole places the adapted vector on the sphere, and a
//! stack of bias-free spherical linear layers (unit rows, renormalized
//! output) produces the final embedding. A second spherical stack plus a
//! softplus head predict per-node von Mises–Fisher parameters.

use crate::autodiff::{dot_rf, norm_r, Real};
use crate::error::{CoreError, Result};
use crate::manifold::UnitVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Guard added to every spherical renormalization denominator.
pub const SPHERE_EPS: f64 = 1e-12;

/// Learned parameters of the encoder and the vMF head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub d: usize,
    pub d_plm: usize,
    /// Euclidean adapter, d rows of length d_plm.
    pub adapter: Vec<Vec<f64>>,
    /// Spherical layers; each matrix is rows x cols with unit-norm rows.
    pub layers: Vec<Vec<Vec<f64>>>,
    /// Spherical stack for the mean-direction head.
    pub mu_head: Vec<Vec<Vec<f64>>>,
    /// Concentration head weights, length d.
    pub kappa_weights: Vec<f64>,
    pub kappa_bias: f64,
    /// Concentration clip ceiling.
    pub kappa_max: f64,
    /// Ablation: mean direction fixed to the geometric embedding.
    pub identity_mu: bool,
    /// Ablation: concentration pinned to a constant.
    pub constant_kappa: Option<f64>,
}

/// Predicted vMF density parameters for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    pub mu: UnitVector,
    pub kappa: f64,
}

/// The same parameters lifted into an arbitrary scalar field (used to run
/// the forward pass on the gradient tape).
pub struct GenericParams<R> {
    pub adapter: Vec<Vec<R>>,
    pub layers: Vec<Vec<Vec<R>>>,
    pub mu_head: Vec<Vec<Vec<R>>>,
    pub kappa_weights: Vec<R>,
    pub kappa_bias: R,
    pub kappa_max: f64,
    pub identity_mu: bool,
    pub constant_kappa: Option<f64>,
}

impl ModelParams {
    /// Layer dimension chain [d, hidden, ..., d] realized as `depth` matrices.
    fn dims(d: usize, hidden: usize, depth: usize) -> Vec<(usize, usize)> {
        if depth == 0 {
            return Vec::new();
        }
        let mut sizes = Vec::with_capacity(depth + 1);
        sizes.push(d);
        for _ in 1..depth {
            sizes.push(hidden);
        }
        sizes.push(d);
        sizes.windows(2).map(|w| (w[1], w[0])).collect()
    }

    /// Random initialization: adapter entries Gaussian at scale 1/sqrt(d_plm),
    /// spherical rows uniform on the sphere via Gaussian-then-normalize.
    pub fn init<RNG: Rng>(
        d: usize,
        d_plm: usize,
        hidden: usize,
        depth: usize,
        kappa_max: f64,
        rng: &mut RNG,
    ) -> Self {
        let gauss = |rng: &mut RNG| -> f64 { StandardNormal.sample(rng) };
        let scale = 1.0 / (d_plm as f64).sqrt();
        let adapter = (0..d)
            .map(|_| (0..d_plm).map(|_| gauss(rng) * scale).collect())
            .collect();
        let sphere_stack = |rng: &mut RNG| -> Vec<Vec<Vec<f64>>> {
            Self::dims(d, hidden, depth)
                .into_iter()
                .map(|(rows, cols)| {
                    (0..rows)
                        .map(|_| {
                            let mut row: Vec<f64> = (0..cols).map(|_| gauss(rng)).collect();
                            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                            row.iter_mut().for_each(|x| *x /= n);
                            row
                        })
                        .collect()
                })
                .collect()
        };
        let layers = sphere_stack(rng);
        let mu_head = sphere_stack(rng);
        let kappa_scale = 1.0 / (d as f64).sqrt();
        let kappa_weights = (0..d).map(|_| gauss(rng) * kappa_scale).collect();
        ModelParams {
            d,
            d_plm,
            adapter,
            layers,
            mu_head,
            kappa_weights,
            kappa_bias: 0.0,
            kappa_max,
            identity_mu: false,
            constant_kappa: None,
        }
    }

    /// Renormalizes every spherical row to unit norm (idempotent).
    pub fn renormalize_rows(&mut self) {
        for stack in [&mut self.layers, &mut self.mu_head] {
            for mat in stack.iter_mut() {
                for row in mat.iter_mut() {
                    let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    // Skip rows already unit so repeated calls are idempotent.
                    if n > 0.0 && (n - 1.0).abs() > 1e-15 {
                        row.iter_mut().for_each(|x| *x /= n);
                    }
                }
            }
        }
    }

    /// Largest deviation of any spherical row norm from 1.
    pub fn max_row_norm_drift(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for stack in [&self.layers, &self.mu_head] {
            for mat in stack.iter() {
                for row in mat.iter() {
                    let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    worst = worst.max((n - 1.0).abs());
                }
            }
        }
        worst
    }

    /// Sizes of the layer matrices, recorded in the checkpoint header.
    pub fn layer_sizes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|m| (m.len(), m[0].len()))
            .collect()
    }
}

/// Lifts the parameters onto a tape (or any other scalar field).
pub fn lift_params<R: Real>(p: &ModelParams, leaf: &mut impl FnMut(f64) -> R) -> GenericParams<R> {
    let lift_mat =
        |m: &Vec<Vec<f64>>, leaf: &mut dyn FnMut(f64) -> R| -> Vec<Vec<R>> {
            m.iter()
                .map(|row| row.iter().map(|&x| leaf(x)).collect())
                .collect()
        };
    GenericParams {
        adapter: lift_mat(&p.adapter, leaf),
        layers: p.layers.iter().map(|m| lift_mat(m, leaf)).collect(),
        mu_head: p.mu_head.iter().map(|m| lift_mat(m, leaf)).collect(),
        kappa_weights: p.kappa_weights.iter().map(|&x| leaf(x)).collect(),
        kappa_bias: leaf(p.kappa_bias),
        kappa_max: p.kappa_max,
        identity_mu: p.identity_mu,
        constant_kappa: p.constant_kappa,
    }
}

/// Matrix-vector product with generic matrix and plain feature vector.
fn matvec_rf<R: Real>(m: &[Vec<R>], x: &[f64]) -> Vec<R> {
    m.iter().map(|row| dot_rf(row, x)).collect()
}

fn matvec_rr<R: Real>(m: &[Vec<R>], x: &[R]) -> Vec<R> {
    m.iter().map(|row| crate::autodiff::dot_r(row, x)).collect()
}

/// Tangent lift at the north pole followed by the exponential map.
pub fn lift_to_sphere_r<R: Real>(params: &GenericParams<R>, e: &[f64]) -> Vec<R> {
    let d = params.adapter.len();
    let v = matvec_rf(&params.adapter, e);
    // Tangent projection at p_N = e_d zeroes the last coordinate.
    let mut tangent = v;
    let zero = tangent[0].lift(0.0);
    tangent[d - 1] = zero;
    exp_map_north_r(&tangent)
}

/// exp_{p_N}(v) = cos(||v||) p_N + sin(||v||) v / (||v|| + eps) for tangent v.
fn exp_map_north_r<R: Real>(v: &[R]) -> Vec<R> {
    let d = v.len();
    let n = norm_r(v, 1e-30);
    let scale = n.sin() / (n + SPHERE_EPS);
    let mut out: Vec<R> = v.iter().map(|&x| x * scale).collect();
    out[d - 1] = out[d - 1] + n.cos();
    out
}

/// One spherical layer: y = Wx / (||Wx|| + eps).
pub fn spherical_linear_forward_r<R: Real>(w: &[Vec<R>], x: &[R]) -> Vec<R> {
    let y = matvec_rr(w, x);
    let n = norm_r(&y, 1e-30);
    y.iter().map(|&c| c / (n + SPHERE_EPS)).collect()
}

/// Full geometric encoding: adapter, tangent lift, spherical stack.
pub fn encode_r<R: Real>(params: &GenericParams<R>, e: &[f64]) -> Vec<R> {
    let mut z = lift_to_sphere_r(params, e);
    for w in &params.layers {
        z = spherical_linear_forward_r(w, &z);
    }
    z
}

/// vMF head on an already-encoded embedding.
pub fn predict_vmf_r<R: Real>(params: &GenericParams<R>, z: &[R]) -> (Vec<R>, R) {
    let mu = if params.identity_mu {
        z.to_vec()
    } else {
        let mut m = z.to_vec();
        for w in &params.mu_head {
            m = spherical_linear_forward_r(w, &m);
        }
        m
    };
    let kappa = match params.constant_kappa {
        Some(c) => z[0].lift(c),
        None => (crate::autodiff::dot_r(&params.kappa_weights, z) + params.kappa_bias)
            .softplus()
            .min_const(params.kappa_max),
    };
    (mu, kappa)
}

fn check_finite(e: &[f64]) -> Result<()> {
    if e.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::NonFiniteInput);
    }
    Ok(())
}

fn view(p: &ModelParams) -> GenericParams<f64> {
    lift_params(p, &mut |x| x)
}

/// Places an external feature vector on the sphere (no spherical layers).
pub fn lift_to_sphere(params: &ModelParams, e: &[f64]) -> Result<UnitVector> {
    check_finite(e)?;
    if e.len() != params.d_plm {
        return Err(CoreError::DimensionMismatch {
            expected: params.d_plm,
            got: e.len(),
        });
    }
    let z = lift_to_sphere_r(&view(params), e);
    Ok(UnitVector::from_normalized(z))
}

/// One spherical layer over plain floats, with a degeneracy check.
pub fn spherical_linear_forward(w: &[Vec<f64>], x: &UnitVector) -> Result<UnitVector> {
    let y: Vec<f64> = w
        .iter()
        .map(|row| row.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum())
        .collect();
    let n = y.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
    if n < 1e-12 {
        return Err(CoreError::DegenerateProjection);
    }
    Ok(UnitVector::from_normalized(
        y.iter().map(|v| v / (n + SPHERE_EPS)).collect(),
    ))
}

/// Full geometric encoding of a feature vector.
pub fn encode(params: &ModelParams, e: &[f64]) -> Result<UnitVector> {
    check_finite(e)?;
    if e.len() != params.d_plm {
        return Err(CoreError::DimensionMismatch {
            expected: params.d_plm,
            got: e.len(),
        });
    }
    let z = encode_r(&view(params), e);
    Ok(UnitVector::from_normalized(z))
}

/// vMF head over an encoded embedding.
pub fn predict_vmf(params: &ModelParams, z: &UnitVector) -> Result<VmfParams> {
    if z.dim() != params.d {
        return Err(CoreError::DimensionMismatch {
            expected: params.d,
            got: z.dim(),
        });
    }
    let (mu, kappa) = predict_vmf_r(&view(params), z.as_slice());
    Ok(VmfParams {
        mu: UnitVector::from_normalized(mu),
        kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_params(d: usize) -> ModelParams {
        let eye = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect()
        };
        ModelParams {
            d,
            d_plm: d,
            adapter: eye(d),
            layers: vec![],
            mu_head: vec![],
            kappa_weights: vec![0.0; d],
            kappa_bias: 0.0,
            kappa_max: 100.0,
            identity_mu: false,
            constant_kappa: None,
        }
    }

    #[test]
    fn lift_zero_and_polar_inputs_give_pole() {
        let p = identity_params(3);
        let z = lift_to_sphere(&p, &[0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(z.as_slice()[2], 1.0, epsilon = 1e-12);
        // Pure polar component is annihilated by the tangent projection.
        let z = lift_to_sphere(&p, &[0.0, 0.0, 5.0]).unwrap();
        assert_abs_diff_eq!(z.as_slice()[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lift_quarter_circle() {
        let p = identity_params(3);
        let z = lift_to_sphere(&p, &[std::f64::consts::FRAC_PI_2, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(z.as_slice()[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(z.as_slice()[2], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn lift_rejects_non_finite() {
        let p = identity_params(3);
        assert!(matches!(
            lift_to_sphere(&p, &[f64::NAN, 0.0, 0.0]),
            Err(CoreError::NonFiniteInput)
        ));
    }

    #[test]
    fn spherical_layer_identity_and_permutation() {
        let x = UnitVector::from_normalized(vec![0.6, 0.0, 0.8]);
        let eye = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let y = spherical_linear_forward(&eye, &x).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(y.as_slice()[i], x.as_slice()[i], epsilon = 1e-12);
        }
        let perm = vec![
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ];
        let y = spherical_linear_forward(&perm, &x).unwrap();
        assert_abs_diff_eq!(y.as_slice()[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(y.as_slice()[1], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(y.as_slice()[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn spherical_layer_degenerate_output() {
        let x = UnitVector::from_normalized(vec![0.0, 0.0, 1.0]);
        let w = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        assert!(matches!(
            spherical_linear_forward(&w, &x),
            Err(CoreError::DegenerateProjection)
        ));
    }

    #[test]
    fn random_layer_output_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(8, 12, 16, 2, 100.0, &mut rng);
        for _ in 0..20 {
            let e: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z = encode(&p, &e).unwrap();
            let n: f64 = z.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn encode_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ModelParams::init(6, 10, 8, 2, 100.0, &mut rng);
        let e: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = encode(&p, &e).unwrap();
        let b = encode(&p, &e).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn kappa_closed_form_and_clipping() {
        let mut p = identity_params(3);
        let z = UnitVector::from_normalized(vec![0.0, 0.0, 1.0]);
        let v = predict_vmf(&p, &z).unwrap();
        assert_abs_diff_eq!(v.kappa, std::f64::consts::LN_2, epsilon = 1e-12);
        p.kappa_bias = 1000.0;
        let v = predict_vmf(&p, &z).unwrap();
        assert_abs_diff_eq!(v.kappa, 100.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_mu_ablation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut p = ModelParams::init(6, 6, 8, 2, 100.0, &mut rng);
        p.identity_mu = true;
        let e: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z = encode(&p, &e).unwrap();
        let v = predict_vmf(&p, &z).unwrap();
        assert_eq!(v.mu.as_slice(), z.as_slice());
    }

    #[test]
    fn constant_kappa_ablation() {
        let mut p = identity_params(3);
        p.constant_kappa = Some(7.5);
        let z = UnitVector::from_normalized(vec![1.0, 0.0, 0.0]);
        let v = predict_vmf(&p, &z).unwrap();
        assert_eq!(v.kappa, 7.5);
    }

    #[test]
    fn row_renormalization_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ModelParams::init(5, 7, 6, 2, 100.0, &mut rng);
        // Perturb rows off the sphere.
        p.layers[0][0][0] += 0.01;
        p.renormalize_rows();
        let once = p.clone();
        p.renormalize_rows();
        assert_eq!(p, once);
        assert!(p.max_row_norm_drift() <= 1e-12);
    }

    #[test]
    fn tape_forward_matches_plain() {
        use crate::autodiff::Tape;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = ModelParams::init(6, 9, 8, 2, 100.0, &mut rng);
        let e: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let plain = encode(&p, &e).unwrap();
        let tape = Tape::new();
        let gp = lift_params(&p, &mut |x| tape.leaf(x));
        let z = encode_r(&gp, &e);
        for (a, b) in plain.as_slice().iter().zip(&z) {
            assert_abs_diff_eq!(*a, b.value(), epsilon = 1e-14);
        }
        let (mu, kappa) = predict_vmf_r(&gp, &z);
        let v = predict_vmf(&p, &plain).unwrap();
        assert_abs_diff_eq!(v.kappa, kappa.value(), epsilon = 1e-14);
        for (a, b) in v.mu.as_slice().iter().zip(&mu) {
            assert_abs_diff_eq!(*a, b.value(), epsilon = 1e-14);
        }
    }
}
