//! Training objectives: Welsch-robust geodesic triplet loss, vMF
//! containment triplet loss, and the kernelized transport-field (SVGD)
//! regularizer, plus their weighted total and parameter-shaped gradients.
//!
//! Every loss has a generic forward shared between the `f64` fast path and
//! the gradient tape, so finite-difference checks exercise the exact same
//! arithmetic that produces the analytic gradients.

use std::collections::BTreeMap;

use crate::autodiff::{dot_r, norm_r, Real, Tape};
use crate::encoder::{encode_r, lift_params, predict_vmf_r, GenericParams, ModelParams, VmfParams};
use crate::error::{CoreError, Result};
use crate::manifold::{TangentVector, UnitVector, ACOS_CLAMP};
use crate::vmf::{kl_vmf_r, BesselRegime};

/// Guard in the structural score denominator 1 - z_d^2 + eps.
const STRUCT_EPS: f64 = 1e-6;
/// Guard inside the differentiable tangent-field norm.
const FIELD_NORM_GUARD: f64 = 1e-12;

/// Interaction kernel for the transport field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Vmf,
    Rbf,
    Imq,
}

/// Alignment anchor source: the learned vMF mean, or the embedding itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMode {
    Learned,
    SelfTargeting,
}

/// Weights, margins, and toggles for the full objective.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub welsch_scale: f64,
    pub geom_margin: f64,
    pub prob_margin: f64,
    pub lambda_geo: f64,
    pub lambda_prob: f64,
    pub lambda_svgd: f64,
    pub kappa_align: f64,
    pub kappa_repel: f64,
    pub kernel_kind: KernelKind,
    pub svgd_enabled: bool,
    pub prob_enabled: bool,
    pub geom_enabled: bool,
    pub structural_score_enabled: bool,
    pub alignment_enabled: bool,
    pub anchor_mode: AnchorMode,
    pub bessel: BesselRegime,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            welsch_scale: 0.4,
            geom_margin: 0.5,
            prob_margin: 0.3,
            lambda_geo: 0.7,
            lambda_prob: 0.3,
            lambda_svgd: 0.1,
            kappa_align: 1.0,
            kappa_repel: 2.0,
            kernel_kind: KernelKind::Vmf,
            svgd_enabled: true,
            prob_enabled: true,
            geom_enabled: true,
            structural_score_enabled: true,
            alignment_enabled: true,
            anchor_mode: AnchorMode::Learned,
            bessel: BesselRegime::default(),
        }
    }
}

impl LossConfig {
    fn validate(&self) -> Result<()> {
        if self.welsch_scale <= 0.0 {
            return Err(CoreError::InvalidParameter(
                "welsch scale must be positive".into(),
            ));
        }
        if self.geom_margin < 0.0 || self.prob_margin < 0.0 {
            return Err(CoreError::InvalidParameter(
                "margins must be nonnegative".into(),
            ));
        }
        if self.lambda_geo < 0.0 || self.lambda_prob < 0.0 || self.lambda_svgd < 0.0 {
            return Err(CoreError::InvalidParameter(
                "loss weights must be nonnegative".into(),
            ));
        }
        if self.kappa_align <= 0.0 || self.kappa_repel <= 0.0 {
            return Err(CoreError::InvalidParameter(
                "kernel concentrations must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One training example: a child, one of its parents, and a negative.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub child_id: String,
    pub parent_id: String,
    pub negative_id: String,
    pub child_feat: Vec<f64>,
    pub parent_feat: Vec<f64>,
    pub negative_feat: Vec<f64>,
}

/// Per-term values of the last objective evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub geom: f64,
    pub prob: f64,
    pub svgd: f64,
    pub total: f64,
}

/// Gradients shaped like [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub adapter: Vec<Vec<f64>>,
    pub layers: Vec<Vec<Vec<f64>>>,
    pub mu_head: Vec<Vec<Vec<f64>>>,
    pub kappa_weights: Vec<f64>,
    pub kappa_bias: f64,
}

/// Robust angular penalty W(theta) = 1 - exp(-theta^2 / 2c^2).
pub fn welsch(theta: f64, c: f64) -> Result<f64> {
    if c <= 0.0 {
        return Err(CoreError::InvalidParameter(
            "welsch scale must be positive".into(),
        ));
    }
    Ok(welsch_r(theta, c))
}

fn welsch_r<R: Real>(theta: R, c: f64) -> R {
    let one = theta.lift(1.0);
    one - (-(theta * theta) / (2.0 * c * c)).exp()
}

fn geodesic_r<R: Real>(a: &[R], b: &[R]) -> R {
    dot_r(a, b).acos_clamped(ACOS_CLAMP)
}

fn geom_triplet_r<R: Real>(zp: &[R], zc: &[R], zn: &[R], cfg: &LossConfig) -> R {
    let wcp = welsch_r(geodesic_r(zc, zp), cfg.welsch_scale);
    let wcn = welsch_r(geodesic_r(zc, zn), cfg.welsch_scale);
    (wcp - wcn + cfg.geom_margin).relu()
}

/// Hinge of Welsch-penalized angles: max(0, margin + W(theta_cp) - W(theta_cn)).
pub fn geometric_triplet_loss(
    zp: &UnitVector,
    zc: &UnitVector,
    zn: &UnitVector,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    if zp.dim() != zc.dim() || zn.dim() != zc.dim() {
        return Err(CoreError::DimensionMismatch {
            expected: zc.dim(),
            got: zp.dim().max(zn.dim()),
        });
    }
    Ok(geom_triplet_r(zp.as_slice(), zc.as_slice(), zn.as_slice(), cfg))
}

fn vmf_triplet_r<R: Real>(
    (mu_p, kp): (&[R], R),
    (mu_c, kc): (&[R], R),
    (mu_n, kn): (&[R], R),
    cfg: &LossConfig,
) -> R {
    let kl_cp = kl_vmf_r(mu_c, kc, mu_p, kp, &cfg.bessel);
    let kl_cn = kl_vmf_r(mu_c, kc, mu_n, kn, &cfg.bessel);
    (kl_cp - kl_cn + cfg.prob_margin).relu()
}

/// Hinge of KL differences: max(0, margin + KL(c||p) - KL(c||n)).
pub fn vmf_triplet_loss(
    vp: &VmfParams,
    vc: &VmfParams,
    vn: &VmfParams,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    Ok(vmf_triplet_r(
        (vp.mu.as_slice(), vp.kappa),
        (vc.mu.as_slice(), vc.kappa),
        (vn.mu.as_slice(), vn.kappa),
        cfg,
    ))
}

/// Median-heuristic squared bandwidth from detached particle positions.
fn median_bandwidth_sq(values: &[Vec<f64>]) -> f64 {
    let b = values.len();
    if b < 2 {
        return 1.0;
    }
    let mut dists = Vec::with_capacity(b * (b - 1) / 2);
    for i in 0..b {
        for j in (i + 1)..b {
            let d2: f64 = values[i]
                .iter()
                .zip(&values[j])
                .map(|(a, c)| (a - c) * (a - c))
                .sum();
            dists.push(d2);
        }
    }
    // total_cmp keeps the sort well-defined when a diverging run produces
    // NaN distances; the NaN then propagates to the objective, where it is
    // reported as divergence instead of panicking here.
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    (median / ((b as f64) + 1.0).ln()).max(1e-12)
}

/// Score function s(z_j): equator repulsion plus anchor alignment. The
/// whole score is a detached constant within the step — it is evaluated
/// from the current particle value and anchor, and gradients do not flow
/// through it. Coupling the score's own gradient would let the objective
/// cancel the very drift it is meant to exert (the cheapest way to shrink
/// the field norm is to zero the score at the equator), inverting the
/// anti-collapse behavior.
fn score_detached(z: &[f64], anchor: &[f64], cfg: &LossConfig) -> Vec<f64> {
    let d = z.len();
    let mut s = vec![0.0; d];
    if cfg.structural_score_enabled {
        let zd = z[d - 1];
        s[d - 1] = zd / (1.0 - zd * zd + STRUCT_EPS);
    }
    if cfg.alignment_enabled {
        for k in 0..d {
            s[k] += anchor[k] * cfg.kappa_align;
        }
    }
    s
}

/// Tangent-projected empirical transport field for every particle.
/// `scores` must align 1:1 with `batch`; they are detached constants.
fn svgd_field_r<R: Real>(
    batch: &[Vec<R>],
    scores: &[Vec<f64>],
    cfg: &LossConfig,
) -> Vec<Vec<R>> {
    let b = batch.len();
    let d = batch[0].len();
    let detached: Vec<Vec<f64>> = batch
        .iter()
        .map(|z| z.iter().map(|x| x.value()).collect())
        .collect();
    let h2 = median_bandwidth_sq(&detached);
    let mut fields = Vec::with_capacity(b);
    for i in 0..b {
        let zi = &batch[i];
        let zero = zi[0].lift(0.0);
        let mut phi = vec![zero; d];
        for j in 0..b {
            let zj = &batch[j];
            // Kernel value and its gradient in the first argument z_j.
            let (k, grad): (R, Vec<R>) = match cfg.kernel_kind {
                KernelKind::Vmf => {
                    let k = (dot_r(zj, zi) * cfg.kappa_repel).exp();
                    let g = zi.iter().map(|&c| c * k * cfg.kappa_repel).collect();
                    (k, g)
                }
                KernelKind::Rbf => {
                    let diff: Vec<R> = zj.iter().zip(zi).map(|(&a, &c)| a - c).collect();
                    let sq = dot_r(&diff, &diff);
                    let k = (-sq / (2.0 * h2)).exp();
                    let g = diff.iter().map(|&x| -x * k / h2).collect();
                    (k, g)
                }
                KernelKind::Imq => {
                    let diff: Vec<R> = zj.iter().zip(zi).map(|(&a, &c)| a - c).collect();
                    let sq = dot_r(&diff, &diff);
                    let base = sq / h2 + 1.0;
                    let k = base.sqrt().lift(1.0) / base.sqrt();
                    let k3 = k * k * k;
                    let g = diff.iter().map(|&x| -x * k3 / h2).collect();
                    (k, g)
                }
            };
            for c in 0..d {
                phi[c] = phi[c] + k * scores[j][c] + grad[c];
            }
        }
        for c in 0..d {
            phi[c] = phi[c] / (b as f64);
        }
        // Project onto the tangent space of z_i.
        let radial = dot_r(&phi, zi);
        let projected: Vec<R> = phi
            .iter()
            .zip(zi)
            .map(|(&p, &z)| p - z * radial)
            .collect();
        fields.push(projected);
    }
    fields
}

/// Raw transport field over plain floats, exposed for diagnostics.
pub fn svgd_transport_field(
    batch: &[UnitVector],
    anchors: &[UnitVector],
    cfg: &LossConfig,
) -> Result<Vec<TangentVector>> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    if anchors.len() != batch.len() {
        return Err(CoreError::DimensionMismatch {
            expected: batch.len(),
            got: anchors.len(),
        });
    }
    let zs: Vec<Vec<f64>> = batch.iter().map(|z| z.as_slice().to_vec()).collect();
    let scores: Vec<Vec<f64>> = zs
        .iter()
        .zip(anchors)
        .map(|(z, a)| score_detached(z, a.as_slice(), cfg))
        .collect();
    let fields = svgd_field_r(&zs, &scores, cfg);
    Ok(batch
        .iter()
        .zip(fields)
        .map(|(z, f)| TangentVector::from_parts(z.clone(), f))
        .collect())
}

fn svgd_loss_r<R: Real>(batch: &[Vec<R>], scores: &[Vec<f64>], cfg: &LossConfig) -> R {
    let fields = svgd_field_r(batch, scores, cfg);
    let b = batch.len() as f64;
    let mut acc = norm_r(&fields[0], FIELD_NORM_GUARD);
    for f in fields.iter().skip(1) {
        acc = acc + norm_r(f, FIELD_NORM_GUARD);
    }
    acc / b
}

/// Mean tangent-field norm over the batch.
pub fn svgd_loss(batch: &[UnitVector], anchors: &[UnitVector], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    let zs: Vec<Vec<f64>> = batch.iter().map(|z| z.as_slice().to_vec()).collect();
    let scores: Vec<Vec<f64>> = zs
        .iter()
        .zip(anchors)
        .map(|(z, a)| score_detached(z, a.as_slice(), cfg))
        .collect();
    Ok(svgd_loss_r(&zs, &scores, cfg))
}

/// Deterministic batch roster: unique node ids with their features, in the
/// order that the SVGD particle set and encoder cache will use.
fn unique_nodes(triplets: &[Triplet]) -> BTreeMap<&str, &[f64]> {
    let mut map: BTreeMap<&str, &[f64]> = BTreeMap::new();
    for t in triplets {
        map.entry(&t.child_id).or_insert(&t.child_feat);
        map.entry(&t.parent_id).or_insert(&t.parent_feat);
        map.entry(&t.negative_id).or_insert(&t.negative_feat);
    }
    map
}

fn objective_r<R: Real>(
    triplets: &[Triplet],
    gp: &GenericParams<R>,
    cfg: &LossConfig,
    pinned_fields: Option<&BTreeMap<String, Vec<f64>>>,
) -> (R, LossBreakdown) {
    let roster = unique_nodes(triplets);
    let mut embeddings: BTreeMap<&str, Vec<R>> = BTreeMap::new();
    for (&id, &feat) in &roster {
        embeddings.insert(id, encode_r(gp, feat));
    }
    let need_vmf = cfg.prob_enabled
        || (cfg.svgd_enabled
            && cfg.alignment_enabled
            && cfg.anchor_mode == AnchorMode::Learned);
    let mut vmf: BTreeMap<&str, (Vec<R>, R)> = BTreeMap::new();
    if need_vmf {
        for (&id, z) in &embeddings {
            vmf.insert(id, predict_vmf_r(gp, z));
        }
    }

    let n = triplets.len() as f64;
    let some_r = embeddings.values().next().expect("nonempty batch")[0];
    let zero = some_r.lift(0.0);

    let mut geom = zero;
    if cfg.geom_enabled {
        for t in triplets {
            let zc = &embeddings[t.child_id.as_str()];
            let zp = &embeddings[t.parent_id.as_str()];
            let zn = &embeddings[t.negative_id.as_str()];
            geom = geom + geom_triplet_r(zp, zc, zn, cfg);
        }
        geom = geom / n;
    }

    let mut prob = zero;
    if cfg.prob_enabled {
        for t in triplets {
            let (mc, kc) = &vmf[t.child_id.as_str()];
            let (mp, kp) = &vmf[t.parent_id.as_str()];
            let (mn, kn) = &vmf[t.negative_id.as_str()];
            prob = prob
                + vmf_triplet_r(
                    (mp.as_slice(), *kp),
                    (mc.as_slice(), *kc),
                    (mn.as_slice(), *kn),
                    cfg,
                );
        }
        prob = prob / n;
    }

    let mut svgd = zero;
    if cfg.svgd_enabled {
        // The transport field is computed entirely from detached values
        // (positions, scores, anchors) — it is the update direction, not a
        // differentiable quantity. The caller may pin it so an external
        // finite-difference oracle sees the same stop-gradient.
        let detached: Vec<Vec<f64>> = embeddings
            .values()
            .map(|z| z.iter().map(|x| x.value()).collect())
            .collect();
        let fields: Vec<Vec<f64>> = match pinned_fields {
            Some(pinned) => embeddings.keys().map(|id| pinned[*id].clone()).collect(),
            None => {
                let scores: Vec<Vec<f64>> = embeddings
                    .keys()
                    .zip(&detached)
                    .map(|(id, z_det)| {
                        let anchor: Vec<f64> = match (cfg.alignment_enabled, cfg.anchor_mode) {
                            (true, AnchorMode::Learned) => {
                                vmf[*id].0.iter().map(|x| x.value()).collect()
                            }
                            _ => z_det.clone(),
                        };
                        score_detached(z_det, &anchor, cfg)
                    })
                    .collect();
                svgd_field_r(&detached, &scores, cfg)
            }
        };
        let b = fields.len() as f64;
        // Reported value: mean tangent-field norm, exactly as logged.
        let value = fields
            .iter()
            .map(|f| norm_r(f.as_slice(), FIELD_NORM_GUARD))
            .sum::<f64>()
            / b;
        // Gradient carrier: each embedding is pulled along its transport
        // field. The inner product vanishes at the evaluation point
        // (tangent fields are orthogonal to their base), so the term's
        // value is untouched while the chain rule transports embeddings —
        // descending the field norm itself would instead drive mass to the
        // equator, where the structural score vanishes.
        let mut carrier = zero;
        for (z, field) in embeddings.values().zip(&fields) {
            let mut dp = zero;
            for (&zc, &fc) in z.iter().zip(field) {
                dp = dp + zc * fc;
            }
            carrier = carrier + dp;
        }
        svgd = carrier.lift(value) - carrier / b;
    }

    let total = geom * cfg.lambda_geo + prob * cfg.lambda_prob + svgd * cfg.lambda_svgd;
    let breakdown = LossBreakdown {
        geom: geom.value(),
        prob: prob.value(),
        svgd: svgd.value(),
        total: total.value(),
    };
    (total, breakdown)
}

/// Weighted total objective over a batch of triplets.
pub fn total_objective(
    triplets: &[Triplet],
    params: &ModelParams,
    cfg: &LossConfig,
) -> Result<(f64, LossBreakdown)> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    let gp = lift_params(params, &mut |x| x);
    let (total, breakdown) = objective_r(triplets, &gp, cfg, None);
    if !total.is_finite() {
        return Err(CoreError::Diverged);
    }
    Ok((total, breakdown))
}

/// The detached SVGD transport fields the objective would use at the
/// current parameters, keyed by node id. Exposed so a finite-difference
/// oracle can pin them across perturbed evaluations.
pub fn current_fields(
    triplets: &[Triplet],
    params: &ModelParams,
    cfg: &LossConfig,
) -> Result<BTreeMap<String, Vec<f64>>> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    let gp = lift_params(params, &mut |x| x);
    let mut ids = Vec::new();
    let mut particles = Vec::new();
    let mut scores = Vec::new();
    for (id, feat) in unique_nodes(triplets) {
        let z = encode_r(&gp, feat);
        let anchor = match (cfg.alignment_enabled, cfg.anchor_mode) {
            (true, AnchorMode::Learned) => predict_vmf_r(&gp, &z).0,
            _ => z.clone(),
        };
        scores.push(score_detached(&z, &anchor, cfg));
        particles.push(z);
        ids.push(id.to_string());
    }
    let fields = svgd_field_r(&particles, &scores, cfg);
    Ok(ids.into_iter().zip(fields).collect())
}

/// Total objective with the SVGD fields pinned to caller-provided values.
pub fn total_objective_pinned(
    triplets: &[Triplet],
    params: &ModelParams,
    cfg: &LossConfig,
    fields: &BTreeMap<String, Vec<f64>>,
) -> Result<(f64, LossBreakdown)> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    let gp = lift_params(params, &mut |x| x);
    let (total, breakdown) = objective_r(triplets, &gp, cfg, Some(fields));
    if !total.is_finite() {
        return Err(CoreError::Diverged);
    }
    Ok((total, breakdown))
}

/// Ambient gradients of the total objective for every model parameter.
pub fn gradients(
    params: &ModelParams,
    triplets: &[Triplet],
    cfg: &LossConfig,
) -> Result<(ParamGrads, f64, LossBreakdown)> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    let tape = Tape::new();
    let mut leaf_indices = Vec::new();
    let gp = lift_params(params, &mut |x| {
        let v = tape.leaf(x);
        leaf_indices.push(v.index());
        v
    });
    let (total, breakdown) = objective_r(triplets, &gp, cfg, None);
    if !total.value().is_finite() {
        return Err(CoreError::Diverged);
    }
    let adjoints = tape.gradients(total);
    let mut flat = leaf_indices.iter().map(|&i| adjoints[i]);
    // Consume in the exact order lift_params visited the parameters.
    let take_mat = |m: &Vec<Vec<f64>>, it: &mut dyn Iterator<Item = f64>| -> Vec<Vec<f64>> {
        m.iter()
            .map(|row| row.iter().map(|_| it.next().unwrap()).collect())
            .collect()
    };
    let adapter = take_mat(&params.adapter, &mut flat);
    let layers = params
        .layers
        .iter()
        .map(|m| take_mat(m, &mut flat))
        .collect();
    let mu_head = params
        .mu_head
        .iter()
        .map(|m| take_mat(m, &mut flat))
        .collect();
    let kappa_weights = params.kappa_weights.iter().map(|_| flat.next().unwrap()).collect();
    let kappa_bias = flat.next().unwrap();
    debug_assert!(flat.next().is_none());
    Ok((
        ParamGrads {
            adapter,
            layers,
            mu_head,
            kappa_weights,
            kappa_bias,
        },
        total.value(),
        breakdown,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{apply_matrix, normalize, random_rotation, NORM_EPS};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> UnitVector {
        normalize(v, NORM_EPS).unwrap()
    }

    #[test]
    fn welsch_closed_forms() {
        assert_abs_diff_eq!(welsch(0.0, 0.4).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            welsch(0.4, 0.4).unwrap(),
            1.0 - (-0.5f64).exp(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            welsch(std::f64::consts::PI, 0.4).unwrap(),
            1.0,
            epsilon = 1e-10
        );
        assert!(welsch(1.0, 0.0).is_err());
    }

    #[test]
    fn geometric_margin_cases() {
        let cfg = LossConfig::default();
        let zc = unit(&[0.0, 0.0, 1.0]);
        let zp = unit(&[1.0, 0.0, 0.0]);
        let zn = unit(&[0.0, 1.0, 0.0]);
        // Equal angles: hinge sits exactly at the margin.
        assert_abs_diff_eq!(
            geometric_triplet_loss(&zp, &zc, &zn, &cfg).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        // Parent colocated, negative antipodal: saturated to zero.
        let l = geometric_triplet_loss(&zc, &zc, &unit(&[0.0, 0.0, -1.0]), &cfg).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-9);
        // Worst ordering: margin + 1 - 0 (up to the arccos clamp band).
        let l = geometric_triplet_loss(&unit(&[0.0, 0.0, -1.0]), &zc, &zc, &cfg).unwrap();
        assert_abs_diff_eq!(l, 1.5, epsilon = 1e-5);
    }

    #[test]
    fn geometric_rotational_invariance() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let d = 6;
        let sample = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            unit(&v)
        };
        let zp = sample(&mut rng);
        let zc = sample(&mut rng);
        let zn = sample(&mut rng);
        let base = geometric_triplet_loss(&zp, &zc, &zn, &cfg).unwrap();
        for _ in 0..100 {
            let rot = random_rotation(d, &mut rng);
            let rotate = |z: &UnitVector| {
                UnitVector::from_normalized(apply_matrix(&rot, z.as_slice()))
            };
            let l =
                geometric_triplet_loss(&rotate(&zp), &rotate(&zc), &rotate(&zn), &cfg).unwrap();
            assert_abs_diff_eq!(l, base, epsilon = 1e-9);
        }
    }

    #[test]
    fn vmf_triplet_margin_cases() {
        let cfg = LossConfig::default();
        let mu = unit(&[0.0, 0.0, 1.0]);
        let vc = VmfParams {
            mu: mu.clone(),
            kappa: 4.0,
        };
        let vp = VmfParams {
            mu: unit(&[1.0, 0.0, 0.0]),
            kappa: 2.0,
        };
        // Identical parent and negative: KL terms cancel, hinge = margin.
        assert_abs_diff_eq!(
            vmf_triplet_loss(&vp, &vc, &vp.clone(), &cfg).unwrap(),
            0.3,
            epsilon = 1e-12
        );
        // Parent identical to child (KL 0), negative far: saturated.
        let vn = VmfParams {
            mu: unit(&[0.0, 0.0, -1.0]),
            kappa: 30.0,
        };
        let l = vmf_triplet_loss(&vc.clone(), &vc, &vn, &cfg).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn svgd_single_particle_at_equator_is_zero() {
        let mut cfg = LossConfig::default();
        cfg.alignment_enabled = false;
        let z = unit(&[1.0, 0.0, 0.0]);
        let field = svgd_transport_field(&[z.clone()], &[z.clone()], &cfg).unwrap();
        assert!(field[0].norm() <= 1e-9);
        let l = svgd_loss(&[z.clone()], &[z], &cfg).unwrap();
        assert!(l <= 1e-5);
    }

    #[test]
    fn structural_score_value() {
        let cfg = LossConfig {
            alignment_enabled: false,
            ..LossConfig::default()
        };
        let z = vec![0.5f64, (1.0f64 - 0.25 - 0.25).sqrt(), 0.5];
        let s = score_detached(&z, &[0.0, 0.0, 0.0], &cfg);
        assert_abs_diff_eq!(s[2], 0.5 / (1.0 - 0.25 + STRUCT_EPS), epsilon = 1e-12);
        assert_abs_diff_eq!(s[2], 0.6667, epsilon = 1e-3);
    }

    #[test]
    fn svgd_field_tangency() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = 5;
        for kernel in [KernelKind::Vmf, KernelKind::Rbf, KernelKind::Imq] {
            let cfg = LossConfig {
                kernel_kind: kernel,
                ..LossConfig::default()
            };
            let batch: Vec<UnitVector> = (0..6)
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    unit(&v)
                })
                .collect();
            let anchors = batch.clone();
            let fields = svgd_transport_field(&batch, &anchors, &cfg).unwrap();
            for f in &fields {
                let inner: f64 = f
                    .base()
                    .as_slice()
                    .iter()
                    .zip(f.direction())
                    .map(|(a, b)| a * b)
                    .sum();
                assert!(inner.abs() <= 1e-8, "tangency violated: {inner}");
            }
        }
    }

    #[test]
    fn svgd_antipodal_pair_finite_positive() {
        let cfg = LossConfig::default();
        let a = unit(&[0.0, 0.0, 1.0]);
        let b = unit(&[0.3, 0.0, -1.0]);
        let l = svgd_loss(&[a.clone(), b.clone()], &[a, b], &cfg).unwrap();
        assert!(l.is_finite() && l > 0.0);
    }

    #[test]
    fn svgd_empty_batch_rejected() {
        let cfg = LossConfig::default();
        assert!(matches!(
            svgd_loss(&[], &[], &cfg),
            Err(CoreError::EmptyBatch)
        ));
    }

    fn make_triplets(rng: &mut ChaCha8Rng, n: usize, d_plm: usize) -> Vec<Triplet> {
        (0..n)
            .map(|i| {
                let f = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                    (0..d_plm).map(|_| rng.gen_range(-1.0..1.0)).collect()
                };
                Triplet {
                    child_id: format!("c{i}"),
                    parent_id: format!("p{i}"),
                    negative_id: format!("n{i}"),
                    child_feat: f(rng),
                    parent_feat: f(rng),
                    negative_feat: f(rng),
                }
            })
            .collect()
    }

    #[test]
    fn total_all_toggles_off_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ModelParams::init(6, 8, 8, 2, 100.0, &mut rng);
        let triplets = make_triplets(&mut rng, 4, 8);
        let cfg = LossConfig {
            geom_enabled: false,
            prob_enabled: false,
            svgd_enabled: false,
            ..LossConfig::default()
        };
        let (total, bd) = total_objective(&triplets, &params, &cfg).unwrap();
        assert_eq!(total, 0.0);
        assert_eq!(bd.geom, 0.0);
        assert_eq!(bd.prob, 0.0);
        assert_eq!(bd.svgd, 0.0);
    }

    #[test]
    fn total_geom_only_identical_angles() {
        // Child at the pole, parent and negative orthogonal to it and each
        // other: every triplet contributes exactly the margin.
        let d = 3;
        let eye = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect()
        };
        let params = ModelParams {
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
        };
        let half_pi = std::f64::consts::FRAC_PI_2;
        let triplets: Vec<Triplet> = (0..3)
            .map(|i| Triplet {
                child_id: format!("c{i}"),
                parent_id: format!("p{i}"),
                negative_id: format!("n{i}"),
                child_feat: vec![0.0, 0.0, 0.0],     // -> pole
                parent_feat: vec![half_pi, 0.0, 0.0], // -> e1
                negative_feat: vec![0.0, half_pi, 0.0], // -> e2
            })
            .collect();
        let cfg = LossConfig {
            prob_enabled: false,
            svgd_enabled: false,
            ..LossConfig::default()
        };
        let (total, bd) = total_objective(&triplets, &params, &cfg).unwrap();
        assert_abs_diff_eq!(bd.geom, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(total, 0.35, epsilon = 1e-9);
    }

    #[test]
    fn total_deterministic_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ModelParams::init(6, 8, 8, 2, 100.0, &mut rng);
        let triplets = make_triplets(&mut rng, 5, 8);
        let cfg = LossConfig::default();
        let (a, _) = total_objective(&triplets, &params, &cfg).unwrap();
        let (b, _) = total_objective(&triplets, &params, &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn ablation_exactness() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ModelParams::init(6, 8, 8, 2, 100.0, &mut rng);
        let triplets = make_triplets(&mut rng, 4, 8);
        let cfg = LossConfig::default();
        let (total, bd) = total_objective(&triplets, &params, &cfg).unwrap();
        let no_prob = LossConfig {
            prob_enabled: false,
            ..cfg.clone()
        };
        let (total_np, _) = total_objective(&triplets, &params, &no_prob).unwrap();
        assert_abs_diff_eq!(
            total - total_np,
            cfg.lambda_prob * bd.prob,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gradients_zero_weight_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ModelParams::init(5, 6, 6, 2, 100.0, &mut rng);
        let triplets = make_triplets(&mut rng, 3, 6);
        let cfg = LossConfig {
            lambda_geo: 0.0,
            lambda_prob: 0.0,
            lambda_svgd: 0.0,
            ..LossConfig::default()
        };
        let (g, total, _) = gradients(&params, &triplets, &cfg).unwrap();
        assert_eq!(total, 0.0);
        assert!(g.adapter.iter().flatten().all(|&x| x == 0.0));
        assert!(g
            .layers
            .iter()
            .flatten()
            .flatten()
            .all(|&x| x == 0.0));
        assert_eq!(g.kappa_bias, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = ModelParams::init(4, 5, 5, 2, 100.0, &mut rng);
        let triplets = make_triplets(&mut rng, 3, 5);
        let cfg = LossConfig::default();
        let (g, _, _) = gradients(&params, &triplets, &cfg).unwrap();
        // Pin the detached SVGD anchors so finite differences respect the
        // same stop-gradient boundary as the analytic gradients.
        let anchors = current_fields(&triplets, &params, &cfg).unwrap();
        let h = 1e-5;
        let check = |get: &dyn Fn(&ModelParams) -> f64,
                     set: &dyn Fn(&mut ModelParams, f64),
                     analytic: f64| {
            let base = get(&params);
            let mut p = params.clone();
            set(&mut p, base + h);
            let (lp, _) = total_objective_pinned(&triplets, &p, &cfg, &anchors).unwrap();
            set(&mut p, base - h);
            let (lm, _) = total_objective_pinned(&triplets, &p, &cfg, &anchors).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(analytic.abs()).max(1e-6);
            assert!(
                (fd - analytic).abs() / denom <= 1e-3,
                "fd {fd} vs analytic {analytic}"
            );
        };
        // Spot-check a few coordinates in each parameter group.
        for (i, j) in [(0usize, 0usize), (1, 2), (3, 4)] {
            check(
                &|p| p.adapter[i][j],
                &move |p, v| p.adapter[i][j] = v,
                g.adapter[i][j],
            );
        }
        for (l, i, j) in [(0usize, 0usize, 1usize), (1, 2, 3)] {
            check(
                &move |p| p.layers[l][i][j],
                &move |p, v| p.layers[l][i][j] = v,
                g.layers[l][i][j],
            );
            check(
                &move |p| p.mu_head[l][i][j],
                &move |p, v| p.mu_head[l][i][j] = v,
                g.mu_head[l][i][j],
            );
        }
        check(
            &|p| p.kappa_weights[1],
            &|p, v| p.kappa_weights[1] = v,
            g.kappa_weights[1],
        );
        check(&|p| p.kappa_bias, &|p, v| p.kappa_bias = v, g.kappa_bias);
    }
}
