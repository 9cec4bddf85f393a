//! The training loop: per-epoch triplet resampling, mini-batches with
//! gradient accumulation, Riemannian Adam for the sphere-constrained layer
//! rows, and standard Adam for the Euclidean adapter and concentration
//! head. Fully deterministic given the configured seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::OptimizerSnapshot;
use crate::config::RunConfig;
use crate::encoder::{encode, ModelParams};
use crate::error::{CoreError, Result};
use crate::losses::{gradients, LossBreakdown, ParamGrads, Triplet};
use crate::manifold::UnitVector;
use crate::optimizer::{
    adam_step, riemannian_adam_step, AdamHyper, AdamState, RiemannianAdamState, DRIFT_GUARD,
};
use crate::taxonomy::{sample_triplets, Taxonomy};

/// Model parameters plus optimizer moments; survives across epochs and can
/// be checkpointed for exact resumption.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub params: ModelParams,
    pub opt: OptimizerSnapshot,
}

impl Trainer {
    /// Fresh parameters and zeroed optimizer state from the configuration.
    pub fn new(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParams::init(
            cfg.model.d,
            cfg.d_plm(),
            cfg.model.hidden,
            cfg.model.depth,
            cfg.model.kappa_max,
            rng,
        );
        let mut params = params;
        params.identity_mu = cfg.model.identity_mu;
        params.constant_kappa = cfg.model.constant_kappa;
        let opt = fresh_optimizer(&params, cfg);
        Ok(Trainer { params, opt })
    }

    /// Resumes from checkpointed parameters, reusing the saved optimizer
    /// moments when present.
    pub fn from_parts(
        params: ModelParams,
        opt: Option<OptimizerSnapshot>,
        cfg: &RunConfig,
    ) -> Self {
        let opt = opt.unwrap_or_else(|| fresh_optimizer(&params, cfg));
        Trainer { params, opt }
    }
}

fn fresh_optimizer(params: &ModelParams, cfg: &RunConfig) -> OptimizerSnapshot {
    let sph = AdamHyper {
        eta: cfg.training.lr_spherical,
        ..AdamHyper::default()
    };
    let euc = AdamHyper {
        eta: cfg.training.lr_euclidean,
        ..AdamHyper::default()
    };
    let rows = |stack: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<RiemannianAdamState>> {
        stack
            .iter()
            .map(|m| {
                m.iter()
                    .map(|row| RiemannianAdamState::new(row.len(), sph))
                    .collect()
            })
            .collect()
    };
    OptimizerSnapshot {
        adapter: AdamState::new(params.d * params.d_plm, euc),
        kappa: AdamState::new(params.d + 1, euc),
        layer_rows: rows(&params.layers),
        mu_rows: rows(&params.mu_head),
    }
}

/// Verifies that every taxonomy node has a feature row of the right width.
pub fn check_feature_coverage(
    t: &Taxonomy,
    features: &BTreeMap<String, Vec<f64>>,
    d_plm: usize,
) -> Result<()> {
    let missing: Vec<&str> = t
        .ids()
        .iter()
        .filter(|id| !features.contains_key(*id))
        .map(|id| id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(CoreError::MissingFeatures(missing.join(", ")));
    }
    for (id, row) in features {
        if t.index_of(id).is_ok() && row.len() != d_plm {
            return Err(CoreError::DimensionMismatch {
                expected: d_plm,
                got: row.len(),
            });
        }
    }
    Ok(())
}

fn zero_like(p: &ModelParams) -> ParamGrads {
    ParamGrads {
        adapter: p.adapter.iter().map(|r| vec![0.0; r.len()]).collect(),
        layers: p
            .layers
            .iter()
            .map(|m| m.iter().map(|r| vec![0.0; r.len()]).collect())
            .collect(),
        mu_head: p
            .mu_head
            .iter()
            .map(|m| m.iter().map(|r| vec![0.0; r.len()]).collect())
            .collect(),
        kappa_weights: vec![0.0; p.kappa_weights.len()],
        kappa_bias: 0.0,
    }
}

fn accumulate(into: &mut ParamGrads, g: &ParamGrads, w: f64) {
    let add_mat = |a: &mut Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
        for (ra, rb) in a.iter_mut().zip(b) {
            for (x, y) in ra.iter_mut().zip(rb) {
                *x += w * y;
            }
        }
    };
    add_mat(&mut into.adapter, &g.adapter);
    for (a, b) in into.layers.iter_mut().zip(&g.layers) {
        add_mat(a, b);
    }
    for (a, b) in into.mu_head.iter_mut().zip(&g.mu_head) {
        add_mat(a, b);
    }
    for (x, y) in into.kappa_weights.iter_mut().zip(&g.kappa_weights) {
        *x += w * y;
    }
    into.kappa_bias += w * g.kappa_bias;
}

fn apply_step(trainer: &mut Trainer, grads: &ParamGrads) -> Result<()> {
    let p = &mut trainer.params;
    let opt = &mut trainer.opt;

    // Euclidean adapter: one flat Adam block.
    let mut flat_p: Vec<f64> = p.adapter.iter().flatten().copied().collect();
    let flat_g: Vec<f64> = grads.adapter.iter().flatten().copied().collect();
    adam_step(&mut opt.adapter, &mut flat_p, &flat_g)?;
    let mut it = flat_p.into_iter();
    for row in p.adapter.iter_mut() {
        for x in row.iter_mut() {
            *x = it.next().unwrap();
        }
    }

    // Concentration head: weights and bias in one block.
    let mut kp: Vec<f64> = p.kappa_weights.iter().copied().collect();
    kp.push(p.kappa_bias);
    let mut kg: Vec<f64> = grads.kappa_weights.clone();
    kg.push(grads.kappa_bias);
    adam_step(&mut opt.kappa, &mut kp, &kg)?;
    p.kappa_bias = kp.pop().unwrap();
    p.kappa_weights = kp;

    // Sphere-constrained rows.
    fn step_stack(
        stack: &mut [Vec<Vec<f64>>],
        grad_stack: &[Vec<Vec<f64>>],
        states: &mut [Vec<RiemannianAdamState>],
    ) -> Result<()> {
        for ((mat, gmat), row_states) in stack.iter_mut().zip(grad_stack).zip(states) {
            for ((row, grow), st) in mat.iter_mut().zip(gmat).zip(row_states) {
                let z = UnitVector::from_normalized(row.clone());
                let next = riemannian_adam_step(st, &z, grow)?;
                *row = next.into_inner();
            }
        }
        Ok(())
    }
    step_stack(&mut p.layers, &grads.layers, &mut opt.layer_rows)?;
    step_stack(&mut p.mu_head, &grads.mu_head, &mut opt.mu_rows)?;

    // Safety net: the constrained steps preserve unit rows by construction.
    if p.max_row_norm_drift() > DRIFT_GUARD {
        p.renormalize_rows();
    }
    Ok(())
}

/// Runs the configured number of epochs and returns one loss breakdown per
/// epoch (term means over the epoch's optimizer steps). On divergence the
/// trainer retains the parameters of the last completed step.
pub fn run_training(
    cfg: &RunConfig,
    t: &Taxonomy,
    features: &BTreeMap<String, Vec<f64>>,
    trainer: &mut Trainer,
) -> Result<Vec<LossBreakdown>> {
    cfg.validate()?;
    check_feature_coverage(t, features, trainer.params.d_plm)?;
    let loss_cfg = cfg.loss_config()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
    let mut log = Vec::with_capacity(cfg.training.epochs);
    for _epoch in 0..cfg.training.epochs {
        let (id_triplets, _skipped) = sample_triplets(t, cfg.training.n_neg, &mut rng)?;
        let mut triplets: Vec<Triplet> = id_triplets
            .into_iter()
            .map(|tr| Triplet {
                child_feat: features[&tr.child].clone(),
                parent_feat: features[&tr.parent].clone(),
                negative_feat: features[&tr.negative].clone(),
                child_id: tr.child,
                parent_id: tr.parent,
                negative_id: tr.negative,
            })
            .collect();
        triplets.shuffle(&mut rng);

        let batches: Vec<&[Triplet]> = triplets.chunks(cfg.training.batch_size).collect();
        let mut epoch_sum = LossBreakdown::default();
        let mut steps = 0usize;
        for group in batches.chunks(cfg.training.grad_accum) {
            // Mean of micro-batch gradients so the step size is invariant
            // to the accumulation count.
            let mut acc = zero_like(&trainer.params);
            let mut group_bd = LossBreakdown::default();
            let w = 1.0 / group.len() as f64;
            for batch in group {
                let (g, _, bd) = gradients(&trainer.params, batch, &loss_cfg)?;
                accumulate(&mut acc, &g, w);
                group_bd.geom += w * bd.geom;
                group_bd.prob += w * bd.prob;
                group_bd.svgd += w * bd.svgd;
                group_bd.total += w * bd.total;
            }
            apply_step(trainer, &acc)?;
            epoch_sum.geom += group_bd.geom;
            epoch_sum.prob += group_bd.prob;
            epoch_sum.svgd += group_bd.svgd;
            epoch_sum.total += group_bd.total;
            steps += 1;
        }
        let n = steps.max(1) as f64;
        log.push(LossBreakdown {
            geom: epoch_sum.geom / n,
            prob: epoch_sum.prob / n,
            svgd: epoch_sum.svgd / n,
            total: epoch_sum.total / n,
        });
    }
    Ok(log)
}

/// Encodes every taxonomy node, index-aligned with the taxonomy.
pub fn encode_taxonomy(
    params: &ModelParams,
    t: &Taxonomy,
    features: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<UnitVector>> {
    check_feature_coverage(t, features, params.d_plm)?;
    t.ids().iter().map(|id| encode(params, &features[id])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{planted_features, planted_tree};

    fn small_setup() -> (RunConfig, Taxonomy, BTreeMap<String, Vec<f64>>) {
        let cfg = RunConfig::from_toml_str(
            "[model]\nd = 8\nhidden = 8\n\
             [training]\nepochs = 2\nbatch_size = 8\ngrad_accum = 2\nn_neg = 1\nseed = 5\n",
        )
        .unwrap();
        let t = Taxonomy::from_edges(&planted_tree(3, 2), None).unwrap();
        let f = planted_features(&t, 8, 0.1, 5).unwrap();
        (cfg, t, f)
    }

    #[test]
    fn zero_epochs_leaves_initialization_untouched() {
        let (mut cfg, t, f) = small_setup();
        cfg.training.epochs = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut trainer = Trainer::new(&cfg, &mut rng).unwrap();
        let before = trainer.clone();
        let log = run_training(&cfg, &t, &f, &mut trainer).unwrap();
        assert!(log.is_empty());
        assert_eq!(trainer, before);
    }

    #[test]
    fn fixed_seed_gives_identical_loss_logs() {
        let (cfg, t, f) = small_setup();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut trainer = Trainer::new(&cfg, &mut rng).unwrap();
            run_training(&cfg, &t, &f, &mut trainer).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.total.to_bits(), y.total.to_bits());
            assert_eq!(x.geom.to_bits(), y.geom.to_bits());
        }
    }

    #[test]
    fn rows_stay_unit_through_training() {
        let (cfg, t, f) = small_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut trainer = Trainer::new(&cfg, &mut rng).unwrap();
        run_training(&cfg, &t, &f, &mut trainer).unwrap();
        assert!(trainer.params.max_row_norm_drift() <= 1e-6);
    }

    #[test]
    fn missing_feature_lists_node_ids() {
        let (cfg, t, mut f) = small_setup();
        f.remove("n3");
        f.remove("n7");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut trainer = Trainer::new(&cfg, &mut rng).unwrap();
        match run_training(&cfg, &t, &f, &mut trainer).unwrap_err() {
            CoreError::MissingFeatures(list) => {
                assert!(list.contains("n3") && list.contains("n7"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn descent_on_planted_tree() {
        // The per-epoch log resamples negatives, so compare the objective
        // on one fixed triplet set before and after training instead.
        let (mut cfg, t, f) = small_setup();
        cfg.training.epochs = 10;
        cfg.training.n_neg = 4;
        let loss_cfg = cfg.loss_config().unwrap();
        let mut eval_rng = ChaCha8Rng::seed_from_u64(100);
        let (ids, _) = sample_triplets(&t, 4, &mut eval_rng).unwrap();
        let eval_set: Vec<Triplet> = ids
            .into_iter()
            .map(|tr| Triplet {
                child_feat: f[&tr.child].clone(),
                parent_feat: f[&tr.parent].clone(),
                negative_feat: f[&tr.negative].clone(),
                child_id: tr.child,
                parent_id: tr.parent,
                negative_id: tr.negative,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut trainer = Trainer::new(&cfg, &mut rng).unwrap();
        let (before, _) =
            crate::losses::total_objective(&eval_set, &trainer.params, &loss_cfg).unwrap();
        run_training(&cfg, &t, &f, &mut trainer).unwrap();
        let (after, _) =
            crate::losses::total_objective(&eval_set, &trainer.params, &loss_cfg).unwrap();
        assert!(after < before, "no descent: before {before} after {after}");
    }
}
