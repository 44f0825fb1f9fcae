//! The standard synthetic benchmark used to compare the three losses.
//!
//! Each seed draws one world. The training cameras and a held-out camera set
//! (more queries, different camera seed) are placed in it; encoders are
//! trained on all map×map and map×query pairs of the training cameras and
//! evaluated on the held-out ones.

use fovreg::dataset::{build_pairs, generate_synthetic_world, SyntheticWorldConfig};
use fovreg::losses::LossKind;
use fovreg::metrics::{GroundTruth, KlGroundTruth};
use fovreg::sampler::BatchSpec;
use fovreg::trainer::{evaluate_snapshots, train, CurvePoint};

use crate::config::{EvalSection, ExperimentConfig, PairsConfig, TrainSection};
use crate::CliError;

pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const ITERATIONS: u64 = 20_000;
pub const SNAPSHOT_PERIOD: u64 = 1_000;
pub const HELD_OUT_QUERIES: usize = 500;
const HELD_OUT_CAMERA_OFFSET: u64 = 1_000;

pub fn training_world(seed: u64) -> SyntheticWorldConfig {
    SyntheticWorldConfig {
        seed,
        camera_seed: Some(seed),
        ..SyntheticWorldConfig::default()
    }
}

pub fn held_out_world(seed: u64) -> SyntheticWorldConfig {
    SyntheticWorldConfig {
        camera_seed: Some(seed + HELD_OUT_CAMERA_OFFSET),
        n_query: HELD_OUT_QUERIES,
        ..training_world(seed)
    }
}

/// Full experiment config for one seed, training with `loss`.
pub fn experiment_config(seed: u64, loss: LossKind) -> ExperimentConfig {
    ExperimentConfig {
        world: training_world(seed),
        pairs: PairsConfig {
            n_pairs: None,
            seed,
        },
        train: TrainSection {
            loss,
            iterations: ITERATIONS,
            batch: BatchSpec::new(16),
            snapshot_period: SNAPSHOT_PERIOD,
            hidden: vec![128, 64],
            d_out: 32,
            activation: fovreg::encoder::Activation::Relu,
            init_seed: seed,
            sampler_seed: seed + 7,
            sgd: None,
            step_period: 250_000,
        },
        eval: EvalSection {
            dist_m: crate::config::DEFAULT_DIST_M,
            angle_deg: crate::config::DEFAULT_ANGLE_DEG,
            bins: 100,
            smoothing: 1e-10,
            max_kl_pairs: 1_000_000,
            kl_seed: seed,
            kl_ground_truth: KlGroundTruth::Graded,
        },
    }
}

/// Same as [`experiment_config`] with the held-out camera set as world.
pub fn held_out_config(seed: u64, loss: LossKind) -> ExperimentConfig {
    ExperimentConfig {
        world: held_out_world(seed),
        ..experiment_config(seed, loss)
    }
}

#[derive(Debug, Clone)]
pub struct LossCurve {
    pub loss: LossKind,
    pub curve: Vec<CurvePoint>,
}

impl LossCurve {
    pub fn final_point(&self) -> &CurvePoint {
        self.curve
            .last()
            .expect("a run has at least the initial snapshot")
    }
}

/// Trains one encoder per loss on the seed's training cameras and evaluates
/// every snapshot on the held-out cameras. `iterations` overrides the
/// benchmark length (the snapshot period scales with it).
pub fn run_seed(
    seed: u64,
    losses: &[LossKind],
    iterations: u64,
) -> Result<Vec<LossCurve>, CliError> {
    let train_ds = generate_synthetic_world(&training_world(seed))?;
    let eval_ds = generate_synthetic_world(&held_out_world(seed))?;
    let base = experiment_config(seed, LossKind::Mse);
    let pairs = build_pairs(&train_ds, base.pairs.n_pairs, base.pairs.seed)?;
    let gt = GroundTruth::from_poses(&eval_ds, base.eval.dist_m, base.eval.angle_deg.to_radians());
    let eval_cfg = base.eval.to_eval_config();
    losses
        .iter()
        .map(|&loss| {
            let mut section = experiment_config(seed, loss).train;
            section.snapshot_period = (SNAPSHOT_PERIOD * iterations / ITERATIONS).max(1);
            section.iterations = iterations;
            let run = train(&train_ds, &pairs, &section.to_train_config())?;
            let curve = evaluate_snapshots(&run.snapshots, &eval_ds, &gt, &eval_cfg)?;
            Ok(LossCurve { loss, curve })
        })
        .collect()
}
