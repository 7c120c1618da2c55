//! Fast self-verification: gradient checks, the objective-decomposition
//! identity, kinematics round-trips and heuristic/generator agreement.

use demogen_autodiff::check::finite_diff_check;
use demogen_autodiff::{Graph, Tensor};
use rand::Rng;

use crate::evaluation::heuristics::HeuristicConfig;
use crate::labels::Scenario;
use crate::model::config::{ModelConfig, VariantKind};
use crate::model::variants::LatentNoise;
use crate::model::Model;
use crate::rng::SeedTree;
use crate::synthworld::dataset::{agrees, build_dataset};
use crate::synthworld::arm;
use crate::training::loss::{build_record_loss, RecordScales};
use crate::training::vlb::{vlb_decomposition_check, VLB_TOLERANCE};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn toy_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(Scenario::Dab, VariantKind::Vae);
    cfg.image_size = 32;
    cfg
}

fn check_op_gradients(tree: &SeedTree) -> CheckResult {
    let run = || -> Result<f64, String> {
        let mut worst: f64 = 0.0;
        let mut rng = tree.stream("op-grad", &[]);
        for case in 0..5u64 {
            let mut g = Graph::<f64>::new();
            let mut vals = || (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            let (loss, params) = match case {
                0 => {
                    let v = vals();
                    let x = g.param(Tensor::new(vec![4], v[..4].to_vec()).unwrap()).unwrap();
                    let w = g.param(Tensor::new(vec![3, 4], v[4..16].to_vec()).unwrap()).unwrap();
                    let b = g.param(Tensor::new(vec![3], v[16..19].to_vec()).unwrap()).unwrap();
                    let y = g.dense(x, w, b).unwrap();
                    let sq = g.mul(y, y).unwrap();
                    (g.mean_all(sq).unwrap(), vec![x, w, b])
                }
                1 => {
                    let v = vals();
                    let x = g.param(Tensor::new(vec![2, 8], v[..16].to_vec()).unwrap()).unwrap();
                    let k = g.param(Tensor::new(vec![2, 2, 3], v[16..28].to_vec()).unwrap()).unwrap();
                    let b = g.param(Tensor::new(vec![2], v[28..30].to_vec()).unwrap()).unwrap();
                    let y = g.conv1d(x, k, b, 2, 2).unwrap();
                    let sq = g.mul(y, y).unwrap();
                    (g.mean_all(sq).unwrap(), vec![x, k, b])
                }
                2 => {
                    let v: Vec<f64> = (0..44).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let x = g.param(Tensor::new(vec![1, 5, 5], v[..25].to_vec()).unwrap()).unwrap();
                    let k = g.param(Tensor::new(vec![2, 1, 3, 3], v[25..43].to_vec()).unwrap()).unwrap();
                    let b = g.param(Tensor::new(vec![2], vec![v[43], -v[43]]).unwrap()).unwrap();
                    let y = g.conv2d(x, k, b, 2, 1).unwrap();
                    let sq = g.mul(y, y).unwrap();
                    (g.mean_all(sq).unwrap(), vec![x, k, b])
                }
                3 => {
                    let v = vals();
                    let mu = g.param(Tensor::new(vec![4], v[..4].to_vec()).unwrap()).unwrap();
                    let lv = g.param(Tensor::new(vec![4], v[4..8].to_vec()).unwrap()).unwrap();
                    let eps = g.input(Tensor::new(vec![4], v[8..12].to_vec()).unwrap()).unwrap();
                    let c = g.reparameterize(mu, lv, eps).unwrap();
                    let sq = g.mul(c, c).unwrap();
                    let m = g.mean_all(sq).unwrap();
                    let kl = g.kl_gaussian_std(mu, lv).unwrap();
                    (g.add(m, kl).unwrap(), vec![mu, lv])
                }
                _ => {
                    let v = vals();
                    let z = g.param(Tensor::new(vec![3], v[..3].to_vec()).unwrap()).unwrap();
                    let n = g.input(Tensor::new(vec![3], v[3..6].to_vec()).unwrap()).unwrap();
                    let y = g.gumbel_softmax(z, n, 0.7).unwrap();
                    let s = g.sum_all(y).unwrap();
                    let ce = g.softmax_cross_entropy(z, 1).unwrap();
                    (g.add(s, ce).unwrap(), vec![z])
                }
            };
            let report = finite_diff_check(&mut g, loss, &params, 1e-3, 8, &mut rng)
                .map_err(|e| e.to_string())?;
            worst = worst.max(report.max_rel_err);
        }
        Ok(worst)
    };
    match run() {
        Ok(err) => CheckResult {
            name: "gradient-ops",
            passed: err < 1e-4,
            detail: format!("max relative error {err:.2e} (tolerance 1e-4)"),
        },
        Err(e) => CheckResult {
            name: "gradient-ops",
            passed: false,
            detail: e,
        },
    }
}

fn check_full_loss_gradient(tree: &SeedTree) -> CheckResult {
    let run = || -> Result<f64, String> {
        let ds = build_dataset(Scenario::Dab, 20, 1, 32, tree.derive("data", &[]))
            .map_err(|e| e.to_string())?;
        let mut worst: f64 = 0.0;
        for (case, variant) in [VariantKind::Vae, VariantKind::Gs].into_iter().enumerate() {
            let mut cfg = toy_config();
            cfg.variant = variant;
            let mut init = tree.stream("full-init", &[case as u64]);
            let model = Model::init(cfg, &mut init).map_err(|e| e.to_string())?;
            let mut graph = Graph::<f64>::new();
            let mut noise_rng = tree.stream("full-noise", &[case as u64]);
            let noise = LatentNoise::<f64>::draw(&model.config, &mut noise_rng);
            let scales = RecordScales {
                alpha: 1.0,
                beta: 0.1,
                gamma: 10.0,
            };
            let nodes =
                build_record_loss(&mut graph, &model, &ds.records[case], &noise, 0.7, &scales)
                    .map_err(|e| e.to_string())?;
            let probes: Vec<_> = nodes
                .used_params
                .iter()
                .step_by(9)
                .map(|&(_, leaf)| leaf)
                .collect();
            let mut rng = tree.stream("full-fd", &[case as u64]);
            let report = finite_diff_check(&mut graph, nodes.total, &probes, 3e-5, 2, &mut rng)
                .map_err(|e| e.to_string())?;
            worst = worst.max(report.max_rel_err);
        }
        Ok(worst)
    };
    match run() {
        Ok(err) => CheckResult {
            name: "gradient-full-loss",
            passed: err < 1e-4,
            detail: format!("max relative error {err:.2e} (tolerance 1e-4)"),
        },
        Err(e) => CheckResult {
            name: "gradient-full-loss",
            passed: false,
            detail: e,
        },
    }
}

fn check_vlb(tree: &SeedTree) -> CheckResult {
    let run = || -> Result<f64, String> {
        let ds = build_dataset(Scenario::Dab, 20, 1, 32, tree.derive("vlb-data", &[]))
            .map_err(|e| e.to_string())?;
        let mut init = tree.stream("vlb-init", &[]);
        let model = Model::init(toy_config(), &mut init).map_err(|e| e.to_string())?;
        let mut worst: f64 = 0.0;
        for b in 0..3u64 {
            let batch: Vec<_> = ds.records[(b as usize * 2)..(b as usize * 2 + 2)].iter().collect();
            let report = vlb_decomposition_check(&model, &batch, tree.derive("vlb", &[b]))
                .map_err(|e| e.to_string())?;
            worst = worst.max(report.max_gap);
        }
        Ok(worst)
    };
    match run() {
        Ok(gap) => CheckResult {
            name: "vlb-decomposition",
            passed: gap < VLB_TOLERANCE,
            detail: format!("max term gap {gap:.2e} (tolerance {VLB_TOLERANCE:.0e})"),
        },
        Err(e) => CheckResult {
            name: "vlb-decomposition",
            passed: false,
            detail: e,
        },
    }
}

fn check_kinematics(tree: &SeedTree) -> CheckResult {
    let mut rng = tree.stream("kinematics", &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        match arm::ik(p) {
            Ok((q0, q1)) => {
                let (x, y) = arm::fk_planar(q0, q1);
                worst = worst.max((x - p.0).abs()).max((y - p.1).abs());
            }
            Err(e) => {
                return CheckResult {
                    name: "fk-ik-round-trip",
                    passed: false,
                    detail: format!("table point {p:?} unreachable: {e}"),
                }
            }
        }
    }
    CheckResult {
        name: "fk-ik-round-trip",
        passed: worst <= 1e-9,
        detail: format!("max round-trip error {worst:.2e} over 1000 points (tolerance 1e-9)"),
    }
}

fn check_heuristic_oracle(tree: &SeedTree) -> CheckResult {
    let cfg = HeuristicConfig::default();
    let run = || -> Result<(usize, usize), String> {
        let mut total = 0;
        let mut matched = 0;
        for (scenario, n_base, aug) in [(Scenario::Dab, 40, 5), (Scenario::Pour, 24, 3)] {
            let ds = build_dataset(scenario, n_base, aug, 64, tree.derive("oracle", &[n_base as u64]))
                .map_err(|e| e.to_string())?;
            for rec in &ds.records {
                total += 1;
                if agrees(rec, &cfg) {
                    matched += 1;
                }
            }
        }
        Ok((matched, total))
    };
    match run() {
        Ok((matched, total)) => CheckResult {
            name: "heuristic-oracle",
            passed: matched == total,
            detail: format!("{matched}/{total} labelled records agree with the classifiers"),
        },
        Err(e) => CheckResult {
            name: "heuristic-oracle",
            passed: false,
            detail: e,
        },
    }
}

/// Run every self-check; each reports independently.
pub fn run_selftest(seed: u64) -> SelftestReport {
    let tree = SeedTree::new(seed).child("selftest");
    SelftestReport {
        checks: vec![
            check_op_gradients(&tree),
            check_full_loss_gradient(&tree),
            check_vlb(&tree),
            check_kinematics(&tree),
            check_heuristic_oracle(&tree),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes_from_a_clean_state() {
        let report = run_selftest(0);
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
