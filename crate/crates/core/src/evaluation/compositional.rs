//! Compositional conditioning over the three press-property groups: every
//! combination of effort, length and speed labels, spatial axes left to the
//! prior. A sample counts as correct only when all three heuristics match.

use rayon::prelude::*;

use crate::conditioning::sample::{sample_compositional, AxisSource, UserSpec};
use crate::conditioning::table::LabelGaussianTable;
use crate::evaluation::heuristics::{classify_effort, HeuristicConfig};
use crate::evaluation::report::{ComboResult, CompositionalReport};
use crate::evaluation::{split_channels, EvalError};
use crate::labels::{dab, Scenario};
use crate::model::Model;
use crate::rng::SeedTree;
use crate::synthworld::scene::{render_scene, SceneSpec};

/// The 8 effort/length/speed combinations in a fixed order.
pub fn press_combos() -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(8);
    for e in 0..2 {
        for l in 0..2 {
            for s in 0..2 {
                out.push([e, l, s]);
            }
        }
    }
    out
}

pub fn plan_string(plan: &[AxisSource]) -> Vec<String> {
    plan.iter()
        .map(|s| match s {
            AxisSource::Label { group, label } => format!("label:{group}={label}"),
            AxisSource::Prior => "prior".to_string(),
        })
        .collect()
}

pub fn eval_compositional(
    model: &Model,
    table: &LabelGaussianTable,
    scenes: &[SceneSpec],
    samples_per_combo: usize,
    seed: u64,
    cfg: &HeuristicConfig,
) -> Result<CompositionalReport, EvalError> {
    if model.config.scenario != Scenario::Dab {
        return Err(EvalError::Config(
            "compositional evaluation targets the dab scenario".into(),
        ));
    }
    let schema = model.config.schema();
    let tree = SeedTree::new(seed).child("eval-compose");
    let mut combos = Vec::with_capacity(8);
    for combo in press_combos() {
        let spec = UserSpec::empty(schema.group_count())
            .with(dab::EFFORT, combo[0])
            .with(dab::LENGTH, combo[1])
            .with(dab::SPEED, combo[2]);

        let scene_scores: Vec<(usize, usize, Vec<String>)> = scenes
            .par_iter()
            .enumerate()
            .map(|(s_idx, scene)| {
                let image = render_scene(scene, tree.derive("render", &[s_idx as u64]))?;
                let (gen, plan) = sample_compositional(
                    model,
                    table,
                    &image,
                    &spec,
                    samples_per_combo,
                    tree.derive(
                        "draw-seed",
                        &[combo[0] as u64, combo[1] as u64, combo[2] as u64, s_idx as u64],
                    ),
                )?;
                let mut correct = 0;
                for traj in &gen.trajectories {
                    let (_, efforts) = split_channels(traj, model.config.joint_count)?;
                    let c = classify_effort(&efforts, cfg);
                    if c.effort == combo[0] && c.length == combo[1] && c.speed == combo[2] {
                        correct += 1;
                    }
                }
                Ok((correct, samples_per_combo, plan_string(&plan)))
            })
            .collect::<Result<_, EvalError>>()?;

        let correct: usize = scene_scores.iter().map(|s| s.0).sum();
        let total: usize = scene_scores.iter().map(|s| s.1).sum();
        combos.push(ComboResult {
            labels: vec![
                schema.groups[dab::EFFORT].labels[combo[0]].clone(),
                schema.groups[dab::LENGTH].labels[combo[1]].clone(),
                schema.groups[dab::SPEED].labels[combo[2]].clone(),
            ],
            label_indices: combo.to_vec(),
            plan: scene_scores
                .first()
                .map(|s| s.2.clone())
                .unwrap_or_default(),
            accuracy: correct as f64 / total.max(1) as f64,
            samples: total,
        });
    }
    let mean_accuracy = combos.iter().map(|c| c.accuracy).sum::<f64>() / combos.len() as f64;
    Ok(CompositionalReport {
        combos,
        mean_accuracy,
    })
}
