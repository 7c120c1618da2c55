//! Named parameter store with fan-in-scaled uniform initialization.
//!
//! Entry order is canonical: it defines the checkpoint manifest order and the
//! optimizer state layout.

use demogen_autodiff::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::model::config::{ModelConfig, VariantKind};
use crate::model::ModelError;

/// Image-encoder channel progression.
pub const IMAGE_CHANNELS: [usize; 6] = [3, 32, 32, 64, 64, 64];
/// Trajectory-encoder 1-D conv layers: (kernel, padding), all 20 channels.
pub const TRAJ_CONVS: [(usize, usize); 3] = [(7, 3), (5, 2), (3, 1)];
pub const TRAJ_CONV_CHANNELS: usize = 20;
/// Decoder temporal blocks: (out channels, dilation), kernel 5.
pub const DECODER_BLOCKS: [(usize, usize); 3] = [(20, 1), (20, 2), (14, 4)];
pub const DECODER_KERNEL: usize = 5;
pub const HIDDEN_FC: usize = 256;
pub const MLP_HIDDEN: usize = 32;
pub const DISC_HIDDEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// Decoder, label heads and image encoder.
    Theta,
    /// Trajectory encoder and posterior network.
    Phi,
    /// Adversarial discriminator.
    Discriminator,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<f32>,
}

#[derive(Clone, Debug)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn from_entries(entries: Vec<ParamEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), i))
            .collect();
        Self { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry {
        &self.entries[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor<f32> {
        &mut self.entries[idx].value
    }

    pub fn lookup(&self, name: &str) -> Result<usize, ModelError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::Config(format!("unknown parameter '{name}'")))
    }

    /// Indices of theta+phi parameters (the model optimizer's domain).
    pub fn model_indices(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].group != ParamGroup::Discriminator)
            .collect()
    }

    pub fn group_indices(&self, group: ParamGroup) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].group == group)
            .collect()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Initialize every parameter of the architecture implied by `cfg`:
    /// weights uniform in +-sqrt(6/fan_in), biases zero.
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        cfg.validate()?;
        let schema = cfg.schema();
        let mut entries: Vec<ParamEntry> = Vec::new();

        let mut push = |name: String,
                        group: ParamGroup,
                        shape: Vec<usize>,
                        fan_in: Option<usize>,
                        rng: &mut ChaCha8Rng| {
            let n: usize = shape.iter().product();
            let data = match fan_in {
                Some(fan) => {
                    let limit = (6.0 / fan as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-limit..limit) as f32).collect()
                }
                None => vec![0.0f32; n],
            };
            entries.push(ParamEntry {
                name,
                group,
                value: Tensor::new(shape, data).expect("consistent shape"),
            });
        };

        // Image encoder: five stride-2 convolutions, then FC(256), FC(E_i).
        for (l, w) in IMAGE_CHANNELS.windows(2).enumerate() {
            let (cin, cout) = (w[0], w[1]);
            push(
                format!("img_enc.conv{l}.w"),
                ParamGroup::Theta,
                vec![cout, cin, 3, 3],
                Some(cin * 9),
                rng,
            );
            push(format!("img_enc.conv{l}.b"), ParamGroup::Theta, vec![cout], None, rng);
        }
        let flat = cfg.image_flat_dim();
        push(
            "img_enc.fc0.w".into(),
            ParamGroup::Theta,
            vec![HIDDEN_FC, flat],
            Some(flat),
            rng,
        );
        push("img_enc.fc0.b".into(), ParamGroup::Theta, vec![HIDDEN_FC], None, rng);
        push(
            "img_enc.fc1.w".into(),
            ParamGroup::Theta,
            vec![cfg.image_embed_dim, HIDDEN_FC],
            Some(HIDDEN_FC),
            rng,
        );
        push(
            "img_enc.fc1.b".into(),
            ParamGroup::Theta,
            vec![cfg.image_embed_dim],
            None,
            rng,
        );

        // Trajectory encoder: three sequential 1-D convolutions, mean pool,
        // FC(256), FC(traj_embed_dim).
        let mut cin = cfg.channels();
        for (l, (k, _p)) in TRAJ_CONVS.iter().enumerate() {
            push(
                format!("traj_enc.conv{l}.w"),
                ParamGroup::Phi,
                vec![TRAJ_CONV_CHANNELS, cin, *k],
                Some(cin * k),
                rng,
            );
            push(
                format!("traj_enc.conv{l}.b"),
                ParamGroup::Phi,
                vec![TRAJ_CONV_CHANNELS],
                None,
                rng,
            );
            cin = TRAJ_CONV_CHANNELS;
        }
        push(
            "traj_enc.fc0.w".into(),
            ParamGroup::Phi,
            vec![HIDDEN_FC, TRAJ_CONV_CHANNELS],
            Some(TRAJ_CONV_CHANNELS),
            rng,
        );
        push("traj_enc.fc0.b".into(), ParamGroup::Phi, vec![HIDDEN_FC], None, rng);
        push(
            "traj_enc.fc1.w".into(),
            ParamGroup::Phi,
            vec![cfg.traj_embed_dim, HIDDEN_FC],
            Some(HIDDEN_FC),
            rng,
        );
        push(
            "traj_enc.fc1.b".into(),
            ParamGroup::Phi,
            vec![cfg.traj_embed_dim],
            None,
            rng,
        );

        // Posterior MLP: [i; tau] -> 32 -> 32 -> (mu, log sigma), plus one
        // relaxed-categorical head per group for the gs variant.
        let concat = cfg.image_embed_dim + cfg.traj_embed_dim;
        push(
            "posterior.fc0.w".into(),
            ParamGroup::Phi,
            vec![MLP_HIDDEN, concat],
            Some(concat),
            rng,
        );
        push("posterior.fc0.b".into(), ParamGroup::Phi, vec![MLP_HIDDEN], None, rng);
        push(
            "posterior.fc1.w".into(),
            ParamGroup::Phi,
            vec![MLP_HIDDEN, MLP_HIDDEN],
            Some(MLP_HIDDEN),
            rng,
        );
        push("posterior.fc1.b".into(), ParamGroup::Phi, vec![MLP_HIDDEN], None, rng);
        push(
            "posterior.out.w".into(),
            ParamGroup::Phi,
            vec![2 * cfg.latent_dim, MLP_HIDDEN],
            Some(MLP_HIDDEN),
            rng,
        );
        push(
            "posterior.out.b".into(),
            ParamGroup::Phi,
            vec![2 * cfg.latent_dim],
            None,
            rng,
        );
        if cfg.variant == VariantKind::Gs {
            for (j, g) in schema.groups.iter().enumerate() {
                push(
                    format!("posterior.group{j}.w"),
                    ParamGroup::Phi,
                    vec![g.labels.len(), MLP_HIDDEN],
                    Some(MLP_HIDDEN),
                    rng,
                );
                push(
                    format!("posterior.group{j}.b"),
                    ParamGroup::Phi,
                    vec![g.labels.len()],
                    None,
                    rng,
                );
            }
        }

        // TCN decoder over the tiled [code; i; t] sequence.
        let mut cin = cfg.code_dim() + cfg.image_embed_dim + 1;
        for (bidx, (cout, _dil)) in DECODER_BLOCKS.iter().enumerate() {
            for conv in 0..2 {
                let c_in = if conv == 0 { cin } else { *cout };
                push(
                    format!("decoder.block{bidx}.conv{conv}.w"),
                    ParamGroup::Theta,
                    vec![*cout, c_in, DECODER_KERNEL],
                    Some(c_in * DECODER_KERNEL),
                    rng,
                );
                push(
                    format!("decoder.block{bidx}.conv{conv}.b"),
                    ParamGroup::Theta,
                    vec![*cout],
                    None,
                    rng,
                );
            }
            if cin != *cout {
                push(
                    format!("decoder.block{bidx}.skip.w"),
                    ParamGroup::Theta,
                    vec![*cout, cin, 1],
                    Some(cin),
                    rng,
                );
                push(
                    format!("decoder.block{bidx}.skip.b"),
                    ParamGroup::Theta,
                    vec![*cout],
                    None,
                    rng,
                );
            }
            cin = *cout;
        }
        if cin != cfg.channels() {
            return Err(ModelError::Config(format!(
                "decoder emits {cin} channels but trajectories carry {}",
                cfg.channels()
            )));
        }

        // One linear head per concept group, reading only its own axis.
        for (j, g) in schema.groups.iter().enumerate() {
            let input = cfg.head_input_dim(j)?;
            push(
                format!("head.group{j}.w"),
                ParamGroup::Theta,
                vec![g.labels.len(), input],
                Some(input),
                rng,
            );
            push(
                format!("head.group{j}.b"),
                ParamGroup::Theta,
                vec![g.labels.len()],
                None,
                rng,
            );
        }

        if cfg.variant == VariantKind::Aae {
            let dims = [cfg.latent_dim, DISC_HIDDEN, DISC_HIDDEN, 1];
            for (l, w) in dims.windows(2).enumerate() {
                push(
                    format!("disc.fc{l}.w"),
                    ParamGroup::Discriminator,
                    vec![w[1], w[0]],
                    Some(w[0]),
                    rng,
                );
                push(
                    format!("disc.fc{l}.b"),
                    ParamGroup::Discriminator,
                    vec![w[1]],
                    None,
                    rng,
                );
            }
        }

        Ok(Self::from_entries(entries))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Scenario;
    use rand_chacha::rand_core::SeedableRng;

    fn store(variant: VariantKind) -> ParamStore {
        let cfg = ModelConfig::new(Scenario::Dab, variant);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        ParamStore::init(&cfg, &mut rng).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = store(VariantKind::Vae);
        let b = store(VariantKind::Vae);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.value.data(), y.value.data());
        }
    }

    #[test]
    fn variants_extend_the_parameter_set() {
        let vae = store(VariantKind::Vae);
        let aae = store(VariantKind::Aae);
        let gs = store(VariantKind::Gs);
        assert!(aae.len() == vae.len() + 6); // three discriminator layers
        assert!(gs.len() == vae.len() + 10); // five posterior group heads
        assert!(vae.lookup("disc.fc0.w").is_err());
        assert!(aae.lookup("disc.fc0.w").is_ok());
        assert!(gs.lookup("posterior.group4.w").is_ok());
    }

    #[test]
    fn biases_start_at_zero_and_weights_do_not() {
        let s = store(VariantKind::Vae);
        let b = &s.entries()[s.lookup("img_enc.conv0.b").unwrap()];
        assert!(b.value.data().iter().all(|&v| v == 0.0));
        let w = &s.entries()[s.lookup("img_enc.conv0.w").unwrap()];
        assert!(w.value.data().iter().any(|&v| v != 0.0));
        let limit = (6.0f32 / 27.0).sqrt();
        assert!(w.value.data().iter().all(|&v| v.abs() <= limit));
    }

    #[test]
    fn head_groups_live_in_theta_and_encoders_in_phi() {
        let s = store(VariantKind::Vae);
        let head = &s.entries()[s.lookup("head.group0.w").unwrap()];
        assert_eq!(head.group, ParamGroup::Theta);
        let tr = &s.entries()[s.lookup("traj_enc.conv0.w").unwrap()];
        assert_eq!(tr.group, ParamGroup::Phi);
        let img = &s.entries()[s.lookup("img_enc.fc1.w").unwrap()];
        assert_eq!(img.group, ParamGroup::Theta);
    }
}
