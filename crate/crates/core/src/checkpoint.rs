//! Flat-text parameter archives.
//!
//! ```text
//! tomrl-checkpoint 1
//! meta <key> <value>
//! tensor <name> <dim0>x<dim1>...
//! <values, whitespace separated>
//! ```
//!
//! Tensors are named `<head>.<layer>.weight` / `<head>.<layer>.bias`, with
//! `variational` as the head name of the optional conditional model. Values
//! are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::club::VariationalModel;
use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp};
use crate::policy::{Architecture, Head, Heads, PolicyParams, PolicySpec};

const MAGIC: &str = "tomrl-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<Tensor>,
}

impl Archive {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn push_mlp(&mut self, prefix: &str, net: &Mlp) {
        for (i, layer) in net.layers().iter().enumerate() {
            self.tensors.push(Tensor {
                name: format!("{prefix}.{i}.weight"),
                shape: layer.weight.shape().to_vec(),
                data: layer.weight.iter().copied().collect(),
            });
            self.tensors.push(Tensor {
                name: format!("{prefix}.{i}.bias"),
                shape: vec![layer.bias.len()],
                data: layer.bias.to_vec(),
            });
        }
    }

    fn take_mlp(&self, prefix: &str) -> Result<Option<Mlp>> {
        let mut layers = Vec::new();
        loop {
            let i = layers.len();
            let w = self.tensors.iter().find(|t| t.name == format!("{prefix}.{i}.weight"));
            let b = self.tensors.iter().find(|t| t.name == format!("{prefix}.{i}.bias"));
            match (w, b) {
                (Some(w), Some(b)) => {
                    if w.shape.len() != 2 || b.shape != [w.shape[1]] {
                        return Err(Error::Checkpoint(format!("bad shapes for {prefix}.{i}")));
                    }
                    let weight = Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.clone())
                        .map_err(|e| Error::Checkpoint(e.to_string()))?;
                    layers.push(Linear {
                        weight,
                        bias: Array1::from(b.data.clone()),
                    });
                }
                (None, None) => break,
                _ => return Err(Error::Checkpoint(format!("incomplete layer {prefix}.{i}"))),
            }
        }
        Ok((!layers.is_empty()).then(|| Mlp::from_layers(layers)))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        for (k, v) in &self.meta {
            writeln!(out, "meta {k} {v}").unwrap();
        }
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            writeln!(out, "tensor {} {}", t.name, dims.join("x")).unwrap();
            let vals: Vec<String> = t.data.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", vals.join(" ")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Checkpoint("missing header".into()));
        }
        let mut archive = Archive::default();
        while let Some(line) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), Some(v)) => archive.meta.push((k.to_string(), v.to_string())),
                (Some("tensor"), Some(name), Some(dims)) => {
                    let shape = dims
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
                    let body = lines
                        .next()
                        .ok_or_else(|| Error::Checkpoint(format!("{name}: missing values")))?;
                    let data = body
                        .split_whitespace()
                        .map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
                    if data.len() != shape.iter().product::<usize>() {
                        return Err(Error::Checkpoint(format!("{name}: value count does not match shape")));
                    }
                    archive.tensors.push(Tensor {
                        name: name.to_string(),
                        shape,
                        data,
                    });
                }
                _ => return Err(Error::Checkpoint(format!("unrecognised line: {line}"))),
            }
        }
        Ok(archive)
    }
}

fn spec_meta(spec: &PolicySpec) -> Vec<(String, String)> {
    let hidden: Vec<String> = spec.hidden.iter().map(usize::to_string).collect();
    vec![
        ("obs_dim".into(), spec.obs_dim.to_string()),
        ("n_targets".into(), spec.n_targets.to_string()),
        ("n_coeffs".into(), spec.n_coeffs.to_string()),
        ("n_agents".into(), spec.n_agents.to_string()),
        ("n_actions".into(), spec.n_actions.to_string()),
        ("residual_dim".into(), spec.residual_dim.to_string()),
        ("hidden".into(), hidden.join(",")),
        (
            "architecture".into(),
            match spec.architecture {
                Architecture::Bottleneck => "bottleneck".into(),
                Architecture::Plain => "plain".into(),
            },
        ),
        (
            "actor_sees_second_order".into(),
            spec.actor_sees_second_order.to_string(),
        ),
        (
            "global_dim".into(),
            spec.global_dim.map_or_else(|| "none".to_string(), |d| d.to_string()),
        ),
    ]
}

fn spec_from_meta(a: &Archive) -> Result<PolicySpec> {
    let get = |k: &str| a.meta(k).ok_or_else(|| Error::Checkpoint(format!("missing meta {k}")));
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("meta {k} is not an integer")))
    };
    let hidden = get("hidden")?;
    let hidden = if hidden.is_empty() {
        Vec::new()
    } else {
        hidden
            .split(',')
            .map(|h| h.parse().map_err(|_| Error::Checkpoint("bad hidden widths".into())))
            .collect::<Result<Vec<usize>>>()?
    };
    Ok(PolicySpec {
        obs_dim: num("obs_dim")?,
        n_targets: num("n_targets")?,
        n_coeffs: num("n_coeffs")?,
        n_agents: num("n_agents")?,
        n_actions: num("n_actions")?,
        residual_dim: num("residual_dim")?,
        hidden,
        architecture: match get("architecture")? {
            "bottleneck" => Architecture::Bottleneck,
            "plain" => Architecture::Plain,
            other => return Err(Error::Checkpoint(format!("unknown architecture {other}"))),
        },
        actor_sees_second_order: get("actor_sees_second_order")? == "true",
        global_dim: match get("global_dim")? {
            "none" => None,
            d => Some(d.parse().map_err(|_| Error::Checkpoint("bad global_dim".into()))?),
        },
    })
}

pub fn to_archive(params: &PolicyParams, var: Option<&VariationalModel>) -> Archive {
    let mut a = Archive {
        meta: spec_meta(&params.spec),
        tensors: Vec::new(),
    };
    for head in Head::ALL {
        a.push_mlp(head.name(), params.heads.get(head));
    }
    if let Some(v) = var {
        a.push_mlp("variational", v.net());
    }
    a
}

pub fn from_archive(a: &Archive) -> Result<(PolicyParams, Option<VariationalModel>)> {
    let spec = spec_from_meta(a)?;
    let head = |h: Head| {
        a.take_mlp(h.name())?
            .ok_or_else(|| Error::Checkpoint(format!("missing head {}", h.name())))
    };
    let heads = Heads {
        belief: head(Head::Belief)?,
        residual: head(Head::Residual)?,
        second_order: head(Head::SecondOrder)?,
        actor: head(Head::Actor)?,
        critic: head(Head::Critic)?,
    };
    if heads.actor.input_dim() != spec.actor_input_dim() || heads.critic.input_dim() != spec.critic_input_dim() {
        return Err(Error::Checkpoint("head widths do not match the stored spec".into()));
    }
    let var = a
        .take_mlp("variational")?
        .map(|net| VariationalModel::from_net(net, spec.belief_dim(), spec.residual_dim))
        .transpose()?;
    Ok((PolicyParams { spec, heads }, var))
}

pub fn save(path: &Path, params: &PolicyParams, var: Option<&VariationalModel>) -> Result<()> {
    std::fs::write(path, to_archive(params, var).to_text())?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(PolicyParams, Option<VariationalModel>)> {
    from_archive(&Archive::from_text(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{CriticInput, PolicyOptions, PopulationSetup, Role, RunConfig, TrainConfig};
    use proptest::prelude::*;

    fn run_config(critic: CriticInput) -> RunConfig {
        RunConfig {
            env: Default::default(),
            train: TrainConfig::default(),
            policy: PolicyOptions {
                hidden: vec![8, 8],
                critic,
                ..PolicyOptions::default()
            },
            good: PopulationSetup::first_order(),
            adv: PopulationSetup::baseline(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for critic in [CriticInput::Local, CriticInput::Global] {
            let cfg = run_config(critic);
            for role in [Role::Good, Role::Adversary] {
                let params = PolicyParams::new(cfg.policy_spec(role), 17).unwrap();
                let var = VariationalModel::new(4, 8, &[6], 1);
                let text = to_archive(&params, Some(&var)).to_text();
                let (back, back_var) = from_archive(&Archive::from_text(&text).unwrap()).unwrap();
                assert_eq!(back, params);
                assert_eq!(back_var.unwrap().net(), var.net());
                assert_eq!(to_archive(&back, None).to_text(), to_archive(&params, None).to_text());
            }
        }
    }

    #[test]
    fn truncated_archive_is_rejected() {
        let params = PolicyParams::new(run_config(CriticInput::Local).policy_spec(Role::Good), 1).unwrap();
        let text = to_archive(&params, None).to_text();
        let cut: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(from_archive(&Archive::from_text(&cut).unwrap_or_default()).is_err());
        assert!(Archive::from_text("not a checkpoint").is_err());
    }

    proptest! {
        #[test]
        fn float_text_round_trip(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let a = Archive {
                meta: vec![],
                tensors: vec![Tensor { name: "x".into(), shape: vec![1], data: vec![v] }],
            };
            let back = Archive::from_text(&a.to_text()).unwrap();
            prop_assert_eq!(back.tensors[0].data[0].to_bits(), bits);
        }
    }
}
