//! Turns the key-value config plus flag overrides into typed settings.

use std::path::Path;

use anyhow::{bail, Context, Result};
use streamgcn_core::autodiff::Activation;
use streamgcn_core::io::{KeyValueConfig, SynthSpec};
use streamgcn_core::model::NetworkConfig;
use streamgcn_core::objectives::Objective;
use streamgcn_core::train::{Schedule, TrainConfig};
use streamgcn_core::StreamKind;

use crate::ConfigArgs;

pub const CONFIG_ENV: &str = "STREAMGCN_CONFIG";

/// Loads the config file (flag, then environment) scoped to `command`, then
/// applies `--set` overrides and the given flag values on top.
pub fn load(
    args: &ConfigArgs,
    command: &str,
    flags: &[(&str, Option<String>)],
) -> Result<KeyValueConfig> {
    let path = args.config.clone().or_else(|| {
        std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(Into::into)
    });
    let base = match &path {
        Some(p) => {
            KeyValueConfig::load(p).with_context(|| format!("reading config {}", p.display()))?
        }
        None => KeyValueConfig::default(),
    };
    let mut cfg = base.scoped(command);
    for o in &args.overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{o}`");
        };
        cfg.set(k.trim(), v.trim());
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v.clone());
        }
    }
    Ok(cfg)
}

fn on_off(value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => bail!("expected on/off, got `{value}`"),
    }
}

/// Network shape keys: `network` (desk | full), `attention` (on | off),
/// `attention_kernel`, `attention_activation`.
pub fn network(
    cfg: &mut KeyValueConfig,
    joints: usize,
    classes: usize,
    default: &str,
) -> Result<NetworkConfig> {
    let name: String = cfg.take("network")?.unwrap_or_else(|| default.to_string());
    let mut net = match name.as_str() {
        "desk" => NetworkConfig::desk(joints, classes),
        "full" => NetworkConfig::full(joints, classes),
        "tiny" => NetworkConfig::with_blocks(joints, classes, &[(6, 1), (6, 2)]),
        other => bail!("unknown network preset `{other}` (expected desk, full or tiny)"),
    };
    if let Some(v) = cfg.take::<String>("attention")? {
        net.attention.enabled = on_off(&v)?;
    }
    if let Some(k) = cfg.take("attention_kernel")? {
        net.attention.kernel_size = k;
    }
    if let Some(a) = cfg.take::<Activation>("attention_activation")? {
        net.attention.activation = a;
    }
    net.validate()?;
    Ok(net)
}

/// `objective` (ce | ib) with optional `beta` and `lambda` for ib.
pub fn objective(cfg: &mut KeyValueConfig) -> Result<Objective> {
    let objective: Objective = cfg.take("objective")?.unwrap_or(Objective::CrossEntropy);
    let beta: Option<f64> = cfg.take("beta")?;
    let lambda: Option<f64> = cfg.take("lambda")?;
    match objective {
        Objective::CrossEntropy if beta.is_some() || lambda.is_some() => {
            bail!("beta and lambda only apply to the ib objective")
        }
        Objective::CrossEntropy => Ok(objective),
        Objective::InformationBottleneck { beta: b, lambda: l } => {
            let (beta, lambda) = (beta.unwrap_or(b), lambda.unwrap_or(l));
            if !(beta >= 0.0 && lambda >= 0.0 && beta.is_finite() && lambda.is_finite()) {
                bail!("beta and lambda must be finite and nonnegative");
            }
            Ok(Objective::InformationBottleneck { beta, lambda })
        }
    }
}

pub struct TrainSettings {
    pub stream: StreamKind,
    pub train: TrainConfig,
}

/// Training keys: `stream`, `schedule` (desk | ntu | nw-ucla), `epochs`,
/// `lr`, `warmup_epochs`, `decay_factor`, `decay_every`, `batch_size`,
/// `momentum`, `nesterov`, `weight_decay`, `seed`, `threads` and the
/// objective keys.
pub fn training(cfg: &mut KeyValueConfig) -> Result<TrainSettings> {
    let stream: StreamKind = cfg
        .take("stream")?
        .context("no stream selected; pass --stream or set `stream` in the config")?;
    let mut schedule = Schedule::preset(
        &cfg.take::<String>("schedule")?
            .unwrap_or_else(|| "desk".into()),
    )?;
    if let Some(v) = cfg.take("epochs")? {
        schedule.total_epochs = v;
    }
    if let Some(v) = cfg.take("lr")? {
        schedule.base_lr = v;
    }
    if let Some(v) = cfg.take("warmup_epochs")? {
        schedule.warmup_epochs = v;
    }
    if let Some(v) = cfg.take("decay_factor")? {
        schedule.decay_factor = v;
    }
    if let Some(v) = cfg.take("decay_every")? {
        schedule.decay_every = v;
    }
    if let Some(v) = cfg.take("batch_size")? {
        schedule.batch_size = v;
    }
    schedule.validate()?;
    let mut train = TrainConfig {
        schedule,
        objective: objective(cfg)?,
        ..TrainConfig::default()
    };
    if let Some(v) = cfg.take("momentum")? {
        train.optimizer.momentum = v;
    }
    if let Some(v) = cfg.take::<String>("nesterov")? {
        train.optimizer.nesterov = on_off(&v)?;
    }
    if let Some(v) = cfg.take("weight_decay")? {
        train.optimizer.weight_decay = v;
    }
    if let Some(v) = cfg.take("seed")? {
        train.seed = v;
    }
    if let Some(v) = cfg.take("threads")? {
        train.threads = v;
    }
    Ok(TrainSettings { stream, train })
}

pub struct SynthSettings {
    pub spec: SynthSpec,
    pub test_per_class: usize,
    pub seed: u64,
}

/// Generator keys: `classes`, `per_class`, `test_per_class`, `joints`,
/// `frames`, `noise`, `seed`.
pub fn synth(cfg: &mut KeyValueConfig) -> Result<SynthSettings> {
    let mut spec = SynthSpec::default();
    if let Some(v) = cfg.take("classes")? {
        spec.num_classes = v;
    }
    if let Some(v) = cfg.take("per_class")? {
        spec.per_class = v;
    }
    if let Some(v) = cfg.take("joints")? {
        spec.joints = v;
    }
    if let Some(v) = cfg.take("frames")? {
        spec.frames = v;
    }
    if let Some(v) = cfg.take("noise")? {
        spec.noise = v;
    }
    let test_per_class = cfg.take("test_per_class")?.unwrap_or(0);
    let seed = cfg.take("seed")?.unwrap_or(0);
    spec.validate()?;
    Ok(SynthSettings {
        spec,
        test_per_class,
        seed,
    })
}

pub struct GradcheckSettings {
    pub network: NetworkConfig,
    pub frames: usize,
    pub objective: Objective,
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
}

/// Gradient check keys: `joints`, `frames`, `classes`, `eps`, `tolerance`,
/// `seed`, plus the network and objective keys. Defaults to the desk
/// network and the ib objective so that every head term is exercised.
pub fn gradcheck(cfg: &mut KeyValueConfig) -> Result<GradcheckSettings> {
    let joints = cfg.take("joints")?.unwrap_or(5);
    let classes = cfg.take("classes")?.unwrap_or(3);
    let frames = cfg.take("frames")?.unwrap_or(12);
    if frames == 0 {
        bail!("frames must be positive");
    }
    let network = network(cfg, joints, classes, "desk")?;
    let chosen = cfg
        .take::<String>("objective")?
        .unwrap_or_else(|| "ib".into());
    cfg.set("objective", chosen);
    let objective = objective(cfg)?;
    let eps = cfg.take("eps")?.unwrap_or(1e-6);
    let tolerance = cfg.take("tolerance")?.unwrap_or(1e-4);
    let seed = cfg.take("seed")?.unwrap_or(0);
    Ok(GradcheckSettings {
        network,
        frames,
        objective,
        eps,
        tolerance,
        seed,
    })
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}
