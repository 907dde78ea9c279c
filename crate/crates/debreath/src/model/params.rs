use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::UNetConfig;

/// One named tensor slot in the architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Running batch-norm statistics are carried in the model file but are
    /// not learnable and do not count toward the parameter budget.
    pub learnable: bool,
}

/// Every tensor the model owns, keyed by layer identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor<f32>>,
}

impl ModelParams {
    pub fn from_tensors(tensors: BTreeMap<String, Tensor<f32>>) -> Self {
        ModelParams { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Invariant(format!("model parameter {name:?} is missing")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<f32>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Invariant(format!("model parameter {name:?} is missing")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Check that exactly the architecture's canonical tensors are present
    /// with the right shapes.
    pub fn validate(&self, config: &UNetConfig) -> Result<()> {
        let specs = layer_specs(config);
        if specs.len() != self.tensors.len() {
            return Err(Error::Invariant(format!(
                "model holds {} tensors, architecture defines {}",
                self.tensors.len(),
                specs.len()
            )));
        }
        for spec in &specs {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape {
                return Err(Error::Invariant(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Exponential-moving-average update of one batch-norm layer's running
    /// statistics: `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running_stats(
        &mut self,
        bn_prefix: &str,
        batch_mean: &[f32],
        batch_var: &[f32],
        momentum: f32,
    ) -> Result<()> {
        for (suffix, batch) in [("running_mean", batch_mean), ("running_var", batch_var)] {
            let t = self.get_mut(&format!("{bn_prefix}.{suffix}"))?;
            for (r, &b) in t.data_mut().iter_mut().zip(batch) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
        }
        Ok(())
    }
}

fn conv_spec(name: &str, kh: usize, kw: usize, cin: usize, cout: usize, out: &mut Vec<TensorSpec>) {
    out.push(TensorSpec {
        name: format!("{name}.kernel"),
        shape: vec![kh, kw, cin, cout],
        learnable: true,
    });
    out.push(TensorSpec {
        name: format!("{name}.bias"),
        shape: vec![cout],
        learnable: true,
    });
}

fn bn_spec(name: &str, channels: usize, out: &mut Vec<TensorSpec>) {
    for (suffix, learnable) in [
        ("gamma", true),
        ("beta", true),
        ("running_mean", false),
        ("running_var", false),
    ] {
        out.push(TensorSpec {
            name: format!("{name}.{suffix}"),
            shape: vec![channels],
            learnable,
        });
    }
}

/// The architecture's canonical tensor list, in layer order. This single
/// enumeration drives initialization, parameter counting, serialization and
/// load-time validation.
pub fn layer_specs(config: &UNetConfig) -> Vec<TensorSpec> {
    let mut specs = Vec::new();
    let bn = config.use_batch_norm;

    let push_block = |name: &str, cin: usize, cout: usize, specs: &mut Vec<TensorSpec>| {
        conv_spec(&format!("{name}.conv1"), 3, 3, cin, cout, specs);
        if bn {
            bn_spec(&format!("{name}.bn1"), cout, specs);
        }
        conv_spec(&format!("{name}.conv2"), 3, 3, cout, cout, specs);
        if bn {
            bn_spec(&format!("{name}.bn2"), cout, specs);
        }
    };

    for level in 0..config.depth {
        let cin = if level == 0 {
            1
        } else {
            config.channels_at(level - 1)
        };
        push_block(&format!("enc{level}"), cin, config.channels_at(level), &mut specs);
    }

    push_block(
        "bottleneck",
        config.channels_at(config.depth - 1),
        config.bottleneck_channels(),
        &mut specs,
    );

    for level in (0..config.depth).rev() {
        let skip = config.channels_at(level);
        let gating = skip * 2;
        let name = format!("dec{level}");
        // Learnable upsampling halves the channel count.
        specs.push(TensorSpec {
            name: format!("{name}.up.kernel"),
            shape: vec![2, 2, gating, skip],
            learnable: true,
        });
        specs.push(TensorSpec {
            name: format!("{name}.up.bias"),
            shape: vec![skip],
            learnable: true,
        });
        // Additive attention gate; the intermediate width matches the skip.
        conv_spec(&format!("{name}.att.wg"), 1, 1, gating, skip, &mut specs);
        conv_spec(&format!("{name}.att.wx"), 1, 1, skip, skip, &mut specs);
        conv_spec(&format!("{name}.att.psi"), 1, 1, skip, 1, &mut specs);
        push_block(&name, 2 * skip, skip, &mut specs);
    }

    conv_spec(
        "output",
        1,
        1,
        config.base_filters,
        config.out_classes,
        &mut specs,
    );
    specs
}

/// Number of learnable scalars in the architecture (running statistics
/// excluded).
pub fn count_parameters(config: &UNetConfig) -> usize {
    layer_specs(config)
        .iter()
        .filter(|s| s.learnable)
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}

/// Deterministic He-normal initialization.
///
/// Conv kernels draw from N(0, 2 / fan_in) with fan_in = kh * kw * c_in;
/// biases and running means start at zero, batch-norm gains and running
/// variances at one.
pub fn init_params(config: &UNetConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for spec in layer_specs(config) {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f32> = if spec.name.ends_with(".kernel") && spec.shape.len() == 4 {
            let fan_in = spec.shape[0] * spec.shape[1] * spec.shape[2];
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is positive");
            (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
        } else if spec.name.ends_with(".gamma") || spec.name.ends_with(".running_var") {
            vec![1.0; n]
        } else {
            vec![0.0; n]
        };
        tensors.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?);
    }
    Ok(ModelParams::from_tensors(tensors))
}
