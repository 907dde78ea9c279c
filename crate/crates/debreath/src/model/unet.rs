use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, NodeId};
use crate::tensor::Scalar;

use super::{ModelParams, UNetConfig};
use crate::model::params::layer_specs;

/// Graph leaf ids for every learnable tensor of a model, keyed by name.
pub struct ParamNodes {
    ids: BTreeMap<String, NodeId>,
}

impl ParamNodes {
    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invariant(format!("no graph node for parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(n, &id)| (n.as_str(), id))
    }
}

/// Load every learnable tensor of `params` into the graph as leaves.
/// Running statistics stay outside the graph; eval-mode batch norm reads
/// them from `params` directly.
pub fn load_param_nodes<E: Scalar>(
    graph: &mut Graph<E>,
    params: &ModelParams,
    config: &UNetConfig,
    trainable: bool,
) -> Result<ParamNodes> {
    let mut ids = BTreeMap::new();
    for spec in layer_specs(config) {
        if !spec.learnable {
            continue;
        }
        let mut t = params.get(&spec.name)?.cast::<E>();
        t.requires_grad = trainable;
        ids.insert(spec.name.clone(), graph.leaf(t));
    }
    Ok(ParamNodes { ids })
}

/// Whether a forward pass runs with batch statistics and dropout (train)
/// or with running statistics and no dropout (eval).
pub enum ForwardMode<'a> {
    Eval,
    Train { dropout_rng: &'a mut ChaCha8Rng },
}

/// Result of a forward pass: the mask output plus, in train mode, the
/// graph nodes of each batch-norm layer so the caller can fold their batch
/// statistics into the running estimates.
#[derive(Debug)]
pub struct ForwardOutput {
    pub output: NodeId,
    pub bn_nodes: Vec<(String, NodeId)>,
}

/// Node ids of one attention gate's parameters.
pub struct AttentionGateParams {
    pub wg_kernel: NodeId,
    pub wg_bias: NodeId,
    pub wx_kernel: NodeId,
    pub wx_bias: NodeId,
    pub psi_kernel: NodeId,
    pub psi_bias: NodeId,
}

/// Additive attention over a skip connection.
///
/// The gating signal (coarse, decoder side) must have half the spatial
/// extent of the skip. Attention coefficients are
/// `alpha = upsample2(sigmoid(psi(relu(Wg g + Wx x))))` with `Wx` applied
/// at stride 2, and the gate returns `alpha .* skip`.
pub fn attention_gate<E: Scalar>(
    graph: &mut Graph<E>,
    gating: NodeId,
    skip: NodeId,
    params: &AttentionGateParams,
) -> Result<NodeId> {
    let [gn, gh, gw, _] = graph.value(gating).dims4()?;
    let [sn, sh, sw, _] = graph.value(skip).dims4()?;
    if gn != sn || sh != 2 * gh || sw != 2 * gw {
        return Err(Error::Input(format!(
            "attention gate expects the gating signal at half the skip extent, got {:?} vs {:?}",
            graph.value(gating).shape(),
            graph.value(skip).shape()
        )));
    }
    let g_proj = graph.conv2d(gating, params.wg_kernel, params.wg_bias, 1)?;
    let x_proj = graph.conv2d(skip, params.wx_kernel, params.wx_bias, 2)?;
    let summed = graph.add(g_proj, x_proj)?;
    let act = graph.relu(summed);
    let logits = graph.conv2d(act, params.psi_kernel, params.psi_bias, 1)?;
    let alpha_coarse = graph.sigmoid(logits);
    let alpha = graph.upsample_nearest2x(alpha_coarse)?;
    graph.scale_by_map(alpha, skip)
}

struct Builder<'a, 'r, E: Scalar> {
    graph: &'a mut Graph<E>,
    nodes: &'a ParamNodes,
    params: &'a ModelParams,
    config: &'a UNetConfig,
    mode: ForwardMode<'r>,
    bn_nodes: Vec<(String, NodeId)>,
}

impl<E: Scalar> Builder<'_, '_, E> {
    fn conv(&mut self, name: &str, input: NodeId, stride: usize) -> Result<NodeId> {
        let kernel = self.nodes.id(&format!("{name}.kernel"))?;
        let bias = self.nodes.id(&format!("{name}.bias"))?;
        self.graph.conv2d(input, kernel, bias, stride)
    }

    fn batch_norm(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        let gain = self.nodes.id(&format!("{name}.gamma"))?;
        let shift = self.nodes.id(&format!("{name}.beta"))?;
        let id = match self.mode {
            ForwardMode::Train { .. } => {
                let id = self
                    .graph
                    .batch_norm(input, gain, shift, None, Mode::Train)?;
                self.bn_nodes.push((name.to_string(), id));
                id
            }
            ForwardMode::Eval => {
                let rm: Vec<E> = self
                    .params
                    .get(&format!("{name}.running_mean"))?
                    .cast::<E>()
                    .into_data();
                let rv: Vec<E> = self
                    .params
                    .get(&format!("{name}.running_var"))?
                    .cast::<E>()
                    .into_data();
                self.graph
                    .batch_norm(input, gain, shift, Some((&rm, &rv)), Mode::Eval)?
            }
        };
        Ok(id)
    }

    /// conv 3x3 -> (BN) -> ReLU, twice.
    fn double_conv(&mut self, name: &str, input: NodeId) -> Result<NodeId> {
        let mut x = input;
        for i in 1..=2 {
            x = self.conv(&format!("{name}.conv{i}"), x, 1)?;
            if self.config.use_batch_norm {
                x = self.batch_norm(&format!("{name}.bn{i}"), x)?;
            }
            x = self.graph.relu(x);
        }
        Ok(x)
    }

    fn dropout(&mut self, input: NodeId) -> Result<NodeId> {
        match &mut self.mode {
            ForwardMode::Train { dropout_rng } if self.config.dropout_rate > 0.0 => {
                self.graph.dropout(input, self.config.dropout_rate, dropout_rng)
            }
            _ => Ok(input),
        }
    }

    fn gate_params(&self, name: &str) -> Result<AttentionGateParams> {
        Ok(AttentionGateParams {
            wg_kernel: self.nodes.id(&format!("{name}.wg.kernel"))?,
            wg_bias: self.nodes.id(&format!("{name}.wg.bias"))?,
            wx_kernel: self.nodes.id(&format!("{name}.wx.kernel"))?,
            wx_bias: self.nodes.id(&format!("{name}.wx.bias"))?,
            psi_kernel: self.nodes.id(&format!("{name}.psi.kernel"))?,
            psi_bias: self.nodes.id(&format!("{name}.psi.bias"))?,
        })
    }

    fn run(&mut self, input: NodeId) -> Result<NodeId> {
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut x = input;
        for level in 0..self.config.depth {
            let features = self.double_conv(&format!("enc{level}"), x)?;
            skips.push(features);
            x = self.graph.max_pool2x2(features)?;
        }

        x = self.double_conv("bottleneck", x)?;
        x = self.dropout(x)?;

        for level in (0..self.config.depth).rev() {
            let name = format!("dec{level}");
            let up_kernel = self.nodes.id(&format!("{name}.up.kernel"))?;
            let up_bias = self.nodes.id(&format!("{name}.up.bias"))?;
            let upsampled = self.graph.conv_transpose2x2(x, up_kernel, up_bias)?;
            let gate = self.gate_params(&format!("{name}.att"))?;
            let gated_skip = attention_gate(self.graph, x, skips[level], &gate)?;
            let merged = self.graph.concat_channels(upsampled, gated_skip)?;
            x = self.double_conv(&name, merged)?;
            x = self.dropout(x)?;
        }

        let logits = self.conv("output", x, 1)?;
        Ok(self.graph.sigmoid(logits))
    }
}

/// Run the network on a `[batch, frames, bins, 1]` log-magnitude patch and
/// return the soft mask of the same shape, entries strictly in (0, 1).
pub fn unet_forward<E: Scalar>(
    graph: &mut Graph<E>,
    nodes: &ParamNodes,
    params: &ModelParams,
    config: &UNetConfig,
    input: NodeId,
    mode: ForwardMode<'_>,
) -> Result<ForwardOutput> {
    config.validate()?;
    let [_, frames, bins, channels] = graph.value(input).dims4()?;
    if channels != 1 {
        return Err(Error::Input(format!(
            "network input must have one channel, got {channels}"
        )));
    }
    let block = 1usize << config.depth;
    if frames % block != 0 || bins % block != 0 {
        return Err(Error::Config(format!(
            "input extent {frames}x{bins} is not divisible by 2^depth = {block}"
        )));
    }
    let mut builder = Builder {
        graph,
        nodes,
        params,
        config,
        mode,
        bn_nodes: Vec::new(),
    };
    let output = builder.run(input)?;
    let bn_nodes = std::mem::take(&mut builder.bn_nodes);
    Ok(ForwardOutput { output, bn_nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn desk_config() -> UNetConfig {
        UNetConfig {
            depth: 2,
            base_filters: 4,
            input_frames: 64,
            input_bins: 64,
            ..UNetConfig::default()
        }
    }

    fn rand_input(shape: Vec<usize>, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    fn eval_forward(cfg: &UNetConfig, params: &ModelParams, input: Tensor<f32>) -> Vec<f32> {
        let mut g = Graph::<f32>::new();
        let nodes = load_param_nodes(&mut g, params, cfg, false).unwrap();
        let id = g.leaf(input);
        let out = unet_forward(&mut g, &nodes, params, cfg, id, ForwardMode::Eval).unwrap();
        g.value(out.output).data().to_vec()
    }

    #[test]
    fn output_shape_matches_input_and_stays_in_unit_interval() {
        let cfg = desk_config();
        let params = init_params(&cfg, 3).unwrap();
        let input = rand_input(vec![2, 16, 32, 1], 1);
        let out = eval_forward(&cfg, &params, input);
        assert_eq!(out.len(), 2 * 16 * 32);
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_input_with_fresh_params_gives_half_mask() {
        let cfg = desk_config();
        let params = init_params(&cfg, 9).unwrap();
        let input = Tensor::zeros(vec![1, 16, 16, 1]);
        let out = eval_forward(&cfg, &params, input);
        assert!(out.iter().all(|&v| v == 0.5), "expected exactly 0.5");
    }

    #[test]
    fn eval_forward_is_bit_deterministic() {
        let cfg = desk_config();
        let params = init_params(&cfg, 4).unwrap();
        let a = eval_forward(&cfg, &params, rand_input(vec![1, 32, 32, 1], 2));
        let b = eval_forward(&cfg, &params, rand_input(vec![1, 32, 32, 1], 2));
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_only_fires_in_train_mode() {
        let cfg = desk_config();
        let params = init_params(&cfg, 4).unwrap();
        let input = rand_input(vec![1, 16, 16, 1], 5);

        let eval_out = eval_forward(&cfg, &params, input.clone());

        let run_train = |seed: u64| {
            let mut g = Graph::<f32>::new();
            let nodes = load_param_nodes(&mut g, &params, &cfg, false).unwrap();
            let id = g.leaf(input.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = unet_forward(
                &mut g,
                &nodes,
                &params,
                &cfg,
                id,
                ForwardMode::Train { dropout_rng: &mut rng },
            )
            .unwrap();
            g.value(out.output).data().to_vec()
        };
        // Train mode uses batch statistics and random dropout, so it differs
        // from eval; two train passes with the same rng seed agree.
        let t1 = run_train(11);
        let t2 = run_train(11);
        assert_eq!(t1, t2);
        assert_ne!(t1, eval_out);
    }

    #[test]
    fn rejects_input_not_divisible_by_pool_ladder() {
        let cfg = desk_config();
        let params = init_params(&cfg, 4).unwrap();
        let mut g = Graph::<f32>::new();
        let nodes = load_param_nodes(&mut g, &params, &cfg, false).unwrap();
        let id = g.leaf(rand_input(vec![1, 10, 16, 1], 3));
        let err = unet_forward(&mut g, &nodes, &params, &cfg, id, ForwardMode::Eval).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
    }

    #[test]
    fn attention_gate_with_zero_psi_halves_the_skip() {
        let mut g = Graph::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n: usize = 2 * 2 * 3;
        let gating = g.leaf(
            Tensor::new(vec![1, 2, 2, 3], (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap(),
        );
        let skip_vals: Vec<f32> = (0..4 * 4 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let skip = g.leaf(Tensor::new(vec![1, 4, 4, 2], skip_vals.clone()).unwrap());
        let params = AttentionGateParams {
            wg_kernel: g.leaf(Tensor::zeros(vec![1, 1, 3, 2])),
            wg_bias: g.leaf(Tensor::zeros(vec![2])),
            wx_kernel: g.leaf(Tensor::zeros(vec![1, 1, 2, 2])),
            wx_bias: g.leaf(Tensor::zeros(vec![2])),
            psi_kernel: g.leaf(Tensor::zeros(vec![1, 1, 2, 1])),
            psi_bias: g.leaf(Tensor::zeros(vec![1])),
        };
        let out = attention_gate(&mut g, gating, skip, &params).unwrap();
        for (got, want) in g.value(out).data().iter().zip(&skip_vals) {
            assert!((got - 0.5 * want).abs() < 1e-7, "{got} vs {}", 0.5 * want);
        }
    }

    #[test]
    fn attention_gate_never_amplifies_the_skip() {
        let mut g = Graph::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let gating = g.leaf(rand_tensor_f32(vec![1, 4, 4, 4], &mut rng));
        let skip = g.leaf(rand_tensor_f32(vec![1, 8, 8, 2], &mut rng));
        let params = AttentionGateParams {
            wg_kernel: g.leaf(rand_tensor_f32(vec![1, 1, 4, 2], &mut rng)),
            wg_bias: g.leaf(rand_tensor_f32(vec![2], &mut rng)),
            wx_kernel: g.leaf(rand_tensor_f32(vec![1, 1, 2, 2], &mut rng)),
            wx_bias: g.leaf(rand_tensor_f32(vec![2], &mut rng)),
            psi_kernel: g.leaf(rand_tensor_f32(vec![1, 1, 2, 1], &mut rng)),
            psi_bias: g.leaf(rand_tensor_f32(vec![1], &mut rng)),
        };
        let out = attention_gate(&mut g, gating, skip, &params).unwrap();
        for (o, s) in g.value(out).data().iter().zip(g.value(skip).data()) {
            assert!(o.abs() <= s.abs() + 1e-7);
        }
    }

    fn rand_tensor_f32(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn attention_gate_matches_direct_primitive_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let gating_t = rand_tensor_f32(vec![1, 2, 2, 4], &mut rng);
        let skip_t = rand_tensor_f32(vec![1, 4, 4, 2], &mut rng);
        let wg_k = rand_tensor_f32(vec![1, 1, 4, 2], &mut rng);
        let wg_b = rand_tensor_f32(vec![2], &mut rng);
        let wx_k = rand_tensor_f32(vec![1, 1, 2, 2], &mut rng);
        let wx_b = rand_tensor_f32(vec![2], &mut rng);
        let psi_k = rand_tensor_f32(vec![1, 1, 2, 1], &mut rng);
        let psi_b = rand_tensor_f32(vec![1], &mut rng);

        let mut g = Graph::<f32>::new();
        let gating = g.leaf(gating_t.clone());
        let skip = g.leaf(skip_t.clone());
        let params = AttentionGateParams {
            wg_kernel: g.leaf(wg_k.clone()),
            wg_bias: g.leaf(wg_b.clone()),
            wx_kernel: g.leaf(wx_k.clone()),
            wx_bias: g.leaf(wx_b.clone()),
            psi_kernel: g.leaf(psi_k.clone()),
            psi_bias: g.leaf(psi_b.clone()),
        };
        let out = attention_gate(&mut g, gating, skip, &params).unwrap();

        // Direct composition of the same primitives, scripted by hand.
        let mut h = Graph::<f32>::new();
        let hg = h.leaf(gating_t);
        let hs = h.leaf(skip_t);
        let k1 = h.leaf(wg_k);
        let b1 = h.leaf(wg_b);
        let k2 = h.leaf(wx_k);
        let b2 = h.leaf(wx_b);
        let k3 = h.leaf(psi_k);
        let b3 = h.leaf(psi_b);
        let a = h.conv2d(hg, k1, b1, 1).unwrap();
        let b = h.conv2d(hs, k2, b2, 2).unwrap();
        let s = h.add(a, b).unwrap();
        let r = h.relu(s);
        let e = h.conv2d(r, k3, b3, 1).unwrap();
        let alpha_half = h.sigmoid(e);
        let alpha = h.upsample_nearest2x(alpha_half).unwrap();
        let want = h.scale_by_map(alpha, hs).unwrap();

        assert_eq!(g.value(out).data(), h.value(want).data());
    }

    #[test]
    fn forward_matches_hand_scripted_composition_on_desk_config() {
        let cfg = desk_config();
        let params = init_params(&cfg, 31).unwrap();
        let input_t = rand_input(vec![1, 64, 64, 1], 32);
        let got = eval_forward(&cfg, &params, input_t.clone());

        // The same architecture, scripted layer by layer without the
        // builder: enc blocks with pooling, bottleneck, decoder blocks with
        // transposed conv + attention + concat, final 1x1 conv + sigmoid.
        let mut g = Graph::<f32>::new();
        let nodes = load_param_nodes(&mut g, &params, &cfg, false).unwrap();
        let conv = |g: &mut Graph<f32>, nodes: &ParamNodes, name: &str, x, s| {
            let k = nodes.id(&format!("{name}.kernel")).unwrap();
            let b = nodes.id(&format!("{name}.bias")).unwrap();
            g.conv2d(x, k, b, s).unwrap()
        };
        let bn = |g: &mut Graph<f32>, nodes: &ParamNodes, name: &str, x| {
            let gain = nodes.id(&format!("{name}.gamma")).unwrap();
            let shift = nodes.id(&format!("{name}.beta")).unwrap();
            let rm = params.get(&format!("{name}.running_mean")).unwrap().data().to_vec();
            let rv = params.get(&format!("{name}.running_var")).unwrap().data().to_vec();
            g.batch_norm(x, gain, shift, Some((&rm, &rv)), Mode::Eval).unwrap()
        };
        let block = |g: &mut Graph<f32>, nodes: &ParamNodes, name: &str, x| {
            let mut y = conv(g, nodes, &format!("{name}.conv1"), x, 1);
            y = bn(g, nodes, &format!("{name}.bn1"), y);
            y = g.relu(y);
            y = conv(g, nodes, &format!("{name}.conv2"), y, 1);
            y = bn(g, nodes, &format!("{name}.bn2"), y);
            g.relu(y)
        };

        let input = g.leaf(input_t);
        let e0 = block(&mut g, &nodes, "enc0", input);
        let p0 = g.max_pool2x2(e0).unwrap();
        let e1 = block(&mut g, &nodes, "enc1", p0);
        let p1 = g.max_pool2x2(e1).unwrap();
        let bott = block(&mut g, &nodes, "bottleneck", p1);

        let up1 = {
            let k = nodes.id("dec1.up.kernel").unwrap();
            let b = nodes.id("dec1.up.bias").unwrap();
            g.conv_transpose2x2(bott, k, b).unwrap()
        };
        let gate1 = AttentionGateParams {
            wg_kernel: nodes.id("dec1.att.wg.kernel").unwrap(),
            wg_bias: nodes.id("dec1.att.wg.bias").unwrap(),
            wx_kernel: nodes.id("dec1.att.wx.kernel").unwrap(),
            wx_bias: nodes.id("dec1.att.wx.bias").unwrap(),
            psi_kernel: nodes.id("dec1.att.psi.kernel").unwrap(),
            psi_bias: nodes.id("dec1.att.psi.bias").unwrap(),
        };
        let g1 = attention_gate(&mut g, bott, e1, &gate1).unwrap();
        let c1 = g.concat_channels(up1, g1).unwrap();
        let d1 = block(&mut g, &nodes, "dec1", c1);

        let up0 = {
            let k = nodes.id("dec0.up.kernel").unwrap();
            let b = nodes.id("dec0.up.bias").unwrap();
            g.conv_transpose2x2(d1, k, b).unwrap()
        };
        let gate0 = AttentionGateParams {
            wg_kernel: nodes.id("dec0.att.wg.kernel").unwrap(),
            wg_bias: nodes.id("dec0.att.wg.bias").unwrap(),
            wx_kernel: nodes.id("dec0.att.wx.kernel").unwrap(),
            wx_bias: nodes.id("dec0.att.wx.bias").unwrap(),
            psi_kernel: nodes.id("dec0.att.psi.kernel").unwrap(),
            psi_bias: nodes.id("dec0.att.psi.bias").unwrap(),
        };
        let g0 = attention_gate(&mut g, d1, e0, &gate0).unwrap();
        let c0 = g.concat_channels(up0, g0).unwrap();
        let d0 = block(&mut g, &nodes, "dec0", c0);

        let logits = conv(&mut g, &nodes, "output", d0, 1);
        let want = g.sigmoid(logits);

        assert_eq!(got, g.value(want).data());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn mask_contract_over_random_small_configs(
            depth in 1usize..=3,
            base in 1usize..=4,
            fmul in 1usize..=2,
            bmul in 1usize..=2,
            batch in 1usize..=2,
            seed in 0u64..1000,
        ) {
            let block = 1usize << depth;
            let cfg = UNetConfig {
                depth,
                base_filters: base,
                input_frames: block * fmul,
                input_bins: block * bmul,
                ..UNetConfig::default()
            };
            let params = init_params(&cfg, seed).unwrap();
            let shape = vec![batch, cfg.input_frames, cfg.input_bins, 1];
            let out = eval_forward(&cfg, &params, rand_input(shape.clone(), seed ^ 0xabcd));
            prop_assert_eq!(out.len(), shape.iter().product::<usize>());
            prop_assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
