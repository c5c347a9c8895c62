//! Desk-scale backbones (micro-Xception, micro-Inception, micro-ResNet)
//! composed with a 64-unit LSTM head and a 3-way softmax classifier.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::featurize::{ResizedImage, Resolution, IMAGE_CHANNELS};
use crate::nn::{
    init::Initializer, Graph, LstmState, NodeId, Padding, Parameter, Tensor, BN_EPS, BN_MOMENTUM,
    LSTM_UNITS,
};

pub const NUM_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackboneKind {
    #[serde(rename = "micro-xception")]
    MicroXception,
    #[serde(rename = "micro-inception")]
    MicroInception,
    #[serde(rename = "micro-resnet")]
    MicroResNet,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 3] = [
        BackboneKind::MicroXception,
        BackboneKind::MicroInception,
        BackboneKind::MicroResNet,
    ];

    /// Input resolution fixed by kind.
    pub fn resolution(self) -> Resolution {
        match self {
            BackboneKind::MicroXception => Resolution::R71,
            BackboneKind::MicroInception => Resolution::R75,
            BackboneKind::MicroResNet => Resolution::R32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::MicroXception => "micro-xception",
            BackboneKind::MicroInception => "micro-inception",
            BackboneKind::MicroResNet => "micro-resnet",
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro-xception" | "xception" => Ok(BackboneKind::MicroXception),
            "micro-inception" | "inception" => Ok(BackboneKind::MicroInception),
            "micro-resnet" | "resnet" => Ok(BackboneKind::MicroResNet),
            other => Err(Error::config(format!("unknown backbone '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default = "default_lstm_units")]
    pub lstm_units: usize,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    /// Number of consecutive images the LSTM consumes per prediction.
    #[serde(default = "default_window_length")]
    pub window_length: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_base_channels() -> usize {
    8
}
fn default_blocks() -> usize {
    3
}
fn default_lstm_units() -> usize {
    LSTM_UNITS
}
fn default_num_classes() -> usize {
    NUM_CLASSES
}
fn default_window_length() -> usize {
    8
}

impl ModelConfig {
    pub fn new(backbone: BackboneKind, seed: u64) -> Self {
        ModelConfig {
            backbone,
            base_channels: default_base_channels(),
            blocks: default_blocks(),
            lstm_units: LSTM_UNITS,
            num_classes: NUM_CLASSES,
            window_length: default_window_length(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lstm_units != LSTM_UNITS {
            return Err(Error::config(format!(
                "lstm_units must be {LSTM_UNITS}, got {}",
                self.lstm_units
            )));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::config(format!(
                "num_classes must be {NUM_CLASSES}, got {}",
                self.num_classes
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels must be at least 1"));
        }
        if self.blocks == 0 {
            return Err(Error::config("blocks must be at least 1"));
        }
        if self.window_length == 0 {
            return Err(Error::config("window_length must be at least 1"));
        }
        Ok(())
    }
}

/// Per-channel running statistics for one batch-norm layer.
#[derive(Clone, Debug)]
pub struct BnState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug)]
enum Layer {
    Conv {
        w: usize,
        stride: usize,
        pad: Padding,
    },
    Depthwise {
        w: usize,
        stride: usize,
        pad: Padding,
    },
    Bn {
        gamma: usize,
        beta: usize,
        state: usize,
    },
    Relu,
    Residual {
        main: Vec<Layer>,
        shortcut: Vec<Layer>,
    },
    Inception {
        branches: Vec<Vec<Layer>>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Composed backbone + LSTM head with its trainable parameters.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub config: ModelConfig,
    pub params: Vec<Parameter>,
    pub bn_states: Vec<BnState>,
    backbone: Vec<Layer>,
    pub feature_dim: usize,
    // gate order: input, forget, candidate, output
    lstm_wx: [usize; 4],
    lstm_wh: [usize; 4],
    lstm_b: [usize; 4],
    head_w: usize,
    head_b: usize,
}

struct Builder {
    params: Vec<Parameter>,
    bn_states: Vec<BnState>,
    init: Initializer,
}

impl Builder {
    fn param(&mut self, name: String, tensor: Tensor) -> usize {
        self.params.push(Parameter {
            name,
            tensor,
            trainable: true,
        });
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, kh: usize, kw: usize, ic: usize, oc: usize, stride: usize) -> Layer {
        let t = self.init.conv_kernel(kh, kw, ic, oc);
        Layer::Conv {
            w: self.param(format!("{name}.w"), t),
            stride,
            pad: Padding::Same,
        }
    }

    fn depthwise(&mut self, name: &str, c: usize, stride: usize) -> Layer {
        let t = self.init.depthwise_kernel(3, 3, c);
        Layer::Depthwise {
            w: self.param(format!("{name}.w"), t),
            stride,
            pad: Padding::Same,
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> Layer {
        let gamma = self.param(format!("{name}.gamma"), Tensor::filled(vec![c], 1.0));
        let beta = self.param(format!("{name}.beta"), Tensor::zeros(vec![c]));
        self.bn_states.push(BnState {
            mean: vec![0.0; c],
            var: vec![1.0; c],
        });
        Layer::Bn {
            gamma,
            beta,
            state: self.bn_states.len() - 1,
        }
    }
}

/// Builds a model with seeded parameter initialization. Two builds with the
/// same config produce identical initial parameters.
pub fn build_model(config: &ModelConfig) -> Result<ModelGraph> {
    config.validate()?;
    let mut b = Builder {
        params: Vec::new(),
        bn_states: Vec::new(),
        init: Initializer::new(config.seed),
    };
    let base = config.base_channels;
    let mut backbone = Vec::new();
    let feature_dim;
    match config.backbone {
        BackboneKind::MicroXception => {
            backbone.push(b.conv("entry.conv", 3, 3, IMAGE_CHANNELS, base, 2));
            backbone.push(b.bn("entry.bn", base));
            backbone.push(Layer::Relu);
            let mut c_in = base;
            for i in 0..config.blocks {
                let c_out = base << i;
                let name = format!("xception{i}");
                let main = vec![
                    b.depthwise(&format!("{name}.dw1"), c_in, 1),
                    b.conv(&format!("{name}.pw1"), 1, 1, c_in, c_out, 1),
                    b.bn(&format!("{name}.bn1"), c_out),
                    Layer::Relu,
                    b.depthwise(&format!("{name}.dw2"), c_out, 2),
                    b.conv(&format!("{name}.pw2"), 1, 1, c_out, c_out, 1),
                    b.bn(&format!("{name}.bn2"), c_out),
                ];
                let shortcut = vec![
                    b.conv(&format!("{name}.proj"), 1, 1, c_in, c_out, 2),
                    b.bn(&format!("{name}.proj_bn"), c_out),
                ];
                backbone.push(Layer::Residual { main, shortcut });
                backbone.push(Layer::Relu);
                c_in = c_out;
            }
            feature_dim = c_in;
        }
        BackboneKind::MicroInception => {
            backbone.push(b.conv("entry.conv", 3, 3, IMAGE_CHANNELS, base, 2));
            backbone.push(b.bn("entry.bn", base));
            backbone.push(Layer::Relu);
            let mut c_in = base;
            for i in 0..config.blocks {
                let name = format!("inception{i}");
                let branches = vec![
                    vec![b.conv(&format!("{name}.b1"), 1, 1, c_in, base, 2)],
                    vec![b.conv(&format!("{name}.b3"), 3, 3, c_in, base, 2)],
                    vec![b.conv(&format!("{name}.b5"), 5, 5, c_in, base, 2)],
                ];
                backbone.push(Layer::Inception { branches });
                c_in = 3 * base;
                backbone.push(b.bn(&format!("{name}.bn"), c_in));
                backbone.push(Layer::Relu);
            }
            feature_dim = c_in;
        }
        BackboneKind::MicroResNet => {
            backbone.push(b.conv("entry.conv", 3, 3, IMAGE_CHANNELS, base, 1));
            backbone.push(b.bn("entry.bn", base));
            backbone.push(Layer::Relu);
            let mut c_in = base;
            for i in 0..config.blocks {
                let c_out = base << (i + 1);
                let name = format!("resnet{i}");
                let main = vec![
                    b.conv(&format!("{name}.conv1"), 3, 3, c_in, c_out, 2),
                    b.bn(&format!("{name}.bn1"), c_out),
                    Layer::Relu,
                    b.conv(&format!("{name}.conv2"), 3, 3, c_out, c_out, 1),
                    b.bn(&format!("{name}.bn2"), c_out),
                ];
                let shortcut = vec![
                    b.conv(&format!("{name}.proj"), 1, 1, c_in, c_out, 2),
                    b.bn(&format!("{name}.proj_bn"), c_out),
                ];
                backbone.push(Layer::Residual { main, shortcut });
                backbone.push(Layer::Relu);
                c_in = c_out;
            }
            feature_dim = c_in;
        }
    }

    let d = feature_dim;
    let mut lstm_wx = [0; 4];
    let mut lstm_wh = [0; 4];
    let mut lstm_b = [0; 4];
    for (gi, gate) in ["i", "f", "g", "o"].iter().enumerate() {
        let wx = b.init.lstm(d, LSTM_UNITS);
        let wh = b.init.lstm(LSTM_UNITS, LSTM_UNITS);
        lstm_wx[gi] = b.param(format!("lstm.wx_{gate}"), wx);
        lstm_wh[gi] = b.param(format!("lstm.wh_{gate}"), wh);
        // forget-gate bias starts at 1 so early training retains state
        let bias = if *gate == "f" { 1.0 } else { 0.0 };
        lstm_b[gi] = b.param(format!("lstm.b_{gate}"), Tensor::filled(vec![LSTM_UNITS], bias));
    }
    let head = b.init.dense(LSTM_UNITS, NUM_CLASSES);
    let head_w = b.param("head.w".to_string(), head);
    let head_b = b.param("head.b".to_string(), Tensor::zeros(vec![NUM_CLASSES]));

    Ok(ModelGraph {
        config: config.clone(),
        params: b.params,
        bn_states: b.bn_states,
        backbone,
        feature_dim,
        lstm_wx,
        lstm_wh,
        lstm_b,
        head_w,
        head_b,
    })
}

/// One recorded forward pass over a batch of windows.
pub struct BatchForward {
    pub graph: Graph,
    /// Leaf node per parameter, index-aligned with `ModelGraph::params`.
    pub param_nodes: Vec<NodeId>,
    /// `[batch, 3]` class probabilities.
    pub probs: NodeId,
    /// Batch statistics per batch-norm layer (train mode only).
    pub bn_batch_stats: Vec<(usize, Vec<f64>, Vec<f64>)>,
    /// LSTM state after the last step, one row per window.
    pub final_state: LstmState,
}

impl ModelGraph {
    pub fn num_params(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn expected_resolution(&self) -> Resolution {
        self.config.backbone.resolution()
    }

    fn check_resolution(&self, side: usize) -> Result<()> {
        let want = self.expected_resolution().side();
        if side != want {
            return Err(Error::data(format!(
                "image resolution {side}x{side} does not match the {} backbone's expected {want}x{want}",
                self.config.backbone.name()
            )));
        }
        Ok(())
    }

    /// Stacks window images into one `[count, side, side, 3]` input tensor.
    fn stack_images(&self, images: &[&ResizedImage]) -> Result<Tensor> {
        let side = self.expected_resolution().side();
        let mut data = Vec::with_capacity(images.len() * side * side * IMAGE_CHANNELS);
        for img in images {
            self.check_resolution(img.side)?;
            data.extend_from_slice(&img.pixels);
        }
        Ok(Tensor::new(
            vec![images.len(), side, side, IMAGE_CHANNELS],
            data,
        ))
    }

    fn layer_forward(
        &self,
        g: &mut Graph,
        layers: &[Layer],
        mut x: NodeId,
        pn: &[NodeId],
        mode: Mode,
        bn_out: &mut Vec<(usize, Vec<f64>, Vec<f64>)>,
    ) -> NodeId {
        for layer in layers {
            x = match layer {
                Layer::Conv { w, stride, pad } => g.conv2d(x, pn[*w], *stride, *pad),
                Layer::Depthwise { w, stride, pad } => g.depthwise_conv2d(x, pn[*w], *stride, *pad),
                Layer::Bn { gamma, beta, state } => match mode {
                    Mode::Train => {
                        let (y, mean, var) = g.batch_norm_train(x, pn[*gamma], pn[*beta], BN_EPS);
                        bn_out.push((*state, mean, var));
                        y
                    }
                    Mode::Eval => {
                        let s = &self.bn_states[*state];
                        g.batch_norm_eval(x, pn[*gamma], pn[*beta], &s.mean, &s.var, BN_EPS)
                    }
                },
                Layer::Relu => g.relu(x),
                Layer::Residual { main, shortcut } => {
                    let m = self.layer_forward(g, main, x, pn, mode, bn_out);
                    let s = if shortcut.is_empty() {
                        x
                    } else {
                        self.layer_forward(g, shortcut, x, pn, mode, bn_out)
                    };
                    g.add(m, s)
                }
                Layer::Inception { branches } => {
                    let outs: Vec<NodeId> = branches
                        .iter()
                        .map(|branch| self.layer_forward(g, branch, x, pn, mode, bn_out))
                        .collect();
                    g.concat_channels(&outs)
                }
            };
        }
        x
    }

    fn lstm_step_nodes(
        &self,
        g: &mut Graph,
        x: NodeId,
        h: NodeId,
        c: NodeId,
        pn: &[NodeId],
    ) -> (NodeId, NodeId) {
        let gate = |g: &mut Graph, gi: usize, x: NodeId, h: NodeId| -> NodeId {
            let xz = g.matmul(x, pn[self.lstm_wx[gi]]);
            let hz = g.matmul(h, pn[self.lstm_wh[gi]]);
            let z = g.add(xz, hz);
            g.add_bias(z, pn[self.lstm_b[gi]])
        };
        let zi = gate(g, 0, x, h);
        let i = g.sigmoid(zi);
        let zf = gate(g, 1, x, h);
        let f = g.sigmoid(zf);
        let zg = gate(g, 2, x, h);
        let cand = g.tanh(zg);
        let zo = gate(g, 3, x, h);
        let o = g.sigmoid(zo);
        let fc = g.mul(f, c);
        let ig = g.mul(i, cand);
        let c_new = g.add(fc, ig);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        (h_new, c_new)
    }

    /// Forward over `batch` windows of `t` images each, stacked row-major as
    /// `[batch * t, side, side, 3]`. The backbone is applied to every image
    /// with shared weights; the LSTM consumes each window's feature sequence.
    pub fn forward_batch(
        &self,
        input: Tensor,
        batch: usize,
        t: usize,
        initial_state: Option<&LstmState>,
        mode: Mode,
    ) -> Result<BatchForward> {
        assert_eq!(input.shape()[0], batch * t, "input rows must equal batch * t");
        self.check_resolution(input.shape()[1])?;
        let mut g = Graph::new();
        let pn: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| g.leaf(p.tensor.clone()))
            .collect();
        let x = g.leaf(input);
        let mut bn_batch_stats = Vec::new();
        let features = self.layer_forward(&mut g, &self.backbone, x, &pn, mode, &mut bn_batch_stats);
        let feats = g.global_avg_pool(features);
        let state = match initial_state {
            Some(s) => s.clone(),
            None => LstmState::zeros(batch),
        };
        let mut h = g.leaf(state.hidden);
        let mut c = g.leaf(state.cell);
        for step in 0..t {
            let rows: Vec<usize> = (0..batch).map(|b| b * t + step).collect();
            let xt = g.gather_rows(feats, rows);
            let (h2, c2) = self.lstm_step_nodes(&mut g, xt, h, c, &pn);
            h = h2;
            c = c2;
        }
        let logits = g.matmul(h, pn[self.head_w]);
        let logits = g.add_bias(logits, pn[self.head_b]);
        let probs = g.softmax(logits);
        Ok(BatchForward {
            final_state: LstmState {
                hidden: g.value(h).clone(),
                cell: g.value(c).clone(),
            },
            graph: g,
            param_nodes: pn,
            probs,
            bn_batch_stats,
        })
    }

    /// Single-window inference: probabilities plus the final LSTM state for
    /// optional stateful streaming.
    pub fn forward_window(
        &self,
        window: &[&ResizedImage],
        initial_state: Option<&LstmState>,
    ) -> Result<([f64; NUM_CLASSES], LstmState)> {
        if window.is_empty() {
            return Err(Error::data("forward_window requires at least one image"));
        }
        let input = self.stack_images(window)?;
        let fwd = self.forward_batch(input, 1, window.len(), initial_state, Mode::Eval)?;
        let p = fwd.graph.value(fwd.probs).data();
        Ok(([p[0], p[1], p[2]], fwd.final_state))
    }

    /// One label per image. Stateful mode carries LSTM state across
    /// consecutive images (one `lstm_step` per image); stateless mode slides
    /// windows of the configured length, labeling each window's last image,
    /// with the first images labeled by their longest available prefix window.
    pub fn predict_stream(&self, images: &[ResizedImage], stateful: bool) -> Result<Vec<ClassLabel>> {
        let mut out = Vec::with_capacity(images.len());
        if stateful {
            let mut state: Option<LstmState> = None;
            for img in images {
                let (probs, next) = self.forward_window(&[img], state.as_ref())?;
                out.push(argmax_label(&probs));
                state = Some(next);
            }
        } else {
            let t = self.config.window_length;
            for i in 0..images.len() {
                let start = (i + 1).saturating_sub(t);
                let window: Vec<&ResizedImage> = images[start..=i].iter().collect();
                let (probs, _) = self.forward_window(&window, None)?;
                out.push(argmax_label(&probs));
            }
        }
        Ok(out)
    }

    /// Folds train-mode batch statistics into running statistics.
    pub fn update_running_stats(&mut self, batch_stats: &[(usize, Vec<f64>, Vec<f64>)]) {
        for (state, mean, var) in batch_stats {
            let s = &mut self.bn_states[*state];
            for (r, m) in s.mean.iter_mut().zip(mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            for (r, v) in s.var.iter_mut().zip(var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
            }
        }
    }
}

pub fn argmax_label(probs: &[f64; NUM_CLASSES]) -> ClassLabel {
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    ClassLabel::from_index(best).unwrap()
}

// ---- checkpoint serialization ----

const CKPT_MAGIC: &[u8; 4] = b"FCKP";
const CKPT_VERSION: u32 = 1;

/// Writes parameters (and batch-norm running statistics, under reserved
/// `bn_state.*` names) as a little-endian binary checkpoint.
pub fn save_checkpoint(model: &ModelGraph, path: &Path) -> Result<()> {
    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = model
        .params
        .iter()
        .map(|p| {
            (
                p.name.clone(),
                p.tensor.shape().to_vec(),
                p.tensor.data().to_vec(),
            )
        })
        .collect();
    for (i, s) in model.bn_states.iter().enumerate() {
        entries.push((format!("bn_state.{i}.mean"), vec![s.mean.len()], s.mean.clone()));
        entries.push((format!("bn_state.{i}.var"), vec![s.var.len()], s.var.clone()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, shape, data) in &entries {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint into a freshly built model, validating every shape.
pub fn load_checkpoint(model: &mut ModelGraph, path: &Path) -> Result<()> {
    let mut r = BufReader::new(File::open(path).map_err(|e| {
        Error::data(format!("cannot open checkpoint {}: {e}", path.display()))
    })?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::data("not a checkpoint file (bad magic)"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != CKPT_VERSION {
        return Err(Error::data("unsupported checkpoint version"));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf);
    let mut loaded = 0usize;
    for _ in 0..count {
        r.read_exact(&mut u32buf)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::data("checkpoint contains a non-UTF-8 parameter name"))?;
        r.read_exact(&mut u32buf)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut u64buf = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut u64buf)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut u32buf)?;
            data.push(f32::from_le_bytes(u32buf) as f64);
        }
        if let Some(rest) = name.strip_prefix("bn_state.") {
            let mut parts = rest.split('.');
            let idx: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::data(format!("bad checkpoint entry '{name}'")))?;
            let field = parts.next().unwrap_or("");
            let state = model.bn_states.get_mut(idx).ok_or_else(|| {
                Error::data(format!("checkpoint entry '{name}' has no matching layer"))
            })?;
            let target = match field {
                "mean" => &mut state.mean,
                "var" => &mut state.var,
                _ => return Err(Error::data(format!("bad checkpoint entry '{name}'"))),
            };
            if target.len() != data.len() {
                return Err(Error::data(format!(
                    "checkpoint entry '{name}' has length {} but layer expects {}",
                    data.len(),
                    target.len()
                )));
            }
            *target = data;
        } else {
            let param = model
                .params
                .iter_mut()
                .find(|p| p.name == name)
                .ok_or_else(|| {
                    Error::data(format!("checkpoint parameter '{name}' not in model"))
                })?;
            if param.tensor.shape() != shape.as_slice() {
                return Err(Error::data(format!(
                    "checkpoint parameter '{name}' has shape {:?} but model expects {:?}",
                    shape,
                    param.tensor.shape()
                )));
            }
            param.tensor = Tensor::new(shape, data);
        }
        loaded += 1;
    }
    let expected = model.params.len() + 2 * model.bn_states.len();
    if loaded != expected {
        return Err(Error::data(format!(
            "checkpoint holds {loaded} entries but model expects {expected}"
        )));
    }
    Ok(())
}

/// Architecture config persists as JSON alongside the binary checkpoint.
pub fn save_model_config(config: &ModelConfig, path: &Path) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, config)?;
    Ok(())
}

pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let f = BufReader::new(File::open(path).map_err(|e| {
        Error::data(format!("cannot open model config {}: {e}", path.display()))
    })?);
    let config: ModelConfig = serde_json::from_reader(f)?;
    config.validate()?;
    Ok(config)
}
