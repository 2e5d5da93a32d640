use super::arch::{Layer, LayerKind};
use super::params::FinoNetParams;
use crate::audio::MfccFeatures;
use crate::autodiff::{BatchStats, Graph, Mode, Var, DEFAULT_EPSILON};
use crate::error::{FinoError, Result};
use crate::rng::DetRng;
use crate::tensor::Tensor;
use crate::vision::VisualSample;

/// A batch of network inputs. Vision is time-major `[T*N, C, H, W]` (frame
/// `t` of sample `n` at row `t*N + n`); audio is `[N, n_mfcc, T_a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs {
    pub vision: Option<Tensor>,
    pub audio: Option<Tensor>,
    pub batch: usize,
}

impl ModelInputs {
    /// Assembles a batch, keeping only the vision channels `variant` reads.
    /// Pass empty slices for modalities the variant does not use.
    pub fn from_samples(
        variant: super::Variant,
        visual: &[&VisualSample],
        audio: &[&MfccFeatures],
    ) -> Result<ModelInputs> {
        let batch = visual.len().max(audio.len());
        if batch == 0 {
            return Err(FinoError::contract("empty batch"));
        }
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(FinoError::contract(format!("variant {variant} needs {what} for every sample")))
            }
        };
        let vision = if variant.uses_vision() {
            need(visual.len() == batch, "visual input")?;
            let channels = variant.vision_channels();
            let s = visual[0].frames.shape();
            let (t, h, w) = (s[0], s[2], s[3]);
            let plane = h * w;
            let mut data = Vec::with_capacity(t * batch * channels.len() * plane);
            for ti in 0..t {
                for v in visual {
                    if v.frames.shape() != s {
                        return Err(FinoError::dim(format!(
                            "visual sample shape {:?} differs from {s:?}",
                            v.frames.shape()
                        )));
                    }
                    let frame = &v.frames.data()[ti * s[1] * plane..(ti + 1) * s[1] * plane];
                    data.extend_from_slice(&frame[channels.start * plane..channels.end * plane]);
                }
            }
            Some(Tensor::new(&[t * batch, channels.len(), h, w], data)?)
        } else {
            None
        };
        let audio = if variant.uses_audio() {
            need(audio.len() == batch, "MFCC features")?;
            let s = audio[0].coefficients.shape().to_vec();
            let mut data = Vec::with_capacity(batch * s[0] * s[1]);
            for a in audio {
                if a.coefficients.shape() != s.as_slice() {
                    return Err(FinoError::dim(format!(
                        "MFCC shape {:?} differs from {s:?}",
                        a.coefficients.shape()
                    )));
                }
                data.extend_from_slice(a.coefficients.data());
            }
            Some(Tensor::new(&[batch, s[0], s[1]], data)?)
        } else {
            None
        };
        Ok(ModelInputs { vision, audio, batch })
    }
}

/// Recurrent state; `[N, C, H, W]` or unbatched `[C, H, W]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvLstmState {
    pub hidden: Var,
    pub cell: Var,
}

/// One convLSTM step. `weight` is `[4C, C_in + C, k, k]` acting on the
/// channel concatenation of `x` and the hidden state; gate blocks are taken
/// in the order input, forget, output, candidate.
pub fn conv_lstm_step(
    g: &mut Graph,
    x: Var,
    state: &ConvLstmState,
    weight: Var,
    bias: Var,
) -> Result<ConvLstmState> {
    let xs = g.shape(x).to_vec();
    let hs = g.shape(state.hidden).to_vec();
    if hs != g.shape(state.cell) {
        return Err(FinoError::dim(format!(
            "convLSTM hidden {hs:?} and cell {:?} differ",
            g.shape(state.cell)
        )));
    }
    let rank = xs.len();
    if !(rank == 3 || rank == 4) || hs.len() != rank {
        return Err(FinoError::dim(format!("convLSTM input {xs:?} with state {hs:?}")));
    }
    let ch = rank - 3;
    let same_rest = (0..rank).filter(|&d| d != ch).all(|d| xs[d] == hs[d]);
    if !same_rest {
        return Err(FinoError::dim(format!(
            "convLSTM input {xs:?} and state {hs:?} disagree outside the channel axis"
        )));
    }
    let (c_in, c) = (xs[ch], hs[ch]);
    let ws = g.shape(weight).to_vec();
    if ws.len() != 4 || ws[0] != 4 * c || ws[1] != c_in + c || ws[2] != ws[3] || ws[2].is_multiple_of(2) {
        return Err(FinoError::dim(format!(
            "convLSTM kernel {ws:?}, want [{}, {}, k, k] with odd k",
            4 * c,
            c_in + c
        )));
    }
    let z = g.concat(&[x, state.hidden], ch)?;
    let gates = g.conv2d(z, weight, Some(bias), 1, ws[2] / 2)?;
    let gate = |g: &mut Graph, k: usize| g.slice(gates, ch, k * c, c);
    let (i, f, o, cand) = (gate(g, 0)?, gate(g, 1)?, gate(g, 2)?, gate(g, 3)?);
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let o = g.sigmoid(o)?;
    let cand = g.tanh(cand)?;
    let keep = g.mul(f, state.cell)?;
    let write = g.mul(i, cand)?;
    let cell = g.add(keep, write)?;
    let squashed = g.tanh(cell)?;
    let hidden = g.mul(o, squashed)?;
    Ok(ConvLstmState { hidden, cell })
}

/// Adds every parameter to `g`: trainable ones as leaves that collect
/// gradients, frozen ones as constants.
pub fn bind_params(g: &mut Graph, params: &FinoNetParams) -> Vec<Var> {
    params
        .tensors()
        .enumerate()
        .map(|(i, (_, t))| {
            if params.is_frozen(i) {
                g.constant(t.clone())
            } else {
                g.param(t.clone())
            }
        })
        .collect()
}

#[derive(Debug)]
pub struct ForwardPass {
    pub logits: Var,
    pub vision_features: Option<Var>,
    pub audio_features: Option<Var>,
    /// Train-mode batch statistics per batch-norm layer, for the caller to
    /// fold into the running averages.
    pub bn_stats: Vec<(String, BatchStats)>,
}

struct Ctx<'a> {
    params: &'a FinoNetParams,
    vars: &'a [Var],
    mode: Mode,
    rng: &'a mut DetRng,
    bn_stats: Vec<(String, BatchStats)>,
    batch: usize,
}

impl Ctx<'_> {
    fn var(&self, name: &str) -> Result<Var> {
        let i = self
            .params
            .index_of(name)
            .ok_or_else(|| FinoError::contract(format!("missing parameter {name}")))?;
        self.vars
            .get(i)
            .copied()
            .ok_or_else(|| FinoError::contract(format!("no graph variable bound for {name}")))
    }

    fn opt_var(&self, name: &str, present: bool) -> Result<Option<Var>> {
        present.then(|| self.var(name)).transpose()
    }

    fn run(&mut self, g: &mut Graph, layers: &[Layer], mut x: Var) -> Result<Var> {
        for l in layers {
            let n = &l.name;
            x = match l.kind {
                LayerKind::Conv2d { padding, bias, .. } => {
                    let w = self.var(&format!("{n}.weight"))?;
                    let b = self.opt_var(&format!("{n}.bias"), bias)?;
                    g.conv2d(x, w, b, 1, padding)?
                }
                LayerKind::Conv1d { bias, .. } => {
                    let w = self.var(&format!("{n}.weight"))?;
                    let b = self.opt_var(&format!("{n}.bias"), bias)?;
                    g.conv1d(x, w, b, 1, 0)?
                }
                LayerKind::Linear { .. } => {
                    let w = self.var(&format!("{n}.weight"))?;
                    let b = self.var(&format!("{n}.bias"))?;
                    g.linear(x, w, Some(b))?
                }
                LayerKind::BatchNorm { .. } => {
                    let gamma = self.var(&format!("{n}.gamma"))?;
                    let beta = self.var(&format!("{n}.beta"))?;
                    let running = self
                        .params
                        .running(n)
                        .ok_or_else(|| FinoError::contract(format!("no running stats for {n}")))?;
                    let (y, stats) = g.batch_norm(x, gamma, beta, self.mode, running, DEFAULT_EPSILON)?;
                    if let Some(s) = stats {
                        self.bn_stats.push((n.clone(), s));
                    }
                    y
                }
                LayerKind::Relu => g.relu(x)?,
                LayerKind::Dropout { p } => g.dropout(x, p, self.mode, self.rng)?,
                LayerKind::MaxPool2d { window } => {
                    let s = g.shape(x);
                    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                    if h % window != 0 || w % window != 0 {
                        return Err(FinoError::dim(format!(
                            "{n}: {h}x{w} feature map is not divisible by the pooling window {window}"
                        )));
                    }
                    g.max_pool2d(x, window, window)?
                }
                LayerKind::ConvLstm { hidden, last_only, .. } => {
                    let w = self.var(&format!("{n}.weight"))?;
                    let b = self.var(&format!("{n}.bias"))?;
                    self.unroll(g, x, hidden, w, b, last_only)?
                }
                LayerKind::GlobalAvgPool => g.global_avg_pool(x)?,
                LayerKind::GlobalMaxPool => g.global_max_pool(x)?,
            };
        }
        Ok(x)
    }

    /// Runs the cell over the time-major sequence from a zero state.
    fn unroll(&mut self, g: &mut Graph, seq: Var, hidden: usize, w: Var, b: Var, last_only: bool) -> Result<Var> {
        let s = g.shape(seq).to_vec();
        let n = self.batch;
        if s.len() != 4 || !s[0].is_multiple_of(n) {
            return Err(FinoError::dim(format!("convLSTM sequence {s:?} for batch {n}")));
        }
        let steps = s[0] / n;
        let zeros = Tensor::zeros(&[n, hidden, s[2], s[3]])?;
        let mut state = ConvLstmState {
            hidden: g.constant(zeros.clone()),
            cell: g.constant(zeros),
        };
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = g.slice(seq, 0, t * n, n)?;
            state = conv_lstm_step(g, x, &state, w, b)?;
            outputs.push(state.hidden);
        }
        if last_only {
            Ok(state.hidden)
        } else {
            g.concat(&outputs, 0)
        }
    }

    fn vision_block(&mut self, g: &mut Graph, block: usize, seq: Var) -> Result<Var> {
        let arch = self.params.architecture();
        let layers = arch
            .vision_blocks
            .get(block)
            .ok_or_else(|| FinoError::contract(format!("no vision block {}", block + 1)))?;
        let s = g.shape(seq);
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(FinoError::dim(format!(
                "vision block {} input {s:?}: need [T*N, C, H, W] with even H and W",
                block + 1
            )));
        }
        self.run(g, layers, seq)
    }

    fn vision_branch(&mut self, g: &mut Graph, seq: Var) -> Result<Var> {
        let want = self.params.config().variant.input_channels();
        let s = g.shape(seq);
        if want.is_none() || s.len() != 4 || Some(s[1]) != want {
            return Err(FinoError::dim(format!(
                "vision input {s:?}, variant {} wants {want:?} channels",
                self.params.config().variant
            )));
        }
        let mut x = seq;
        for b in 0..self.params.architecture().vision_blocks.len() {
            x = self.vision_block(g, b, x)?;
        }
        let tail = self.params.architecture().vision_tail.clone();
        self.run(g, &tail, x)
    }

    fn audio_branch(&mut self, g: &mut Graph, mfcc: Var) -> Result<Var> {
        let cfg = self.params.config();
        let s = g.shape(mfcc);
        if s.len() != 3 || s[1] != cfg.n_mfcc {
            return Err(FinoError::dim(format!(
                "audio input {s:?}, want [N, {}, T_a]",
                cfg.n_mfcc
            )));
        }
        let shrink = cfg.audio_layers * (cfg.audio_kernel - 1);
        if s[2] <= shrink {
            return Err(FinoError::Config(format!(
                "{} MFCC frames are too few for {} valid convolutions of width {}",
                s[2], cfg.audio_layers, cfg.audio_kernel
            )));
        }
        let layers = self.params.architecture().audio.clone();
        self.run(g, &layers, mfcc)
    }

    fn fusion(&mut self, g: &mut Graph, vision: Option<Var>, audio: Option<Var>) -> Result<Var> {
        let variant = self.params.config().variant;
        if vision.is_some() != variant.uses_vision() || audio.is_some() != variant.uses_audio() {
            return Err(FinoError::contract(format!(
                "variant {variant} fused with vision: {}, audio: {}",
                vision.is_some(),
                audio.is_some()
            )));
        }
        let parts: Vec<Var> = vision.into_iter().chain(audio).collect();
        let fused = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 1)? };
        let width = self.params.architecture().concat_width;
        if g.shape(fused) != [self.batch, width] {
            return Err(FinoError::dim(format!(
                "fused features {:?}, want [{}, {width}]",
                g.shape(fused),
                self.batch
            )));
        }
        let head = self.params.architecture().head.clone();
        self.run(g, &head, fused)
    }
}

/// Forward-pass driver with access to the individual stages.
pub struct ForwardCtx<'a>(Ctx<'a>);

impl<'a> ForwardCtx<'a> {
    /// `vars` must come from [`bind_params`] (or match its order).
    pub fn new(params: &'a FinoNetParams, vars: &'a [Var], mode: Mode, rng: &'a mut DetRng, batch: usize) -> Self {
        ForwardCtx(Ctx {
            params,
            vars,
            mode,
            rng,
            bn_stats: Vec::new(),
            batch,
        })
    }

    /// `[T*N, C_in, H, W]` to `[T*N, C, H/2, W/2]` (last block: `[N, C,
    /// H/2, W/2]`, the final hidden state).
    pub fn vision_block(&mut self, g: &mut Graph, block: usize, seq: Var) -> Result<Var> {
        self.0.vision_block(g, block, seq)
    }

    /// `[T*N, C_in, H, W]` to `[N, C_3]`.
    pub fn vision_branch(&mut self, g: &mut Graph, seq: Var) -> Result<Var> {
        self.0.vision_branch(g, seq)
    }

    /// `[N, n_mfcc, T_a]` to `[N, audio_filters]`.
    pub fn audio_branch(&mut self, g: &mut Graph, mfcc: Var) -> Result<Var> {
        self.0.audio_branch(g, mfcc)
    }

    /// Concatenates (vision, audio) and applies the head; `[N, n_classes]`.
    pub fn fusion(&mut self, g: &mut Graph, vision: Option<Var>, audio: Option<Var>) -> Result<Var> {
        self.0.fusion(g, vision, audio)
    }

    pub fn into_bn_stats(self) -> Vec<(String, BatchStats)> {
        self.0.bn_stats
    }
}

/// Full forward pass over `inputs`, dispatching branches by variant.
pub fn forward(
    g: &mut Graph,
    params: &FinoNetParams,
    vars: &[Var],
    inputs: &ModelInputs,
    mode: Mode,
    rng: &mut DetRng,
) -> Result<ForwardPass> {
    let variant = params.config().variant;
    let missing = |what: &str| FinoError::contract(format!("variant {variant} needs {what} input"));
    let mut ctx = ForwardCtx::new(params, vars, mode, rng, inputs.batch);
    let vision_features = if variant.uses_vision() {
        let t = inputs.vision.clone().ok_or_else(|| missing("vision"))?;
        let seq = g.constant(t);
        Some(ctx.vision_branch(g, seq)?)
    } else {
        None
    };
    let audio_features = if variant.uses_audio() {
        let t = inputs.audio.clone().ok_or_else(|| missing("audio"))?;
        if t.shape().first() != Some(&inputs.batch) {
            return Err(FinoError::dim(format!(
                "audio batch {:?} does not match {}",
                t.shape(),
                inputs.batch
            )));
        }
        let x = g.constant(t);
        Some(ctx.audio_branch(g, x)?)
    } else {
        None
    };
    let logits = ctx.fusion(g, vision_features, audio_features)?;
    Ok(ForwardPass {
        logits,
        vision_features,
        audio_features,
        bn_stats: ctx.into_bn_stats(),
    })
}
