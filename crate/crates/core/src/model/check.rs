//! Finite-difference checks of every layer type and of the whole model,
//! shared by the test suites and the `gradcheck` command.

use super::forward::{conv_lstm_step, forward, ConvLstmState, ForwardCtx, ModelInputs};
use super::params::FinoNetParams;
use super::{ModelConfig, Variant};
use crate::autodiff::{GradCheck, GradCheckReport, Graph, Mode, RunningStats, Var, DEFAULT_EPSILON};
use crate::error::Result;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Model shape small enough to difference every parameter: 16x16 frames,
/// 64 MFCC frames and narrow layers.
pub fn desk_check_config(variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig {
        variant,
        block_channels: [3, 4, 4],
        audio_filters: 4,
        fc1_width: 6,
        audio_only_fc_width: 6,
        input_hw: (16, 16),
        t_a: 64,
        seed,
        ..ModelConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn rand(shape: &[usize], state: RngState, tag: &str, scale: f64) -> Result<Tensor> {
    Tensor::uniform(shape, -scale, scale, &mut state.derive_str(tag).stream())
}

/// Freeze mask leaving only tensors under `prefix` trainable: the stage
/// under test does not touch the rest.
fn only(params: &FinoNetParams, prefix: &str) -> Vec<bool> {
    params.names().map(|n| !n.starts_with(prefix)).collect()
}

/// `sum(y * r)` for a fixed random `r`, so that every output element gets a
/// distinct adjoint.
fn project(g: &mut Graph, y: Var, state: RngState) -> Result<Var> {
    let r = rand(g.shape(y), state, "projection", 1.0)?;
    let r = g.constant(r);
    let p = g.mul(y, r)?;
    g.sum(p)
}

fn synthetic_inputs(cfg: &ModelConfig, batch: usize, state: RngState) -> Result<ModelInputs> {
    let (h, w) = cfg.input_hw;
    let vision = match cfg.variant.input_channels() {
        Some(c) => Some(Tensor::uniform(
            &[crate::vision::SEQ_LEN * batch, c, h, w],
            0.0,
            1.0,
            &mut state.derive_str("vision").stream(),
        )?),
        None => None,
    };
    let audio = if cfg.variant.uses_audio() {
        Some(rand(&[batch, cfg.n_mfcc, cfg.t_a], state, "audio", 1.0)?)
    } else {
        None
    };
    Ok(ModelInputs { vision, audio, batch })
}

/// Differences every trainable parameter of the model (train mode, fixed
/// dropout masks) under a class-weighted cross-entropy loss.
pub fn check_model(cfg: &ModelConfig, batch: usize, gc: &GradCheck) -> Result<GradCheckReport> {
    let params = FinoNetParams::new(cfg)?;
    let state = RngState::new(cfg.seed).derive_str("gradcheck");
    let inputs = synthetic_inputs(cfg, batch, state)?;
    let targets: Vec<usize> = (0..batch).map(|i| i % cfg.n_classes).collect();
    let weights: Vec<f64> = (0..cfg.n_classes).map(|k| 0.5 + k as f64).collect();
    let dropout = state.derive_str("dropout");
    gc.run_with_frozen(
        |g, vars| {
            let mut rng = dropout.stream();
            let pass = forward(g, &params, vars, &inputs, Mode::Train, &mut rng)?;
            g.softmax_cross_entropy(pass.logits, &targets, &weights)
        },
        &params.to_vec(),
        params.frozen_mask(),
    )
}

/// One check per layer type, each on small random inputs (inputs are
/// differenced too).
pub fn check_layers(seed: u64, gc: &GradCheck) -> Result<Vec<LayerCheck>> {
    let s = RngState::new(seed).derive_str("layers");
    let mut out = Vec::new();
    let mut add = |name: &'static str, report: GradCheckReport| out.push(LayerCheck { name, report });

    let x = rand(&[2, 3, 6, 6], s, "conv2d.x", 1.0)?;
    let k = rand(&[4, 3, 3, 3], s, "conv2d.k", 0.5)?;
    let b = rand(&[4], s, "conv2d.b", 0.5)?;
    add(
        "conv2d",
        gc.run(
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                project(g, y, s)
            },
            &[x, k, b],
        )?,
    );

    let x = rand(&[2, 3, 20], s, "conv1d.x", 1.0)?;
    let k = rand(&[4, 3, 8], s, "conv1d.k", 0.5)?;
    let b = rand(&[4], s, "conv1d.b", 0.5)?;
    add(
        "conv1d",
        gc.run(
            |g, v| {
                let y = g.conv1d(v[0], v[1], Some(v[2]), 1, 0)?;
                project(g, y, s)
            },
            &[x, k, b],
        )?,
    );

    let x = rand(&[3, 5], s, "linear.x", 1.0)?;
    let w = rand(&[4, 5], s, "linear.w", 0.5)?;
    let b = rand(&[4], s, "linear.b", 0.5)?;
    add(
        "linear",
        gc.run(
            |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]))?;
                project(g, y, s)
            },
            &[x, w, b],
        )?,
    );

    let x = rand(&[4, 3, 3, 3], s, "bn.x", 1.0)?;
    let gamma = rand(&[3], s, "bn.gamma", 1.0)?;
    let beta = rand(&[3], s, "bn.beta", 1.0)?;
    let running = RunningStats::new(3);
    add(
        "batch_norm",
        gc.run(
            |g, v| {
                let (y, _) = g.batch_norm(v[0], v[1], v[2], Mode::Train, &running, DEFAULT_EPSILON)?;
                project(g, y, s)
            },
            &[x, gamma, beta],
        )?,
    );

    for (name, tag) in [("relu", 0), ("sigmoid", 1), ("tanh", 2)] {
        let x = rand(&[3, 7], s, name, 2.0)?;
        add(
            name,
            gc.run(
                |g, v| {
                    let y = match tag {
                        0 => g.relu(v[0])?,
                        1 => g.sigmoid(v[0])?,
                        _ => g.tanh(v[0])?,
                    };
                    project(g, y, s)
                },
                &[x],
            )?,
        );
    }

    let x = rand(&[2, 2, 6, 6], s, "pool.x", 1.0)?;
    add(
        "max_pool2d",
        gc.run(
            |g, v| {
                let y = g.max_pool2d(v[0], 2, 2)?;
                project(g, y, s)
            },
            std::slice::from_ref(&x),
        )?,
    );
    add(
        "global_avg_pool",
        gc.run(
            |g, v| {
                let y = g.global_avg_pool(v[0])?;
                project(g, y, s)
            },
            std::slice::from_ref(&x),
        )?,
    );
    add(
        "global_max_pool",
        gc.run(
            |g, v| {
                let y = g.global_max_pool(v[0])?;
                project(g, y, s)
            },
            std::slice::from_ref(&x),
        )?,
    );

    let x = rand(&[4, 6], s, "dropout.x", 1.0)?;
    let masks = s.derive_str("dropout.mask");
    add(
        "dropout",
        gc.run(
            |g, v| {
                let y = g.dropout(v[0], 0.4, Mode::Train, &mut masks.stream())?;
                project(g, y, s)
            },
            &[x],
        )?,
    );

    let logits = rand(&[4, 2], s, "ce.logits", 2.0)?;
    add(
        "cross_entropy",
        gc.run(
            |g, v| g.softmax_cross_entropy(v[0], &[0, 1, 1, 0], &[1.4, 0.8]),
            &[logits],
        )?,
    );

    let (c_in, c) = (2, 3);
    let x = rand(&[2, c_in, 4, 4], s, "lstm.x", 1.0)?;
    let h = rand(&[2, c, 4, 4], s, "lstm.h", 0.5)?;
    let cell = rand(&[2, c, 4, 4], s, "lstm.c", 0.5)?;
    let w = rand(&[4 * c, c_in + c, 3, 3], s, "lstm.w", 0.3)?;
    let b = rand(&[4 * c], s, "lstm.b", 0.3)?;
    add(
        "conv_lstm_step",
        gc.run(
            |g, v| {
                let state = ConvLstmState { hidden: v[1], cell: v[2] };
                let next = conv_lstm_step(g, v[0], &state, v[3], v[4])?;
                let hc = g.concat(&[next.hidden, next.cell], 1)?;
                project(g, hc, s)
            },
            &[x, h, cell, w, b],
        )?,
    );

    // Block 1 of an RGB-D model on an 8x4x8x8 sequence.
    let cfg = ModelConfig {
        variant: Variant::Rgbd,
        block_channels: [3, 3, 3],
        input_hw: (8, 8),
        seed,
        ..ModelConfig::default()
    };
    let params = FinoNetParams::new(&cfg)?;
    let seq = rand(&[8, 4, 8, 8], s, "block.seq", 1.0)?;
    let drop = s.derive_str("block.dropout");
    add(
        "vision_block",
        gc.run_with_frozen(
            |g, v| {
                let seq = g.constant(seq.clone());
                let mut rng = drop.stream();
                let mut ctx = ForwardCtx::new(&params, v, Mode::Train, &mut rng, 1);
                let y = ctx.vision_block(g, 0, seq)?;
                project(g, y, s)
            },
            &params.to_vec(),
            &only(&params, "block1."),
        )?,
    );

    let cfg = ModelConfig {
        variant: Variant::A,
        audio_filters: 4,
        audio_only_fc_width: 4,
        t_a: 64,
        seed,
        ..ModelConfig::default()
    };
    let params = FinoNetParams::new(&cfg)?;
    let mfcc = rand(&[2, 20, 64], s, "audio.mfcc", 1.0)?;
    add(
        "audio_branch",
        gc.run_with_frozen(
            |g, v| {
                let x = g.constant(mfcc.clone());
                let mut rng = drop.stream();
                let mut ctx = ForwardCtx::new(&params, v, Mode::Train, &mut rng, 2);
                let y = ctx.audio_branch(g, x)?;
                project(g, y, s)
            },
            &params.to_vec(),
            &only(&params, "audio."),
        )?,
    );

    let cfg = ModelConfig {
        variant: Variant::Rgbda,
        block_channels: [2, 2, 5],
        audio_filters: 3,
        fc1_width: 6,
        seed,
        ..ModelConfig::default()
    };
    let params = FinoNetParams::new(&cfg)?;
    let vis = rand(&[2, 5], s, "fusion.vision", 1.0)?;
    let aud = rand(&[2, 3], s, "fusion.audio", 1.0)?;
    add(
        "fusion_head",
        gc.run_with_frozen(
            |g, v| {
                let (vf, af) = (g.constant(vis.clone()), g.constant(aud.clone()));
                let mut rng = drop.stream();
                let mut ctx = ForwardCtx::new(&params, v, Mode::Train, &mut rng, 2);
                let logits = ctx.fusion(g, Some(vf), Some(af))?;
                g.softmax_cross_entropy(logits, &[1, 0], &[1.0, 1.0])
            },
            &params.to_vec(),
            &only(&params, "head."),
        )?,
    );

    Ok(out)
}
