use serde::{Deserialize, Serialize};

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, padding: usize, bias: bool },
    ConvLstm { in_ch: usize, hidden: usize, kernel: usize, last_only: bool },
    Conv1d { in_ch: usize, out_ch: usize, kernel: usize, bias: bool },
    Linear { in_features: usize, out_features: usize },
    BatchNorm { channels: usize },
    Relu,
    Dropout { p: f64 },
    MaxPool2d { window: usize },
    GlobalAvgPool,
    GlobalMaxPool,
}

impl LayerKind {
    /// Convolutions, convLSTMs and fully connected layers.
    pub fn is_weighted(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d { .. } | LayerKind::ConvLstm { .. } | LayerKind::Conv1d { .. } | LayerKind::Linear { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
    KaimingUniform { fan_in: usize },
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    ScaledUniform { fan_in: usize },
    Zeros,
    Ones,
    /// Zero except the forget-gate block (the second quarter), which is 1.
    ForgetBias { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
}

/// The ordered layer lists of each branch and the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// One list per vision block; empty for the audio-only variant.
    pub vision_blocks: Vec<Vec<Layer>>,
    /// Spatial pooling of the last block's final hidden state.
    pub vision_tail: Vec<Layer>,
    pub audio: Vec<Layer>,
    pub head: Vec<Layer>,
    pub concat_width: usize,
}

fn layer(name: impl Into<String>, kind: LayerKind) -> Layer {
    Layer { name: name.into(), kind }
}

impl Architecture {
    pub fn new(cfg: &ModelConfig) -> Architecture {
        let bn = cfg.use_batch_norm;
        let drop = |layers: &mut Vec<Layer>, name: String| {
            if cfg.use_dropout {
                layers.push(layer(name, LayerKind::Dropout { p: cfg.dropout_p }));
            }
        };
        let conv_unit = |layers: &mut Vec<Layer>, prefix: &str, tag: &str, in_ch: usize, out_ch: usize| {
            layers.push(layer(
                format!("{prefix}.conv_{tag}"),
                LayerKind::Conv2d {
                    in_ch,
                    out_ch,
                    kernel: cfg.conv_kernel,
                    padding: cfg.conv_kernel / 2,
                    bias: !bn,
                },
            ));
            if bn {
                layers.push(layer(format!("{prefix}.bn_{tag}"), LayerKind::BatchNorm { channels: out_ch }));
            }
            layers.push(layer(format!("{prefix}.relu_{tag}"), LayerKind::Relu));
        };

        let mut vision_blocks = Vec::new();
        let mut vision_tail = Vec::new();
        if let Some(c_in) = cfg.variant.input_channels() {
            let mut in_ch = c_in;
            for (b, &ch) in cfg.block_channels.iter().enumerate() {
                let prefix = format!("block{}", b + 1);
                let last = b + 1 == cfg.block_channels.len();
                let mut layers = Vec::new();
                conv_unit(&mut layers, &prefix, "a", in_ch, ch);
                // No dropout directly on the network's first convolution.
                if b > 0 {
                    drop(&mut layers, format!("{prefix}.drop_a"));
                }
                conv_unit(&mut layers, &prefix, "b", ch, ch);
                drop(&mut layers, format!("{prefix}.drop_b"));
                layers.push(layer(format!("{prefix}.pool"), LayerKind::MaxPool2d { window: 2 }));
                layers.push(layer(
                    format!("{prefix}.lstm"),
                    LayerKind::ConvLstm {
                        in_ch: ch,
                        hidden: ch,
                        kernel: cfg.conv_kernel,
                        last_only: last,
                    },
                ));
                // The final convLSTM feeds the latent directly.
                if !last {
                    drop(&mut layers, format!("{prefix}.drop_lstm"));
                }
                vision_blocks.push(layers);
                in_ch = ch;
            }
            vision_tail.push(layer("vision.gap", LayerKind::GlobalAvgPool));
        }

        let mut audio = Vec::new();
        if cfg.variant.uses_audio() {
            let mut in_ch = cfg.n_mfcc;
            for l in 1..=cfg.audio_layers {
                audio.push(layer(
                    format!("audio.conv{l}"),
                    LayerKind::Conv1d {
                        in_ch,
                        out_ch: cfg.audio_filters,
                        kernel: cfg.audio_kernel,
                        bias: !bn,
                    },
                ));
                if bn {
                    audio.push(layer(format!("audio.bn{l}"), LayerKind::BatchNorm { channels: cfg.audio_filters }));
                }
                audio.push(layer(format!("audio.relu{l}"), LayerKind::Relu));
                drop(&mut audio, format!("audio.drop{l}"));
                in_ch = cfg.audio_filters;
            }
            audio.push(layer("audio.gmp", LayerKind::GlobalMaxPool));
        }

        let concat_width = cfg.concat_width();
        let hidden = if cfg.variant.uses_vision() {
            cfg.fc1_width
        } else {
            cfg.audio_only_fc_width
        };
        let mut head = vec![
            layer("head.fc1", LayerKind::Linear { in_features: concat_width, out_features: hidden }),
            layer("head.relu1", LayerKind::Relu),
        ];
        drop(&mut head, "head.drop1".into());
        head.push(layer(
            "head.fc2",
            LayerKind::Linear { in_features: hidden, out_features: cfg.n_classes },
        ));

        Architecture {
            vision_blocks,
            vision_tail,
            audio,
            head,
            concat_width,
        }
    }

    /// Every layer in execution order (vision, audio, head).
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.vision_blocks
            .iter()
            .flatten()
            .chain(&self.vision_tail)
            .chain(&self.audio)
            .chain(&self.head)
    }

    /// Weighted layers with no dropout before the next weighted layer (or
    /// the end of their branch).
    pub fn layers_without_dropout(&self) -> Vec<String> {
        let mut out = Vec::new();
        let lists: Vec<Vec<&Layer>> = {
            // Vision blocks form one chain; the tail pool does not count.
            let vision: Vec<&Layer> = self.vision_blocks.iter().flatten().collect();
            vec![vision, self.audio.iter().collect(), self.head.iter().collect()]
        };
        for list in lists {
            for (i, l) in list.iter().enumerate() {
                if !l.kind.is_weighted() {
                    continue;
                }
                let followed = list[i + 1..]
                    .iter()
                    .take_while(|n| !n.kind.is_weighted())
                    .any(|n| matches!(n.kind, LayerKind::Dropout { .. }));
                if !followed {
                    out.push(l.name.clone());
                }
            }
        }
        out
    }

    /// Learnable tensors in a fixed order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: ParamInit| {
            specs.push(ParamSpec { name, shape, init })
        };
        for l in self.layers() {
            let n = &l.name;
            match l.kind {
                LayerKind::Conv2d { in_ch, out_ch, kernel, bias, .. } => {
                    let fan_in = in_ch * kernel * kernel;
                    push(format!("{n}.weight"), vec![out_ch, in_ch, kernel, kernel], ParamInit::KaimingUniform { fan_in });
                    if bias {
                        push(format!("{n}.bias"), vec![out_ch], ParamInit::Zeros);
                    }
                }
                LayerKind::ConvLstm { in_ch, hidden, kernel, .. } => {
                    let fan_in = (in_ch + hidden) * kernel * kernel;
                    push(
                        format!("{n}.weight"),
                        vec![4 * hidden, in_ch + hidden, kernel, kernel],
                        ParamInit::ScaledUniform { fan_in },
                    );
                    push(format!("{n}.bias"), vec![4 * hidden], ParamInit::ForgetBias { hidden });
                }
                LayerKind::Conv1d { in_ch, out_ch, kernel, bias } => {
                    push(format!("{n}.weight"), vec![out_ch, in_ch, kernel], ParamInit::KaimingUniform { fan_in: in_ch * kernel });
                    if bias {
                        push(format!("{n}.bias"), vec![out_ch], ParamInit::Zeros);
                    }
                }
                LayerKind::Linear { in_features, out_features } => {
                    push(
                        format!("{n}.weight"),
                        vec![out_features, in_features],
                        ParamInit::KaimingUniform { fan_in: in_features },
                    );
                    push(format!("{n}.bias"), vec![out_features], ParamInit::Zeros);
                }
                LayerKind::BatchNorm { channels } => {
                    push(format!("{n}.gamma"), vec![channels], ParamInit::Ones);
                    push(format!("{n}.beta"), vec![channels], ParamInit::Zeros);
                }
                _ => {}
            }
        }
        specs
    }

    pub fn param_count(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }

    /// Names of the batch-norm layers, whose running statistics are state.
    pub fn batch_norms(&self) -> Vec<(String, usize)> {
        self.layers()
            .filter_map(|l| match l.kind {
                LayerKind::BatchNorm { channels } => Some((l.name.clone(), channels)),
                _ => None,
            })
            .collect()
    }
}
