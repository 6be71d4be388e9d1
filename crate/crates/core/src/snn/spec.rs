//! Layer and network descriptions.

use serde::{Deserialize, Serialize};

use super::neuron::NeuronParams;
use super::SnnError;

/// Output neurons averaged into each class score.
pub const VOTE_GROUP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Plif {
        /// Initial `w`; `sigmoid(0) = 0.5`, i.e. `tau = 2`.
        init_w: f64,
        neuron: NeuronParams,
    },
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Dropout {
        rate: f64,
    },
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    VotingPool {
        group: usize,
    },
}

/// Activation shape between layers (per frame).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub input_side: usize,
    pub n_classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// `conv_blocks` x [Conv2d(3,1,1) - BatchNorm - PLIF - MaxPool(2,2)], then
    /// one [Dropout - FC - PLIF] block per entry of `fc_sizes`, then voting.
    /// The last FC size must be `n_classes * VOTE_GROUP`.
    pub fn conv_plif(
        input_channels: usize,
        input_side: usize,
        conv_channels: &[usize],
        fc_sizes: &[usize],
        n_classes: usize,
        dropout: f64,
    ) -> Result<Self, SnnError> {
        let neuron = NeuronParams::default();
        let mut layers = Vec::new();
        let mut c = input_channels;
        let mut side = input_side;
        for &out in conv_channels {
            layers.push(LayerSpec::Conv2d {
                in_channels: c,
                out_channels: out,
                kernel: 3,
                stride: 1,
                padding: 1,
            });
            layers.push(LayerSpec::BatchNorm { channels: out });
            layers.push(LayerSpec::Plif { init_w: 0.0, neuron });
            layers.push(LayerSpec::MaxPool2d { kernel: 2, stride: 2 });
            c = out;
            side /= 2;
        }
        let mut features = c * side * side;
        for &out in fc_sizes {
            layers.push(LayerSpec::Dropout { rate: dropout });
            layers.push(LayerSpec::FullyConnected {
                in_features: features,
                out_features: out,
            });
            layers.push(LayerSpec::Plif { init_w: 0.0, neuron });
            features = out;
        }
        layers.push(LayerSpec::VotingPool { group: VOTE_GROUP });
        let spec = Self {
            input_channels,
            input_side,
            n_classes,
            layers,
        };
        spec.shapes()?;
        Ok(spec)
    }

    /// The AU recogniser: two conv blocks of 32 channels, FC 512 and 210,
    /// voting 210 -> 21.
    pub fn au_recognition(input_side: usize, dropout: f64) -> Self {
        Self::conv_plif(2, input_side, &[32, 32], &[512, 210], 21, dropout)
            .expect("AU recognition spec composes")
    }

    /// Per-frame activation shape after every layer; element 0 is the input.
    pub fn shapes(&self) -> Result<Vec<Shape>, SnnError> {
        let bad = |i: usize, msg: String| SnnError::InvalidSpec(format!("layer {i}: {msg}"));
        if self.input_channels == 0 || self.input_side == 0 {
            return Err(SnnError::InvalidSpec("empty input".into()));
        }
        let mut shapes = vec![Shape::Spatial {
            c: self.input_channels,
            h: self.input_side,
            w: self.input_side,
        }];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let next = match (layer, cur) {
                (
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    Shape::Spatial { c, h, w },
                ) => {
                    if *in_channels != c {
                        return Err(bad(i, format!("conv expects {in_channels} channels, got {c}")));
                    }
                    if *kernel == 0 || *stride == 0 || h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                        return Err(bad(i, "conv kernel does not fit".into()));
                    }
                    Shape::Spatial {
                        c: *out_channels,
                        h: (h + 2 * padding - kernel) / stride + 1,
                        w: (w + 2 * padding - kernel) / stride + 1,
                    }
                }
                (LayerSpec::BatchNorm { channels }, Shape::Spatial { c, .. }) => {
                    if *channels != c {
                        return Err(bad(i, format!("batch norm over {channels} channels, got {c}")));
                    }
                    cur
                }
                (LayerSpec::Plif { .. }, _) | (LayerSpec::Dropout { .. }, _) => cur,
                (LayerSpec::MaxPool2d { kernel, stride }, Shape::Spatial { c, h, w }) => {
                    if *kernel == 0 || *stride == 0 || h < *kernel || w < *kernel {
                        return Err(bad(i, "pool window does not fit".into()));
                    }
                    Shape::Spatial {
                        c,
                        h: (h - kernel) / stride + 1,
                        w: (w - kernel) / stride + 1,
                    }
                }
                (
                    LayerSpec::FullyConnected {
                        in_features,
                        out_features,
                    },
                    s,
                ) => {
                    if *in_features != s.len() {
                        return Err(bad(i, format!("fc expects {in_features} inputs, got {}", s.len())));
                    }
                    Shape::Flat(*out_features)
                }
                (LayerSpec::VotingPool { group }, Shape::Flat(n)) => {
                    if *group == 0 || n % group != 0 {
                        return Err(bad(i, format!("{n} features do not split into groups of {group}")));
                    }
                    if i + 1 != self.layers.len() {
                        return Err(bad(i, "voting must be the final layer".into()));
                    }
                    Shape::Flat(n / group)
                }
                (layer, shape) => {
                    return Err(bad(i, format!("{layer:?} cannot follow shape {shape:?}")));
                }
            };
            if let LayerSpec::Dropout { rate } = layer {
                if !(0.0..1.0).contains(rate) {
                    return Err(bad(i, format!("dropout rate {rate} outside [0, 1)")));
                }
            }
            shapes.push(next);
        }
        if !matches!(self.layers.last(), Some(LayerSpec::VotingPool { .. })) {
            return Err(SnnError::InvalidSpec("network must end with a voting layer".into()));
        }
        match shapes.last() {
            Some(Shape::Flat(n)) if *n == self.n_classes => Ok(shapes),
            other => Err(SnnError::InvalidSpec(format!(
                "network produces {other:?}, expected {} classes",
                self.n_classes
            ))),
        }
    }
}
