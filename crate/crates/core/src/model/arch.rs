use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backbone families the descriptor can name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Toy,
    Resnet50,
    Vgg16,
    Vgg19,
}

#[derive(Debug, Clone, Copy)]
enum Layer {
    /// kernel, stride, padding, output channels
    Conv(usize, usize, usize, usize),
    /// kernel, stride, padding
    Pool(usize, usize, usize),
}

impl Architecture {
    pub fn parse(family: &str) -> Result<Self> {
        match family.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "toy" => Ok(Self::Toy),
            "resnet50" => Ok(Self::Resnet50),
            "vgg16" => Ok(Self::Vgg16),
            "vgg19" => Ok(Self::Vgg19),
            other => Err(Error::Configuration(format!(
                "unknown architecture family '{other}' (expected toy, resnet50, vgg16 or vgg19)"
            ))),
        }
    }

    fn layers(self) -> Vec<Layer> {
        use Layer::*;
        match self {
            Self::Toy => vec![Conv(3, 2, 1, 8), Conv(3, 2, 1, 16), Conv(3, 2, 1, 32)],
            Self::Resnet50 => {
                // stem, then the first bottleneck of each stage carries the stride
                let mut layers = vec![Conv(7, 2, 3, 64), Pool(3, 2, 1)];
                for (blocks, mid, stride) in [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)] {
                    for b in 0..blocks {
                        let s = if b == 0 { stride } else { 1 };
                        layers.push(Conv(1, 1, 0, mid));
                        layers.push(Conv(3, s, 1, mid));
                        layers.push(Conv(1, 1, 0, mid * 4));
                    }
                }
                layers
            }
            Self::Vgg16 | Self::Vgg19 => {
                let per_stage: [usize; 5] = if self == Self::Vgg16 {
                    [2, 2, 3, 3, 3]
                } else {
                    [2, 2, 4, 4, 4]
                };
                let widths = [64, 128, 256, 512, 512];
                let mut layers = Vec::new();
                for (stage, &convs) in per_stage.iter().enumerate() {
                    layers.extend(std::iter::repeat_n(Conv(3, 1, 1, widths[stage]), convs));
                    // pool5 sits after the last conv layer
                    if stage < 4 {
                        layers.push(Pool(2, 2, 0));
                    }
                }
                layers
            }
        }
    }

    /// Traces spatial and channel sizes layer by layer up to the last
    /// convolutional output.
    pub fn feature_shape(self, input_size: (usize, usize)) -> Result<(usize, usize, usize)> {
        let (mut h, mut w, mut c) = (input_size.0, input_size.1, 3usize);
        let out = |len: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            let padded = len + 2 * p;
            if padded < k {
                return Err(Error::Configuration(format!(
                    "input of {input_size:?} collapses below kernel size {k}"
                )));
            }
            Ok((padded - k) / s + 1)
        };
        for layer in self.layers() {
            match layer {
                Layer::Conv(k, s, p, co) => {
                    h = out(h, k, s, p)?;
                    w = out(w, k, s, p)?;
                    c = co;
                }
                Layer::Pool(k, s, p) => {
                    h = out(h, k, s, p)?;
                    w = out(w, k, s, p)?;
                }
            }
        }
        Ok((c, h, w))
    }
}
