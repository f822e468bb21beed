use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer layout of a constituent, baseline or gating model. The output width
/// is not part of the descriptor; it comes from the head's class list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// `Dense(input -> hidden) - ReLU - Dense(hidden -> out)`
    Mlp { input: usize, hidden: usize },
    /// Each entry of `conv` is a `3x3, pad 1` convolution followed by ReLU and
    /// a 2x2 max-pool; then `Dense(-> hidden) - ReLU - Dense(hidden -> out)`.
    Cnn {
        channels: usize,
        height: usize,
        width: usize,
        conv: Vec<usize>,
        hidden: usize,
    },
}

/// Name, shape and fan-in of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub fan_in: usize,
    pub is_bias: bool,
}

impl Architecture {
    /// Two conv blocks (16 and 32 channels) and a 128-wide dense layer over
    /// 3x32x32 images.
    pub fn reference_cnn() -> Self {
        Architecture::Cnn {
            channels: 3,
            height: 32,
            width: 32,
            conv: vec![16, 32],
            hidden: 128,
        }
    }

    /// 64-wide single hidden layer over flat feature vectors.
    pub fn reference_mlp(input: usize) -> Self {
        Architecture::Mlp { input, hidden: 64 }
    }

    /// Reference architecture for samples of the given shape: the CNN for
    /// `(C, H, W)` inputs (with `H`, `W` divisible by 4), the MLP otherwise.
    pub fn reference_for(shape: &[usize]) -> Self {
        match *shape {
            [c, h, w] if h % 4 == 0 && w % 4 == 0 && h >= 4 && w >= 4 => Architecture::Cnn {
                channels: c,
                height: h,
                width: w,
                conv: vec![16, 32],
                hidden: 128,
            },
            _ => Architecture::reference_mlp(shape.iter().product()),
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            Architecture::Mlp { hidden, .. } | Architecture::Cnn { hidden, .. } => *hidden,
        }
    }

    pub fn with_hidden(&self, h: usize) -> Self {
        let mut a = self.clone();
        match &mut a {
            Architecture::Mlp { hidden, .. } | Architecture::Cnn { hidden, .. } => *hidden = h,
        }
        a
    }

    pub fn input_len(&self) -> usize {
        match self {
            Architecture::Mlp { input, .. } => *input,
            Architecture::Cnn {
                channels,
                height,
                width,
                ..
            } => channels * height * width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            Architecture::Mlp { input, hidden } => {
                if *input == 0 || *hidden == 0 {
                    return bad(format!("mlp widths must be positive: {self:?}"));
                }
            }
            Architecture::Cnn {
                channels,
                height,
                width,
                conv,
                hidden,
            } => {
                if *channels == 0 || *hidden == 0 || conv.contains(&0) {
                    return bad(format!("cnn widths must be positive: {self:?}"));
                }
                let div = 1usize << conv.len();
                if height % div != 0 || width % div != 0 || *height < div || *width < div {
                    return bad(format!(
                        "cnn input {height}x{width} must be divisible by {div} for {} pooling stages",
                        conv.len()
                    ));
                }
            }
        }
        Ok(())
    }

    /// Width of the flattened features entering the first dense layer.
    pub fn flat_features(&self) -> usize {
        match self {
            Architecture::Mlp { input, .. } => *input,
            Architecture::Cnn {
                channels,
                height,
                width,
                conv,
                ..
            } => {
                let div = 1usize << conv.len();
                conv.last().copied().unwrap_or(*channels) * (height / div) * (width / div)
            }
        }
    }

    pub fn param_specs(&self, outputs: usize) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut push = |name: String, dims: Vec<usize>, fan_in: usize, is_bias: bool| {
            specs.push(ParamSpec {
                name,
                dims,
                fan_in,
                is_bias,
            })
        };
        if let Architecture::Cnn { channels, conv, .. } = self {
            let mut cin = *channels;
            for (i, &cout) in conv.iter().enumerate() {
                push(format!("conv{i}.weight"), vec![cout, cin, 3, 3], cin * 9, false);
                push(format!("conv{i}.bias"), vec![cout], cin * 9, true);
                cin = cout;
            }
        }
        let flat = self.flat_features();
        let hidden = self.hidden();
        push("fc0.weight".into(), vec![hidden, flat], flat, false);
        push("fc0.bias".into(), vec![hidden], flat, true);
        push("out.weight".into(), vec![outputs, hidden], hidden, false);
        push("out.bias".into(), vec![outputs], hidden, true);
        specs
    }

    pub fn param_count(&self, outputs: usize) -> usize {
        self.param_specs(outputs)
            .iter()
            .map(|s| s.dims.iter().product::<usize>())
            .sum()
    }
}
