//! The LeNet-5 family: two 5×5 valid convolutions with max pooling, two
//! hidden fully connected layers and a linear classifier, all ReLU.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, NetworkGraph};
use crate::tensor::Real;

pub const INPUT_SHAPE: [usize; 3] = [3, 32, 32];
const KERNEL: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LeNetVariant {
    S,
    M,
    L,
}

impl LeNetVariant {
    /// `(conv1, conv2, fc1, fc2)` unit counts.
    pub fn widths(self) -> (usize, usize, usize, usize) {
        match self {
            LeNetVariant::S => (16, 32, 256, 128),
            LeNetVariant::M => (32, 64, 512, 256),
            LeNetVariant::L => (64, 128, 1024, 512),
        }
    }

    pub fn layers(self, num_classes: usize) -> Vec<LayerSpec> {
        let (c1, c2, f1, f2) = self.widths();
        // 32 -conv5-> 28 -pool-> 14 -conv5-> 10 -pool-> 5
        let flat = c2 * 5 * 5;
        vec![
            LayerSpec::Conv2d {
                in_channels: INPUT_SHAPE[0],
                out_channels: c1,
                kernel: KERNEL,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d,
            LayerSpec::Conv2d {
                in_channels: c1,
                out_channels: c2,
                kernel: KERNEL,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d,
            LayerSpec::Flatten,
            LayerSpec::Linear {
                in_features: flat,
                out_features: f1,
            },
            LayerSpec::Relu,
            LayerSpec::Linear {
                in_features: f1,
                out_features: f2,
            },
            LayerSpec::Relu,
            LayerSpec::Linear {
                in_features: f2,
                out_features: num_classes,
            },
        ]
    }
}

impl fmt::Display for LeNetVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LeNetVariant::S => "lenet-s",
            LeNetVariant::M => "lenet-m",
            LeNetVariant::L => "lenet-l",
        })
    }
}

impl FromStr for LeNetVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lenet-s" | "s" => Ok(LeNetVariant::S),
            "lenet-m" | "m" => Ok(LeNetVariant::M),
            "lenet-l" | "l" => Ok(LeNetVariant::L),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected lenet-s, lenet-m or lenet-l)"
            ))),
        }
    }
}

/// Builds an uninitialised (all-zero) LeNet for 3×32×32 inputs.
pub fn build_lenet<T: Real>(variant: LeNetVariant, num_classes: usize) -> Result<NetworkGraph<T>> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    NetworkGraph::new(&INPUT_SHAPE, variant.layers(num_classes))
}

/// Sum of scalar counts over all weight and bias tensors.
pub fn param_count<T: Real>(net: &NetworkGraph<T>) -> usize {
    net.param_count()
}

/// Closed-form parameter count from the layer widths alone.
pub fn closed_form_param_count(variant: LeNetVariant, num_classes: usize) -> usize {
    let (c1, c2, f1, f2) = variant.widths();
    let conv = |cin: usize, cout: usize| cin * cout * KERNEL * KERNEL + cout;
    let dense = |fin: usize, fout: usize| fin * fout + fout;
    conv(3, c1) + conv(c1, c2) + dense(25 * c2, f1) + dense(f1, f2) + dense(f2, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_parameter_counts() {
        for (v, n) in [
            (LeNetVariant::S, 253_290),
            (LeNetVariant::M, 1_007_306),
            (LeNetVariant::L, 4_017_546),
        ] {
            let net = build_lenet::<f32>(v, 10).unwrap();
            assert_eq!(param_count(&net), n, "{v}");
            assert_eq!(closed_form_param_count(v, 10), n);
        }
    }

    #[test]
    fn hundred_class_lenet_l() {
        let net = build_lenet::<f32>(LeNetVariant::L, 100).unwrap();
        assert_eq!(param_count(&net), 4_017_546 - 5_130 + 51_300);
        assert_eq!(param_count(&net), 4_063_716);
    }

    #[test]
    fn simple_counts() {
        let empty = NetworkGraph::<f32>::new(&[4], vec![]).unwrap();
        assert_eq!(param_count(&empty), 0);
        let fc = NetworkGraph::<f32>::new(
            &[800],
            vec![LayerSpec::Linear {
                in_features: 800,
                out_features: 256,
            }],
        )
        .unwrap();
        assert_eq!(param_count(&fc), 205_056);
    }

    #[test]
    fn variant_strings() {
        for v in [LeNetVariant::S, LeNetVariant::M, LeNetVariant::L] {
            assert_eq!(v.to_string().parse::<LeNetVariant>().unwrap(), v);
        }
        assert!(matches!("resnet".parse::<LeNetVariant>(), Err(Error::Config(_))));
        assert!(build_lenet::<f32>(LeNetVariant::S, 1).is_err());
    }
}
