use rand::Rng;

use super::layers::{Conv2d, Linear};
use super::ops;
use super::param::{Module, Param};
use super::tensor::Tensor;

/// Three-stage convolutional encoder ending in a fully connected layer:
/// `conv(1→w) → conv(w→2w, /2) → conv(2w→2w, /2) → linear(2w·(S/4)² → out)`,
/// with ReLU after every convolution.
///
/// At `S = 48`, `w = 16` the flattened width is 4608.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    fc: Linear,
    image_size: usize,
}

pub struct EncoderTrace {
    x: Tensor,
    z1: Tensor,
    a1: Tensor,
    z2: Tensor,
    a2: Tensor,
    z3: Tensor,
    flat: Tensor,
}

impl ConvEncoder {
    pub fn new<R: Rng>(name: &str, image_size: usize, width: usize, out_dim: usize, rng: &mut R) -> Self {
        assert!(image_size % 4 == 0, "encoder input size must be divisible by 4");
        let q = image_size / 4;
        Self {
            conv1: Conv2d::new(&format!("{name}.conv1"), 1, width, 3, 1, 1, rng),
            conv2: Conv2d::new(&format!("{name}.conv2"), width, 2 * width, 3, 2, 1, rng),
            conv3: Conv2d::new(&format!("{name}.conv3"), 2 * width, 2 * width, 3, 2, 1, rng),
            fc: Linear::new(&format!("{name}.fc"), 2 * width * q * q, out_dim, rng),
            image_size,
        }
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn out_dim(&self) -> usize {
        self.fc.out_features()
    }

    pub fn flat_dim(&self) -> usize {
        self.fc.in_features()
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.forward_train(x).0
    }

    pub fn forward_train(&self, x: &Tensor) -> (Tensor, EncoderTrace) {
        let z1 = self.conv1.forward(x);
        let a1 = ops::relu(&z1);
        let z2 = self.conv2.forward(&a1);
        let a2 = ops::relu(&z2);
        let z3 = self.conv3.forward(&a2);
        let n = x.n();
        let flat = ops::relu(&z3)
            .reshape([n, self.fc.in_features(), 1, 1])
            .expect("flatten");
        let y = self.fc.forward(&flat);
        (
            y,
            EncoderTrace {
                x: x.clone(),
                z1,
                a1,
                z2,
                a2,
                z3,
                flat,
            },
        )
    }

    pub fn backward(&mut self, tr: &EncoderTrace, dy: &Tensor) -> Tensor {
        let dflat = self.fc.backward(&tr.flat, dy);
        let da3 = dflat.reshape(tr.z3.shape()).expect("unflatten");
        let dz3 = ops::relu_backward(&tr.z3, &da3);
        let da2 = self.conv3.backward(&tr.a2, &dz3);
        let dz2 = ops::relu_backward(&tr.z2, &da2);
        let da1 = self.conv2.backward(&tr.a1, &dz2);
        let dz1 = ops::relu_backward(&tr.z1, &da1);
        self.conv1.backward(&tr.x, &dz1)
    }
}

impl Module for ConvEncoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv1.params();
        v.extend(self.conv2.params());
        v.extend(self.conv3.params());
        v.extend(self.fc.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        v.extend(self.conv3.params_mut());
        v.extend(self.fc.params_mut());
        v
    }
}
