use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{add_into, concat, relu, relu_backward, split, upsample, upsample_backward, Conv, ConvCache, ConvGrad, Tensor};
use image::RgbImage;

pub const ARCHITECTURE: &str = "occl-toy-unet-v1";

/// Channel widths of the three encoder stages; the last one is the embedding width.
pub const ENCODER_WIDTHS: [usize; 3] = [8, 16, 32];
const D2: usize = 16;
const D1: usize = 8;
const HIDDEN: usize = 16;

/// Three stride-2 3x3 encoder stages, a 1x1 decoder with skip connections back
/// to full resolution, and a per-pixel two-layer head over the decoder output
/// and the raw image.
///
/// ```text
/// e1 = relu(conv3x3/2(img))      e2 = relu(conv3x3/2(e1))      X = e3 = relu(conv3x3/2(e2))
/// d2 = relu(conv1x1[up(X), e2])  d1 = relu(conv1x1[up(d2), e1])
/// h  = relu(conv1x1[up(d1), img])   logits = conv1x1(h)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPanopticModel {
    pub num_classes: usize,
    pub layers: Vec<Conv>,
}

pub const LAYER_NAMES: [&str; 7] = ["e1", "e2", "e3", "d2", "d1", "h", "logits"];

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub input: Tensor,
    pub e1: Tensor,
    pub e2: Tensor,
    /// Final encoder features, the embedding source.
    pub e3: Tensor,
    cat2: Tensor,
    d2: Tensor,
    cat1: Tensor,
    d1: Tensor,
    cat0: Tensor,
    h: Tensor,
    pub logits: Tensor,
    caches: Vec<ConvCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ConvGrad>,
}

impl Gradients {
    pub fn zeros(model: &ToyPanopticModel) -> Self {
        Gradients {
            layers: model.layers.iter().map(ConvGrad::zeros).collect(),
        }
    }
}

/// Scales pixels to [-0.5, 0.5].
pub fn normalize_image(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(3, h, w);
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            t.data[(c * h + y as usize) * w + x as usize] = p.0[c] as f32 / 255.0 - 0.5;
        }
    }
    t
}

impl ToyPanopticModel {
    /// He-initialized weights drawn from a generator seeded with `seed`.
    pub fn new(num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w1, w2, w3] = ENCODER_WIDTHS;
        let layers = vec![
            Conv::new(3, w1, 3, 2, &mut rng),
            Conv::new(w1, w2, 3, 2, &mut rng),
            Conv::new(w2, w3, 3, 2, &mut rng),
            Conv::new(w3 + w2, D2, 1, 1, &mut rng),
            Conv::new(D2 + w1, D1, 1, 1, &mut rng),
            Conv::new(D1 + 3, HIDDEN, 1, 1, &mut rng),
            Conv::new(HIDDEN, num_classes, 1, 1, &mut rng),
        ];
        ToyPanopticModel { num_classes, layers }
    }

    pub fn embedding_dim(&self) -> usize {
        ENCODER_WIDTHS[2]
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Encoder features `X` only.
    pub fn encode(&self, input: &Tensor) -> Tensor {
        let e1 = relu(self.layers[0].forward(input, false).0);
        let e2 = relu(self.layers[1].forward(&e1, false).0);
        relu(self.layers[2].forward(&e2, false).0)
    }

    pub fn forward(&self, input: &Tensor) -> Activations {
        let l = &self.layers;
        let mut caches = Vec::with_capacity(7);
        let mut run = |i: usize, x: &Tensor| {
            let (y, c) = l[i].forward(x, true);
            caches.push(c.expect("cache requested"));
            y
        };
        let e1 = relu(run(0, input));
        let e2 = relu(run(1, &e1));
        let e3 = relu(run(2, &e2));
        let cat2 = concat(&upsample(&e3, e2.h, e2.w), &e2);
        let d2 = relu(run(3, &cat2));
        let cat1 = concat(&upsample(&d2, e1.h, e1.w), &e1);
        let d1 = relu(run(4, &cat1));
        let cat0 = concat(&upsample(&d1, input.h, input.w), input);
        let h = relu(run(5, &cat0));
        let logits = run(6, &h);
        Activations {
            input: input.clone(),
            e1,
            e2,
            e3,
            cat2,
            d2,
            cat1,
            d1,
            cat0,
            h,
            logits,
            caches,
        }
    }

    /// Backpropagates `dlogits` (and an extra gradient on `X`, if any) into `grad`.
    pub fn backward(&self, a: &Activations, dlogits: &Tensor, d_features: Option<&Tensor>, grad: &mut Gradients) {
        let l = &self.layers;
        let g = &mut grad.layers;
        let dh = l[6].backward(&a.h, &a.caches[6], dlogits, &mut g[6]);
        let dcat0 = l[5].backward(&a.cat0, &a.caches[5], &relu_backward(&a.h, dh), &mut g[5]);
        let (dup1, _dinput) = split(dcat0, D1);
        let dd1 = upsample_backward(&dup1, a.d1.h, a.d1.w);
        let dcat1 = l[4].backward(&a.cat1, &a.caches[4], &relu_backward(&a.d1, dd1), &mut g[4]);
        let (dup2, mut de1) = split(dcat1, D2);
        let dd2 = upsample_backward(&dup2, a.d2.h, a.d2.w);
        let dcat2 = l[3].backward(&a.cat2, &a.caches[3], &relu_backward(&a.d2, dd2), &mut g[3]);
        let (dup3, mut de2) = split(dcat2, ENCODER_WIDTHS[2]);
        let mut de3 = upsample_backward(&dup3, a.e3.h, a.e3.w);
        if let Some(extra) = d_features {
            add_into(&mut de3, extra);
        }
        let dx2 = l[2].backward(&a.e2, &a.caches[2], &relu_backward(&a.e3, de3), &mut g[2]);
        add_into(&mut de2, &dx2);
        let dx1 = l[1].backward(&a.e1, &a.caches[1], &relu_backward(&a.e2, de2), &mut g[1]);
        add_into(&mut de1, &dx1);
        l[0].backward(&a.input, &a.caches[0], &relu_backward(&a.e1, de1), &mut g[0]);
    }

    /// Plain SGD step.
    pub fn apply(&mut self, grad: &Gradients, lr: f32) {
        for (layer, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, d) in layer.weight.iter_mut().zip(&g.weight) {
                *w -= lr * d;
            }
            for (b, d) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * d;
            }
        }
    }
}

/// Per-pixel softmax cross-entropy summed over labelled pixels.
///
/// Returns the summed loss, the number of labelled pixels, and the gradient of
/// the summed loss with respect to the logits (zero on unlabelled pixels).
pub fn cross_entropy(logits: &Tensor, targets: &[Option<u16>]) -> (f64, usize, Tensor) {
    let (k, n) = (logits.c, logits.plane());
    assert_eq!(targets.len(), n, "one target per pixel");
    let mut grad = Tensor::zeros(k, logits.h, logits.w);
    let mut loss = 0.0f64;
    let mut count = 0;
    let mut probs = vec![0.0f64; k];
    for (p, t) in targets.iter().enumerate() {
        let Some(t) = t else { continue };
        let max = (0..k).map(|c| logits.data[c * n + p]).fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut z = 0.0;
        for (c, pr) in probs.iter_mut().enumerate() {
            *pr = (logits.data[c * n + p] as f64 - max).exp();
            z += *pr;
        }
        loss += z.ln() - (logits.data[*t as usize * n + p] as f64 - max);
        for (c, pr) in probs.iter().enumerate() {
            let onehot = if c == *t as usize { 1.0 } else { 0.0 };
            grad.data[c * n + p] = (pr / z - onehot) as f32;
        }
        count += 1;
    }
    (loss, count, grad)
}

/// Softmax over channels at every pixel.
pub fn softmax(logits: &Tensor) -> Tensor {
    let (k, n) = (logits.c, logits.plane());
    let mut out = Tensor::zeros(k, logits.h, logits.w);
    for p in 0..n {
        let max = (0..k).map(|c| logits.data[c * n + p]).fold(f32::NEG_INFINITY, f32::max) as f64;
        let z: f64 = (0..k).map(|c| (logits.data[c * n + p] as f64 - max).exp()).sum();
        for c in 0..k {
            out.data[c * n + p] = ((logits.data[c * n + p] as f64 - max).exp() / z) as f32;
        }
    }
    out
}
