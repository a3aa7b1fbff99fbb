//! Conditional patch discriminator: eight 3×3 swish convolutions that halve
//! the resolution at layers 1, 3, 5 and 7, then a 1×1 sigmoid head.

use rand::Rng;

use super::{ParamSet, IMAGE_CHANNELS};
use crate::error::Result;
use crate::nn::{check_min_size, conv_backward, conv_forward, sigmoid, swish, swish_grad, Conv2d};
use crate::tensor::{Scalar, Tensor};

/// Output channels of the eight body layers.
pub const DISC_CHANNELS: [usize; 8] = [64, 64, 128, 128, 256, 256, 512, 512];

/// Smallest accepted input side.
pub const DISC_MIN_SIDE: usize = 16;

#[inline]
fn stride_of(layer: usize) -> usize {
    // 1-based odd layers downsample
    if layer % 2 == 0 {
        2
    } else {
        1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<T = f32> {
    pub body: Vec<Conv2d<T>>,
    pub head: Conv2d<T>,
}

impl<T: Scalar> DiscriminatorParams<T> {
    pub fn zeros() -> Self {
        let mut cin = 2 * IMAGE_CHANNELS;
        let mut body = Vec::with_capacity(DISC_CHANNELS.len());
        for &c in &DISC_CHANNELS {
            body.push(Conv2d::zeros(cin, c, 3));
            cin = c;
        }
        DiscriminatorParams {
            body,
            head: Conv2d::zeros(cin, 1, 1),
        }
    }

    pub fn init<R: Rng>(rng: &mut R) -> Self {
        let mut cin = 2 * IMAGE_CHANNELS;
        let mut body = Vec::with_capacity(DISC_CHANNELS.len());
        for &c in &DISC_CHANNELS {
            body.push(Conv2d::init(cin, c, 3, rng));
            cin = c;
        }
        DiscriminatorParams {
            body,
            head: Conv2d::init(cin, 1, 1, rng),
        }
    }

    pub fn cast<U: Scalar>(&self) -> DiscriminatorParams<U> {
        DiscriminatorParams {
            body: self.body.iter().map(|c| c.cast()).collect(),
            head: self.head.cast(),
        }
    }
}

impl<T: Scalar> ParamSet<T> for DiscriminatorParams<T> {
    fn convs(&self) -> Vec<(String, &Conv2d<T>)> {
        let mut v: Vec<(String, &Conv2d<T>)> = self
            .body
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("disc.body{i}"), c))
            .collect();
        v.push(("disc.head".into(), &self.head));
        v
    }

    fn convs_mut(&mut self) -> Vec<(String, &mut Conv2d<T>)> {
        let mut v: Vec<(String, &mut Conv2d<T>)> = self
            .body
            .iter_mut()
            .enumerate()
            .map(|(i, c)| (format!("disc.body{i}"), c))
            .collect();
        v.push(("disc.head".into(), &mut self.head));
        v
    }
}

pub struct DiscriminatorCache<T> {
    inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
    head_in: Tensor<T>,
    scores: Tensor<T>,
}

fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (h, w, ca) = a.shape();
    let cb = b.channels();
    let mut data = Vec::with_capacity(h * w * (ca + cb));
    for (pa, pb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Tensor::from_vec(h, w, ca + cb, data).expect("concat shape")
}

pub fn discriminator_forward_cached<T: Scalar>(
    candidate: &Tensor<T>,
    condition: &Tensor<T>,
    p: &DiscriminatorParams<T>,
) -> Result<(Tensor<T>, DiscriminatorCache<T>)> {
    candidate.ensure_channels(IMAGE_CHANNELS, "discriminator candidate")?;
    candidate.ensure_same_shape(condition)?;
    check_min_size(candidate.height(), candidate.width(), DISC_MIN_SIDE, "discriminator")?;
    let mut x = concat_channels(candidate, condition);
    let mut inputs = Vec::with_capacity(p.body.len());
    let mut pre = Vec::with_capacity(p.body.len());
    for (i, conv) in p.body.iter().enumerate() {
        let z = conv_forward(&x, conv, stride_of(i))?;
        let next = z.map(swish);
        inputs.push(x);
        pre.push(z);
        x = next;
    }
    let logits = conv_forward(&x, &p.head, 1)?;
    let scores = logits.map(sigmoid);
    Ok((
        scores.clone(),
        DiscriminatorCache {
            inputs,
            pre,
            head_in: x,
            scores,
        },
    ))
}

/// Score map of size `ceil(H/16)×ceil(W/16)×1`, values in `(0, 1)`.
pub fn discriminator_forward<T: Scalar>(
    candidate: &Tensor<T>,
    condition: &Tensor<T>,
    p: &DiscriminatorParams<T>,
) -> Result<Tensor<T>> {
    discriminator_forward_cached(candidate, condition, p).map(|(s, _)| s)
}

/// Backward from `d_scores`. Parameter gradients go to `grad` when given.
/// Returns the gradient w.r.t. the candidate image.
pub fn discriminator_backward<T: Scalar>(
    cache: &DiscriminatorCache<T>,
    p: &DiscriminatorParams<T>,
    d_scores: &Tensor<T>,
    grad: Option<&mut DiscriminatorParams<T>>,
) -> Tensor<T> {
    let mut scratch;
    let grad = match grad {
        Some(g) => g,
        None => {
            scratch = p.zeros_like();
            &mut scratch
        }
    };
    let dlogits = cache
        .scores
        .zip_map(d_scores, |s, g| g * s * (T::one() - s))
        .expect("score shape");
    let mut d = conv_backward(&cache.head_in, &p.head, 1, &dlogits, &mut grad.head);
    for i in (0..p.body.len()).rev() {
        let dz = cache.pre[i].zip_map(&d, |z, g| g * swish_grad(z)).expect("layer shape");
        d = conv_backward(&cache.inputs[i], &p.body[i], stride_of(i), &dz, &mut grad.body[i]);
    }
    let (h, w, _) = d.shape();
    Tensor::from_fn(h, w, IMAGE_CHANNELS, |y, x, c| d.get(y, x, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(h, w, 3, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn sixty_four_square_gives_four_by_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = DiscriminatorParams::<f32>::init(&mut rng);
        let a = random_image(64, 64, 1).cast::<f32>();
        let b = random_image(64, 64, 2).cast::<f32>();
        let s = discriminator_forward(&a, &b, &p).unwrap();
        assert_eq!(s.shape(), (4, 4, 1));
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn output_dims_are_ceil_sixteenth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = DiscriminatorParams::<f32>::init(&mut rng);
        for &(h, w) in &[(16, 16), (17, 33), (31, 48), (50, 20)] {
            let a = random_image(h, w, 3).cast::<f32>();
            let s = discriminator_forward(&a, &a, &p).unwrap();
            assert_eq!((s.height(), s.width()), (h.div_ceil(16), w.div_ceil(16)));
        }
    }

    #[test]
    fn zero_head_scores_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = DiscriminatorParams::<f64>::init(&mut rng);
        p.head = p.head.zeros_like();
        let a = random_image(32, 32, 4);
        let s = discriminator_forward(&a, &a, &p).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mismatched_and_tiny_inputs_rejected() {
        let p = DiscriminatorParams::<f64>::zeros();
        let a = random_image(32, 32, 4);
        let b = random_image(32, 16, 4);
        assert!(discriminator_forward(&a, &b, &p).is_err());
        let c = random_image(8, 8, 4);
        assert!(discriminator_forward(&c, &c, &p).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = DiscriminatorParams::<f64>::init(&mut rng);
        let a = random_image(16, 18, 5);
        let b = random_image(16, 18, 6);
        let (s, cache) = discriminator_forward_cached(&a, &b, &p).unwrap();
        let probe = s.map(|_| 1.0);
        let mut grad = p.zeros_like();
        let da = discriminator_backward(&cache, &p, &probe, Some(&mut grad));
        let readout = |a: &Tensor<f64>, p: &DiscriminatorParams<f64>| -> f64 {
            discriminator_forward(a, &b, p).unwrap().data().iter().sum()
        };
        let eps = 1e-6;
        for i in (0..a.len()).step_by(37) {
            let mut ap = a.clone();
            ap.data_mut()[i] += eps;
            let mut am = a.clone();
            am.data_mut()[i] -= eps;
            let fd = (readout(&ap, &p) - readout(&am, &p)) / (2.0 * eps);
            assert!((fd - da.data()[i]).abs() < 1e-7 * (1.0 + fd.abs()), "{fd} vs {}", da.data()[i]);
        }
        for layer in [0usize, 7] {
            for k in [0usize, 1000] {
                let mut pp = p.clone();
                pp.body[layer].weight[k] += eps;
                let mut pm = p.clone();
                pm.body[layer].weight[k] -= eps;
                let fd = (readout(&a, &pp) - readout(&a, &pm)) / (2.0 * eps);
                let an = grad.body[layer].weight[k];
                assert!((fd - an).abs() < 1e-7 * (1.0 + fd.abs()), "layer {layer}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn parameter_layout() {
        let p = DiscriminatorParams::<f32>::zeros();
        assert_eq!(p.body.len(), 8);
        assert_eq!(p.body[0].cin, 6);
        assert_eq!(p.head.cout, 1);
        assert_eq!(p.head.k, 1);
    }
}
