use super::{Dataset, DatasetMeta, Split};
use crate::error::Result;
use crate::numerics::{Rng, Scalar, Tensor};

/// Two-class toy set of `size × size` grayscale images: class 0 holds one
/// bright vertical bar, class 1 one bright horizontal bar, at a random
/// position over faint uniform noise. Classes alternate.
pub fn bars_dataset<T: Scalar>(n: usize, size: usize, seed: u64) -> Result<Dataset<T>> {
    let mut rng = Rng::new(seed);
    let mut data = vec![T::zero(); n * size * size];
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let label = k % 2;
        let pos = rng.below(size as u64) as usize;
        let img = &mut data[k * size * size..(k + 1) * size * size];
        for x in 0..size {
            for y in 0..size {
                let on = if label == 0 { x == pos } else { y == pos };
                let v = if on { 1.0 } else { 0.1 * rng.uniform() };
                img[x * size + y] = T::from_f64(v);
            }
        }
        labels.push(label);
    }
    let meta = DatasetMeta {
        name: "bars".into(),
        width: size,
        height: size,
        channels: 1,
        classes: 2,
    };
    Dataset::new(Tensor::new(&[n, size, size, 1], data)?, labels, meta, Split::Train)
}
