use super::kernels;
use super::Scalar;
use crate::error::{Error, Result};

/// Dense row-major tensor. The first extent is the outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// # Panics
    /// If any extent is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        check_shape(shape).expect("invalid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let mut t = Self::zeros(shape);
        for (i, x) in t.data.iter_mut().enumerate() {
            *x = f(i);
        }
        t
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Explicit element-type conversion.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.fill(value);
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for x in &mut self.data {
            *x *= factor;
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|&x| x.as_f64() * x.as_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Swaps the two axes of a rank-2 tensor.
    pub fn transpose2(&self) -> Result<Self> {
        let [m, n] = rank2(self, "transpose2")?;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self::new(&[n, m], out)
    }

    /// Swaps the two leading axes of a rank-3 tensor, keeping the last axis.
    pub fn swap_leading(&self) -> Result<Self> {
        if self.rank() != 3 {
            return Err(Error::InvalidTensor(format!(
                "swap_leading needs rank 3, got {:?}",
                self.shape
            )));
        }
        let (a, b, f) = (self.shape[0], self.shape[1], self.shape[2]);
        let mut out = vec![T::zero(); self.len()];
        for i in 0..a {
            for j in 0..b {
                let src = (i * b + j) * f;
                let dst = (j * a + i) * f;
                out[dst..dst + f].copy_from_slice(&self.data[src..src + f]);
            }
        }
        Self::new(&[b, a, f], out)
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidTensor(format!(
            "extents must be non-empty and positive, got {shape:?}"
        )));
    }
    Ok(())
}

fn rank2<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<[usize; 2]> {
    match t.shape() {
        &[m, n] => Ok([m, n]),
        other => Err(Error::InvalidTensor(format!(
            "{op} expects a rank-2 tensor, got {other:?}"
        ))),
    }
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y = f(z)`.
    #[inline]
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" | "max(0,x)" | "max(0, x)" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Logistic function; the branch keeps `exp` from overflowing for large `|z|`.
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Standard matrix product of `a[m×k]` and `b[k×n]`.
///
/// Each output element is summed over `k` in ascending order, so the result is
/// bit-identical to a naive triple loop.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ([m, k], [k2, n]) = (rank2(a, "matmul")?, rank2(b, "matmul")?);
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    kernels::gemm_nn(m, k, n, a.data(), b.data(), &mut out);
    Tensor::new(&[m, n], out)
}

pub fn pointwise<T: Scalar>(x: &Tensor<T>, f: Activation) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&z| f.apply(z)).collect(),
    }
}

/// Concatenates along the last axis, `a`'s features first.
pub fn concat_last<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ra, rb) = (a.rank(), b.rank());
    if ra != rb || a.shape[..ra - 1] != b.shape[..rb - 1] {
        return Err(Error::shape("concat_last", a.shape(), b.shape()));
    }
    let (p, q) = (a.shape[ra - 1], b.shape[rb - 1]);
    let rows = a.len() / p;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for r in 0..rows {
        data.extend_from_slice(&a.data[r * p..(r + 1) * p]);
        data.extend_from_slice(&b.data[r * q..(r + 1) * q]);
    }
    let mut shape = a.shape.clone();
    shape[ra - 1] = p + q;
    Tensor::new(&shape, data)
}

/// Inverse of [`concat_last`]: the first `p` features go left, the rest right.
pub fn split_last<T: Scalar>(x: &Tensor<T>, p: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let r = x.rank();
    let total = x.shape[r - 1];
    if p == 0 || p >= total {
        return Err(Error::InvalidTensor(format!(
            "cannot split last axis of {:?} at {p}",
            x.shape
        )));
    }
    let q = total - p;
    let rows = x.len() / total;
    let (mut a, mut b) = (Vec::with_capacity(rows * p), Vec::with_capacity(rows * q));
    for row in x.data.chunks_exact(total) {
        a.extend_from_slice(&row[..p]);
        b.extend_from_slice(&row[p..]);
    }
    let mut sa = x.shape.clone();
    sa[r - 1] = p;
    let mut sb = x.shape.clone();
    sb[r - 1] = q;
    Ok((Tensor::new(&sa, a)?, Tensor::new(&sb, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_slice(shape, v).unwrap()
    }

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
    }

    #[test]
    fn identity_times_matrix() {
        let m = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(matmul(&Tensor::eye(2), &m).unwrap(), m);
    }

    #[test]
    fn row_times_column() {
        let out = matmul(&t(&[1, 2], &[1., 2.]), &t(&[2, 1], &[3., 4.])).unwrap();
        assert_eq!(out.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_exactly() {
        let mut rng = Rng::new(7);
        let a = random(&[5, 7], &mut rng);
        let b = random(&[7, 3], &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..7 {
                    s += a.data()[i * 7 + k] * b.data()[k * 3 + j];
                }
                assert_eq!(c.data()[i * 3 + j].to_bits(), s.to_bits());
            }
        }
    }

    #[test]
    fn matmul_rejects_bad_inner_extent() {
        let err = matmul(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_is_associative_to_high_precision() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let a = random(&[3, 4], &mut rng);
            let b = random(&[4, 5], &mut rng);
            let c = random(&[5, 2], &mut rng);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn activations_at_known_points() {
        assert_eq!(pointwise(&t(&[1], &[0.]), Activation::Tanh).data(), &[0.0]);
        assert_eq!(pointwise(&t(&[1], &[0.]), Activation::Sigmoid).data(), &[0.5]);
        assert_eq!(
            pointwise(&t(&[3], &[-3., 0., 2.]), Activation::Relu).data(),
            &[0., 0., 2.]
        );
    }

    #[test]
    fn sigmoid_is_finite_for_extreme_inputs() {
        let x = t(&[4], &[-1e4, -60.0, 60.0, 1e4]);
        let y = pointwise(&x, Activation::Sigmoid);
        assert!(y.is_finite());
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[3], 1.0);
    }

    #[test]
    fn concat_shapes_and_order() {
        let c = concat_last(&t(&[2], &[1., 2.]), &t(&[1], &[3.])).unwrap();
        assert_eq!(c.data(), &[1., 2., 3.]);

        let a = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 5], |i| 100.0 + i as f64);
        let c = concat_last(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 8]);
        assert_eq!(&c.row(1)[..3], a.row(1));

        let vf = Tensor::<f64>::zeros(&[2, 2, 3]);
        let vr = Tensor::<f64>::zeros(&[2, 2, 3]);
        assert_eq!(concat_last(&vf, &vr).unwrap().shape(), &[2, 2, 6]);
    }

    #[test]
    fn concat_rejects_leading_mismatch() {
        assert!(concat_last(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[3, 3])).is_err());
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Tensor::<f64>::new(&[0, 2], vec![]).is_err());
        assert!(Tensor::<f64>::new(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn swap_leading_is_an_involution() {
        let x = Tensor::<f64>::from_fn(&[3, 4, 2], |i| i as f64);
        let y = x.swap_leading().unwrap();
        assert_eq!(y.shape(), &[4, 3, 2]);
        assert_eq!(y.swap_leading().unwrap(), x);
    }

    proptest! {
        #[test]
        fn concat_then_split_recovers_inputs(rows in 1usize..5, p in 1usize..6, q in 1usize..6, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = random(&[rows, p], &mut rng);
            let b = random(&[rows, q], &mut rng);
            let (a2, b2) = split_last(&concat_last(&a, &b).unwrap(), p).unwrap();
            prop_assert_eq!(a2, a);
            prop_assert_eq!(b2, b);
        }

        #[test]
        fn identity_activation_is_neutral(v in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let x = Tensor::new(&[v.len()], v).unwrap();
            for f in [Activation::Tanh, Activation::Sigmoid, Activation::Relu, Activation::Identity] {
                prop_assert_eq!(pointwise(&pointwise(&x, Activation::Identity), f), pointwise(&x, f));
            }
        }
    }
}
