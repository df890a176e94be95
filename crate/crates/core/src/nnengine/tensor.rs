use std::fmt::Debug;

use num_traits::Float;

use super::EngineError;

/// Element type of the engine. `f32` for training, `f64` for gradient probes.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    /// `C = alpha * A * B + beta * C` on strided row/column views.
    ///
    /// # Safety
    /// Every element addressed by `(m, k, n)` and the strides must lie inside
    /// the buffers behind `a`, `b` and `c`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from(v).expect("scalar conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar conversion")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided matrix view used to describe gemm operands.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MatView {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl MatView {
    pub fn row_major(offset: usize, cols: usize) -> Self {
        Self { offset, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows x cols` block.
    pub fn transposed(offset: usize, cols: usize) -> Self {
        Self { offset, rs: 1, cs: cols }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// Bounds-checked gemm: `c = alpha * a(m x k) * b(k x n) + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    av: MatView,
    b: &[T],
    bv: MatView,
    beta: T,
    c: &mut [T],
    cv: MatView,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(cv.last(m, n) < c.len(), "gemm: c view out of bounds");
    if k > 0 {
        assert!(av.last(m, k) < a.len(), "gemm: a view out of bounds");
        assert!(bv.last(k, n) < b.len(), "gemm: b view out of bounds");
    }
    // SAFETY: all addressed elements were bounds-checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset.min(a.len())),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset.min(b.len())),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        )
    }
}

/// Dense rank-5 array `(N, C, D, H, W)`, W fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: [usize; 5],
    data: Vec<T>,
}

pub type Tensor5 = Tensor<f32>;

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 5], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<T>) -> Result<Self, EngineError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(EngineError::Shape(format!(
                "buffer of {} elements for shape {shape:?} ({expected} expected)",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: [usize; 5], mut f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// `(D, H, W)`.
    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn spatial_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, idx: [usize; 5]) -> usize {
        let [_, c, d, h, w] = self.shape;
        (((idx[0] * c + idx[1]) * d + idx[2]) * h + idx[3]) * w + idx[4]
    }

    pub fn get(&self, idx: [usize; 5]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: [usize; 5], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// Contiguous slice of one `(n, c)` spatial block.
    pub fn channel(&self, n: usize, c: usize) -> &[T] {
        let s = self.spatial_len();
        let start = (n * self.shape[1] + c) * s;
        &self.data[start..start + s]
    }

    /// Contiguous slice of all channels of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let s = self.shape[1] * self.spatial_len();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.shape[1] * self.spatial_len();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    /// Inner product accumulated in f64.
    pub fn dot(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v.as_f64()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max)
    }

    pub fn ensure_finite(&self, what: &str) -> Result<(), EngineError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(index) => Err(EngineError::NonFinite {
                what: what.to_string(),
                index,
            }),
        }
    }

    pub fn ensure_shape(&self, shape: [usize; 5], what: &str) -> Result<(), EngineError> {
        if self.shape == shape {
            Ok(())
        } else {
            Err(EngineError::Shape(format!("{what}: expected {shape:?}, got {:?}", self.shape)))
        }
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self, EngineError> {
        let first = items
            .first()
            .ok_or_else(|| EngineError::Shape("stack of zero tensors".into()))?;
        let mut shape = first.shape;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(EngineError::Shape(format!(
                    "stack: {:?} vs {:?}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        shape[0] = items.iter().map(|t| t.shape[0]).sum();
        Ok(Self { shape, data })
    }

    pub fn select_item(&self, n: usize) -> Self {
        let mut shape = self.shape;
        shape[0] = 1;
        Self {
            shape,
            data: self.item(n).to_vec(),
        }
    }
}
