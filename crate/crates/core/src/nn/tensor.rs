//! Dense channel-major activation tensor.

/// `(channels, rows, cols)` tensor, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(c * h * w, data.len(), "tensor size mismatch");
        Self { c, h, w, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    /// Contiguous row `(c, y)`.
    #[inline]
    pub fn row(&self, c: usize, y: usize) -> &[f64] {
        let start = (c * self.h + y) * self.w;
        &self.data[start..start + self.w]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize, y: usize) -> &mut [f64] {
        let start = (c * self.h + y) * self.w;
        &mut self.data[start..start + self.w]
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.c == other.c && self.h == other.h && self.w == other.w
    }
}
