use fpnr_tensor::{Scalar, Tensor};

use crate::error::{FpnrError, Result};

/// Single-channel raster in display units (nominally 0..255), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height.checked_mul(width) != Some(data.len()) {
            return Err(FpnrError::Shape(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
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

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel at clamped coordinates (edge replication).
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize) -> T {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x)
    }

    pub fn same_dims(&self, other: &Image<T>, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(FpnrError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_dims(other, "zip_map")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn mean(&self) -> T {
        let n = T::from_usize(self.data.len().max(1)).unwrap();
        self.data.iter().copied().sum::<T>() / n
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// `h x w` window with top-left corner at `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if y + h > self.height || x + w > self.width {
            return Err(FpnrError::Shape(format!(
                "crop {h}x{w} at ({y},{x}) exits {}x{} image",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(h, w, |r, c| self.get(y + r, x + c)))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| {
            self.get(y, self.width - 1 - x)
        })
    }

    /// Counter-clockwise rotation by `quarter_turns * 90` degrees.
    pub fn rotate90(&self, quarter_turns: u32) -> Self {
        let (h, w) = (self.height, self.width);
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => Self::from_fn(w, h, |y, x| self.get(x, w - 1 - y)),
            2 => Self::from_fn(h, w, |y, x| self.get(h - 1 - y, w - 1 - x)),
            _ => Self::from_fn(w, h, |y, x| self.get(h - 1 - x, y)),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// `[1, 1, H, W]` tensor view of the raster.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[1, 1, self.height, self.width], self.data.clone()).expect("dims match")
    }

    /// Image from a tensor with exactly one batch element and one channel.
    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        match t.shape() {
            [1, 1, h, w] | [h, w] => Self::new(*h, *w, t.data().to_vec()),
            s => Err(FpnrError::Shape(format!(
                "tensor {s:?} is not a single-channel image"
            ))),
        }
    }

    /// Stacks same-sized images into a `[B, 1, H, W]` batch.
    pub fn batch_tensor(images: &[&Image<T>]) -> Result<Tensor<T>> {
        let Some(first) = images.first() else {
            return Err(FpnrError::Shape("empty batch".into()));
        };
        let mut data = Vec::with_capacity(images.len() * first.len());
        for im in images {
            first.same_dims(im, "batch_tensor")?;
            data.extend_from_slice(&im.data);
        }
        Ok(Tensor::new(
            &[images.len(), 1, first.height, first.width],
            data,
        )?)
    }
}
