/// A batch of values with their first and second derivatives with respect
/// to the scalar network input.
///
/// All three buffers are row-major `rows x cols`. `d1` is empty when
/// `order == 0` and `d2` is empty when `order < 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jets {
    pub rows: usize,
    pub cols: usize,
    pub order: usize,
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl Jets {
    pub fn zeros(rows: usize, cols: usize, order: usize) -> Self {
        let len = rows * cols;
        Self {
            rows,
            cols,
            order,
            value: vec![0.0; len],
            d1: if order >= 1 {
                vec![0.0; len]
            } else {
                Vec::new()
            },
            d2: if order >= 2 {
                vec![0.0; len]
            } else {
                Vec::new()
            },
        }
    }

    /// Component `r` (0 = value, 1 = first derivative, 2 = second).
    pub fn component(&self, r: usize) -> &[f64] {
        match r {
            0 => &self.value,
            1 => &self.d1,
            2 => &self.d2,
            _ => &[],
        }
    }

    pub fn component_mut(&mut self, r: usize) -> &mut [f64] {
        match r {
            0 => &mut self.value,
            1 => &mut self.d1,
            2 => &mut self.d2,
            _ => &mut [],
        }
    }

    /// Copies rows `start..end` into a new batch.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let (lo, hi) = (start * self.cols, end * self.cols);
        let pick = |v: &Vec<f64>| {
            if v.is_empty() {
                Vec::new()
            } else {
                v[lo..hi].to_vec()
            }
        };
        Self {
            rows: end - start,
            cols: self.cols,
            order: self.order,
            value: pick(&self.value),
            d1: pick(&self.d1),
            d2: pick(&self.d2),
        }
    }

    /// Stacks batches with equal width and order on top of each other.
    pub fn concat(parts: &[Jets]) -> Self {
        let cols = parts.first().map_or(0, |p| p.cols);
        let order = parts.first().map_or(0, |p| p.order);
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut out = Jets::zeros(rows, cols, order);
        let mut offset = 0;
        for p in parts {
            let len = p.rows * cols;
            for r in 0..=order {
                out.component_mut(r)[offset..offset + len].copy_from_slice(p.component(r));
            }
            offset += len;
        }
        out
    }

    pub(crate) fn first_non_finite(&self) -> Option<(usize, f64)> {
        [&self.value, &self.d1, &self.d2]
            .into_iter()
            .flat_map(|v| v.iter())
            .enumerate()
            .find(|(_, x)| !x.is_finite())
            .map(|(i, x)| (i, *x))
    }
}

/// Pushes jets through a scalar function `g` given `g'`, `g''` and `g'''`
/// at the inner value.
#[inline]
pub(crate) fn chain_forward(order: usize, f1: f64, f2: f64, z1: f64, z2: f64) -> (f64, f64) {
    let y1 = if order >= 1 { f1 * z1 } else { 0.0 };
    let y2 = if order >= 2 {
        f2 * z1 * z1 + f1 * z2
    } else {
        0.0
    };
    (y1, y2)
}

/// Adjoint of [`chain_forward`]: maps output adjoints `(ybar, ybar', ybar'')`
/// to input adjoints `(zbar, zbar', zbar'')`.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn chain_backward(
    order: usize,
    f1: f64,
    f2: f64,
    f3: f64,
    z1: f64,
    z2: f64,
    yb0: f64,
    yb1: f64,
    yb2: f64,
) -> (f64, f64, f64) {
    match order {
        0 => (f1 * yb0, 0.0, 0.0),
        1 => (f1 * yb0 + f2 * z1 * yb1, f1 * yb1, 0.0),
        _ => (
            f1 * yb0 + f2 * (z1 * yb1 + z2 * yb2) + f3 * z1 * z1 * yb2,
            f1 * yb1 + 2.0 * f2 * z1 * yb2,
            f1 * yb2,
        ),
    }
}

/// `tanh` and its first three derivatives.
#[inline]
pub(crate) fn tanh_derivs(z: f64) -> (f64, f64, f64, f64) {
    let y = z.tanh();
    let t1 = 1.0 - y * y;
    let t2 = -2.0 * y * t1;
    let t3 = -2.0 * (t1 * t1 + y * t2);
    (y, t1, t2, t3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_derivatives_match_finite_differences() {
        let h = 1e-5;
        for z in [-1.3, -0.2, 0.0, 0.4, 2.1] {
            let (_, t1, t2, t3) = tanh_derivs(z);
            let (_, p1, p2, _) = tanh_derivs(z + h);
            let (_, m1, m2, _) = tanh_derivs(z - h);
            assert!((t1 - ((z + h).tanh() - (z - h).tanh()) / (2.0 * h)).abs() < 1e-9);
            assert!((t2 - (p1 - m1) / (2.0 * h)).abs() < 1e-9);
            assert!((t3 - (p2 - m2) / (2.0 * h)).abs() < 1e-9);
        }
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut a = Jets::zeros(2, 3, 2);
        a.value
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64);
        a.d2[4] = 9.0;
        let b = Jets::zeros(1, 3, 2);
        let c = Jets::concat(&[a.clone(), b]);
        assert_eq!(c.rows, 3);
        assert_eq!(c.slice_rows(0, 2), a);
    }
}
