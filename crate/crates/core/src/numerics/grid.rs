//! Dense row-major grids and the raw correlation kernels shared by the
//! pure operations and the tape.

use std::fmt;

use super::NumericsError;

/// Row-major 2D array of reals.
#[derive(Clone, PartialEq)]
pub struct Grid2D {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl fmt::Debug for Grid2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Grid2D {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows.min(16) {
            let row: Vec<String> = self.row(r).iter().take(16).map(|v| format!("{v:+.2}")).collect();
            writeln!(f, "  {}", row.join(" "))?;
        }
        Ok(())
    }
}

impl Grid2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Grid2D { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if rows * cols != data.len() {
            return Err(NumericsError::Shape(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Grid2D { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Grid2D { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Value at a signed coordinate, zero outside the grid.
    #[inline]
    pub fn get_or_zero(&self, r: isize, c: isize) -> f64 {
        if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
            0.0
        } else {
            self.data[r as usize * self.cols + c as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid2D {
        Grid2D { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn max_abs_diff(&self, other: &Grid2D) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Kernel fully inside the input; output is `(H-kh+1) x (W-kw+1)`.
    Valid,
    /// Zero padding so the output has the input's shape; the kernel center
    /// (index `(k-1)/2`) is aligned with each output position.
    SameZero,
}

/// Geometry of one correlation: `out[x,y] = sum_ij in[x+i-or, y+j-oc] * k[i,j]`
/// with out-of-range input reads treated as zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorrGeometry {
    pub in_rows: usize,
    pub in_cols: usize,
    pub k_rows: usize,
    pub k_cols: usize,
    pub out_rows: usize,
    pub out_cols: usize,
    pub origin_row: isize,
    pub origin_col: isize,
}

impl CorrGeometry {
    #[inline]
    fn krange(&self, x: usize, origin: isize, k: usize, n_in: usize) -> (usize, usize) {
        // valid i: 0 <= x + i - origin < n_in
        let shift = x as isize - origin;
        let lo = (-shift).max(0) as usize;
        let hi = (n_in as isize - shift).clamp(0, k as isize) as usize;
        (lo.min(hi), hi)
    }

    pub fn forward(&self, input: &[f64], kernel: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_rows * self.in_cols);
        debug_assert_eq!(kernel.len(), self.k_rows * self.k_cols);
        debug_assert_eq!(out.len(), self.out_rows * self.out_cols);
        for x in 0..self.out_rows {
            let (i0, i1) = self.krange(x, self.origin_row, self.k_rows, self.in_rows);
            for y in 0..self.out_cols {
                let (j0, j1) = self.krange(y, self.origin_col, self.k_cols, self.in_cols);
                let mut acc = 0.0;
                for i in i0..i1 {
                    let ir = (x + i) as isize - self.origin_row;
                    let in_row = &input[ir as usize * self.in_cols..];
                    let k_row = &kernel[i * self.k_cols..];
                    let ic0 = (y + j0) as isize - self.origin_col;
                    let base = ic0 as usize;
                    for (jj, j) in (j0..j1).enumerate() {
                        acc += in_row[base + jj] * k_row[j];
                    }
                }
                out[x * self.out_cols + y] = acc;
            }
        }
    }

    /// Accumulates d(loss)/d(kernel) given d(loss)/d(out).
    pub fn backward_kernel(&self, input: &[f64], grad_out: &[f64], grad_kernel: &mut [f64]) {
        for x in 0..self.out_rows {
            let (i0, i1) = self.krange(x, self.origin_row, self.k_rows, self.in_rows);
            for y in 0..self.out_cols {
                let g = grad_out[x * self.out_cols + y];
                if g == 0.0 {
                    continue;
                }
                let (j0, j1) = self.krange(y, self.origin_col, self.k_cols, self.in_cols);
                for i in i0..i1 {
                    let ir = (x + i) as isize - self.origin_row;
                    let base = ir as usize * self.in_cols + ((y + j0) as isize - self.origin_col) as usize;
                    let gk = &mut grad_kernel[i * self.k_cols..];
                    for (jj, j) in (j0..j1).enumerate() {
                        gk[j] += g * input[base + jj];
                    }
                }
            }
        }
    }

    /// Accumulates d(loss)/d(input) given d(loss)/d(out).
    pub fn backward_input(&self, kernel: &[f64], grad_out: &[f64], grad_input: &mut [f64]) {
        for x in 0..self.out_rows {
            let (i0, i1) = self.krange(x, self.origin_row, self.k_rows, self.in_rows);
            for y in 0..self.out_cols {
                let g = grad_out[x * self.out_cols + y];
                if g == 0.0 {
                    continue;
                }
                let (j0, j1) = self.krange(y, self.origin_col, self.k_cols, self.in_cols);
                for i in i0..i1 {
                    let ir = (x + i) as isize - self.origin_row;
                    let base = ir as usize * self.in_cols + ((y + j0) as isize - self.origin_col) as usize;
                    let k_row = &kernel[i * self.k_cols..];
                    for (jj, j) in (j0..j1).enumerate() {
                        grad_input[base + jj] += g * k_row[j];
                    }
                }
            }
        }
    }
}

/// Plain 2D cross-correlation with stride one.
pub fn correlate2d(input: &Grid2D, kernel: &Grid2D, padding: Padding) -> Result<Grid2D, NumericsError> {
    let geom = match padding {
        Padding::Valid => {
            if kernel.rows > input.rows || kernel.cols > input.cols {
                return Err(NumericsError::Shape(format!(
                    "valid correlation needs kernel {}x{} <= input {}x{}",
                    kernel.rows, kernel.cols, input.rows, input.cols
                )));
            }
            CorrGeometry {
                in_rows: input.rows,
                in_cols: input.cols,
                k_rows: kernel.rows,
                k_cols: kernel.cols,
                out_rows: input.rows - kernel.rows + 1,
                out_cols: input.cols - kernel.cols + 1,
                origin_row: 0,
                origin_col: 0,
            }
        }
        Padding::SameZero => same_geometry(input, kernel, 0, 0, input.rows, input.cols),
    };
    let mut out = Grid2D::zeros(geom.out_rows, geom.out_cols);
    geom.forward(&input.data, &kernel.data, &mut out.data);
    Ok(out)
}

/// The `(2r+1)x(2r+1)` central crop of the `SameZero` correlation: entry
/// `(r+dr, r+dc)` is the match score of the kernel displaced by `(dr, dc)`.
pub fn correlate2d_offsets(input: &Grid2D, kernel: &Grid2D, radius: usize) -> Grid2D {
    let n = 2 * radius + 1;
    let center_r = (input.rows as isize - 1) / 2;
    let center_c = (input.cols as isize - 1) / 2;
    let geom = same_geometry(
        input,
        kernel,
        center_r - radius as isize,
        center_c - radius as isize,
        n,
        n,
    );
    let mut out = Grid2D::zeros(n, n);
    geom.forward(&input.data, &kernel.data, &mut out.data);
    out
}

fn same_geometry(input: &Grid2D, kernel: &Grid2D, first_r: isize, first_c: isize, out_rows: usize, out_cols: usize) -> CorrGeometry {
    let ph = (kernel.rows as isize - 1) / 2;
    let pw = (kernel.cols as isize - 1) / 2;
    CorrGeometry {
        in_rows: input.rows,
        in_cols: input.cols,
        k_rows: kernel.rows,
        k_cols: kernel.cols,
        out_rows,
        out_cols,
        origin_row: ph - first_r,
        origin_col: pw - first_c,
    }
}

/// Numerically stable softmax with temperature.
pub fn softmax(values: &[f64], temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0, "softmax temperature must be positive");
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![1.0 / values.len() as f64; values.len()];
    }
    let mut out: Vec<f64> = values.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Elementwise clamp to `[-0.5, +0.5]`.
pub fn clip_unit(g: &Grid2D) -> Grid2D {
    g.map(|v| v.clamp(-0.5, 0.5))
}

/// Affine map with optional ReLU; `weights` is row-major `out x in`.
pub fn dense(input: &[f64], weights: &[f64], bias: &[f64], relu: bool) -> Result<Vec<f64>, NumericsError> {
    let n_out = bias.len();
    if weights.len() != n_out * input.len() {
        return Err(NumericsError::Shape(format!(
            "dense weights {} != {}x{}",
            weights.len(),
            n_out,
            input.len()
        )));
    }
    Ok((0..n_out)
        .map(|o| {
            let row = &weights[o * input.len()..(o + 1) * input.len()];
            let z = bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            if relu {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn brute_corr(input: &Grid2D, kernel: &Grid2D, dr: isize, dc: isize) -> f64 {
        // match score of the kernel placed so that kernel (0,0) sits at input
        // (dr, dc) relative to full overlap
        let mut acc = 0.0;
        for i in 0..kernel.rows {
            for j in 0..kernel.cols {
                acc += input.get_or_zero(i as isize + dr, j as isize + dc) * kernel.get(i, j);
            }
        }
        acc
    }

    #[test]
    fn identity_kernel() {
        let input = Grid2D::from_fn(5, 4, |r, c| (r * 7 + c) as f64 * 0.1 - 1.0);
        let k = Grid2D::filled(1, 1, 1.0);
        assert_eq!(correlate2d(&input, &k, Padding::Valid).unwrap(), input);
        assert_eq!(correlate2d(&input, &k, Padding::SameZero).unwrap(), input);
    }

    #[test]
    fn offsets_three_by_three_match_direct_sum() {
        let input = Grid2D::from_fn(15, 15, |r, c| ((r * 31 + c * 17) % 11) as f64 / 11.0 - 0.5);
        let kernel = Grid2D::from_fn(15, 15, |r, c| ((r * 13 + c * 5) % 7) as f64 / 7.0 - 0.5);
        let out = correlate2d_offsets(&input, &kernel, 1);
        assert_eq!((out.rows, out.cols), (3, 3));
        for dr in -1..=1 {
            for dc in -1..=1 {
                let expect = brute_corr(&input, &kernel, dr, dc);
                assert_abs_diff_eq!(out.get((dr + 1) as usize, (dc + 1) as usize), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn delta_kernel_shifts_west() {
        let input = Grid2D::from_fn(4, 5, |r, c| (r * 5 + c) as f64);
        let mut k = Grid2D::zeros(3, 3);
        k.set(1, 2, 1.0); // offset (0, +1)
        let out = correlate2d(&input, &k, Padding::SameZero).unwrap();
        for r in 0..4 {
            for c in 0..5 {
                let expect = if c + 1 < 5 { input.get(r, c + 1) } else { 0.0 };
                assert_eq!(out.get(r, c), expect);
            }
        }
    }

    #[test]
    fn valid_shape_error() {
        let input = Grid2D::zeros(3, 3);
        let k = Grid2D::zeros(4, 1);
        assert!(matches!(correlate2d(&input, &k, Padding::Valid), Err(NumericsError::Shape(_))));
        assert_eq!(correlate2d(&input, &Grid2D::zeros(2, 2), Padding::Valid).unwrap().rows, 2);
    }

    #[test]
    fn softmax_closed_forms() {
        let u = softmax(&[2.0, 2.0, 2.0, 2.0], 1.0);
        assert!(u.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let p = softmax(&[0.0, 3f64.ln()], 1.0);
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-12);
        let sharp = softmax(&[0.1, 0.3, 0.2], 1e-4);
        assert!(sharp[1] > 1.0 - 1e-12);
    }

    #[test]
    fn clip_and_dense() {
        let g = Grid2D::from_vec(1, 3, vec![0.7, -0.2, -3.0]).unwrap();
        assert_eq!(clip_unit(&g).data, vec![0.5, -0.2, -0.5]);
        assert_eq!(dense(&[1.0, 2.0], &[0.0; 4], &[0.3, -0.4], false).unwrap(), vec![0.3, -0.4]);
        assert_eq!(dense(&[-1.0, 2.0], &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], true).unwrap(), vec![0.0, 2.0]);
        assert!(dense(&[1.0], &[1.0, 2.0, 3.0], &[0.0, 0.0], false).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..40), t in 0.01f64..10.0) {
            let p = softmax(&v, t);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn correlation_is_linear(
            x in prop::collection::vec(-1.0f64..1.0, 36),
            y in prop::collection::vec(-1.0f64..1.0, 36),
            k in prop::collection::vec(-1.0f64..1.0, 9),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let gx = Grid2D::from_vec(6, 6, x).unwrap();
            let gy = Grid2D::from_vec(6, 6, y).unwrap();
            let gk = Grid2D::from_vec(3, 3, k).unwrap();
            let combo = Grid2D::from_vec(6, 6, gx.data.iter().zip(&gy.data).map(|(p, q)| a * p + b * q).collect()).unwrap();
            for pad in [Padding::Valid, Padding::SameZero] {
                let lhs = correlate2d(&combo, &gk, pad).unwrap();
                let cx = correlate2d(&gx, &gk, pad).unwrap();
                let cy = correlate2d(&gy, &gk, pad).unwrap();
                for i in 0..lhs.len() {
                    prop_assert!((lhs.data[i] - (a * cx.data[i] + b * cy.data[i])).abs() < 1e-10);
                }
            }
        }
    }
}
