use crate::Scalar;

/// Orthonormal 8-point DCT-II basis, applied separably to 8x8 blocks.
#[derive(Clone, Debug)]
pub struct Dct8<T> {
    /// `basis[u * 8 + x] = c(u) / 2 * cos((2x + 1) u pi / 16)`, `c(0) = 1/sqrt(2)`.
    basis: [T; 64],
}

impl<T: Scalar> Default for Dct8<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Dct8<T> {
    pub fn new() -> Self {
        let basis = std::array::from_fn(|i| {
            let (u, x) = (i / 8, i % 8);
            let c = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            T::of(c / 2.0 * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos())
        });
        Dct8 { basis }
    }

    /// Row-major spatial block to row-major coefficients (`[v * 8 + u]`).
    pub fn forward(&self, block: &[T; 64]) -> [T; 64] {
        let mut tmp = [T::zero(); 64];
        // rows: tmp[y][u] = sum_x B[u][x] f[y][x]
        for y in 0..8 {
            for u in 0..8 {
                tmp[y * 8 + u] = (0..8).map(|x| self.basis[u * 8 + x] * block[y * 8 + x]).sum();
            }
        }
        let mut out = [T::zero(); 64];
        for v in 0..8 {
            for u in 0..8 {
                out[v * 8 + u] = (0..8).map(|y| self.basis[v * 8 + y] * tmp[y * 8 + u]).sum();
            }
        }
        out
    }

    pub fn inverse(&self, coeffs: &[T; 64]) -> [T; 64] {
        let mut tmp = [T::zero(); 64];
        for v in 0..8 {
            for x in 0..8 {
                tmp[v * 8 + x] = (0..8).map(|u| self.basis[u * 8 + x] * coeffs[v * 8 + u]).sum();
            }
        }
        let mut out = [T::zero(); 64];
        for y in 0..8 {
            for x in 0..8 {
                out[y * 8 + x] = (0..8).map(|v| self.basis[v * 8 + y] * tmp[v * 8 + x]).sum();
            }
        }
        out
    }
}

pub fn fdct8x8<T: Scalar>(block: &[T; 64]) -> [T; 64] {
    Dct8::new().forward(block)
}

pub fn idct8x8<T: Scalar>(coeffs: &[T; 64]) -> [T; 64] {
    Dct8::new().inverse(coeffs)
}

/// Fixed-point multipliers with 12 fractional bits.
mod fixed {
    pub const C0_541: i32 = 2217;
    pub const C1_847: i32 = -7567;
    pub const C0_765: i32 = 3135;
    pub const C1_175: i32 = 4816;
    pub const C0_298: i32 = 1223;
    pub const C2_053: i32 = 8410;
    pub const C3_072: i32 = 12586;
    pub const C1_501: i32 = 6149;
    pub const C0_899: i32 = -3685;
    pub const C2_562: i32 = -10497;
    pub const C1_961: i32 = -8034;
    pub const C0_390: i32 = -1597;
}

/// One 8-point pass of the fixed-point inverse transform over `v[i * step]`.
/// Returns the eight outputs before the final shift, with `bias` added.
#[inline(always)]
fn idct_pass(v: [i32; 8], bias: i32) -> [i32; 8] {
    use fixed::*;
    let p1 = v[2].wrapping_add(v[6]).wrapping_mul(C0_541);
    let t2 = p1.wrapping_add(v[6].wrapping_mul(C1_847));
    let t3 = p1.wrapping_add(v[2].wrapping_mul(C0_765));
    let t0 = v[0].wrapping_add(v[4]) << 12;
    let t1 = v[0].wrapping_sub(v[4]) << 12;
    let x0 = t0.wrapping_add(t3).wrapping_add(bias);
    let x3 = t0.wrapping_sub(t3).wrapping_add(bias);
    let x1 = t1.wrapping_add(t2).wrapping_add(bias);
    let x2 = t1.wrapping_sub(t2).wrapping_add(bias);

    let (o0, o1, o2, o3) = (v[7], v[5], v[3], v[1]);
    let q3 = o0.wrapping_add(o2);
    let q4 = o1.wrapping_add(o3);
    let q1 = o0.wrapping_add(o3);
    let q2 = o1.wrapping_add(o2);
    let p5 = q3.wrapping_add(q4).wrapping_mul(C1_175);
    let q1 = p5.wrapping_add(q1.wrapping_mul(C0_899));
    let q2 = p5.wrapping_add(q2.wrapping_mul(C2_562));
    let q3 = q3.wrapping_mul(C1_961);
    let q4 = q4.wrapping_mul(C0_390);
    let s3 = o3.wrapping_mul(C1_501).wrapping_add(q1.wrapping_add(q4));
    let s2 = o2.wrapping_mul(C3_072).wrapping_add(q2.wrapping_add(q3));
    let s1 = o1.wrapping_mul(C2_053).wrapping_add(q2.wrapping_add(q4));
    let s0 = o0.wrapping_mul(C0_298).wrapping_add(q1.wrapping_add(q3));
    [
        x0.wrapping_add(s3),
        x1.wrapping_add(s2),
        x2.wrapping_add(s1),
        x3.wrapping_add(s0),
        x3.wrapping_sub(s0),
        x2.wrapping_sub(s1),
        x1.wrapping_sub(s2),
        x0.wrapping_sub(s3),
    ]
}

/// Integer inverse DCT of dequantized coefficients (row-major `[v * 8 + u]`)
/// straight to level-shifted, clamped 8-bit samples. This is the fixed-point
/// arithmetic common to widely deployed decoders, so outputs agree with
/// them sample for sample.
pub fn idct8x8_fixed(coeffs: &[i32; 64]) -> [u8; 64] {
    let mut tmp = [0i32; 64];
    for u in 0..8 {
        let col = std::array::from_fn(|v| coeffs[v * 8 + u]);
        for (v, x) in idct_pass(col, 512).into_iter().enumerate() {
            tmp[v * 8 + u] = x >> 10;
        }
    }
    let mut out = [0u8; 64];
    for y in 0..8 {
        let row = std::array::from_fn(|u| tmp[y * 8 + u]);
        for (x, v) in idct_pass(row, 512 + 65536 + (128 << 17)).into_iter().enumerate() {
            out[y * 8 + x] = (v >> 17).clamp(0, 255) as u8;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_block_has_only_dc() {
        let c = fdct8x8(&[3.0f64; 64]);
        assert!((c[0] - 24.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn fixed_point_tracks_float_inverse() {
        let dct = Dct8::<f64>::new();
        for seed in 0..50i32 {
            let coeffs: [i32; 64] = std::array::from_fn(|i| {
                let k = (i as i32 * 7919 + seed * 104_729) % 201 - 100;
                if i < 10 || i % 5 == 0 { k * 4 } else { 0 }
            });
            let exact = dct.inverse(&coeffs.map(f64::from));
            let fixed = idct8x8_fixed(&coeffs);
            for (e, &f) in exact.iter().zip(&fixed) {
                let want = (e + 128.0).round().clamp(0.0, 255.0);
                assert!((want - f as f64).abs() <= 1.0, "{want} vs {f}");
            }
        }
    }

    #[test]
    fn single_precision_roundtrip() {
        let block: [f32; 64] = std::array::from_fn(|i| ((i * 37) % 255) as f32 - 128.0);
        let back = idct8x8(&fdct8x8(&block));
        for (a, b) in block.iter().zip(&back) {
            assert!((a - b).abs() < 1e-3);
        }
    }
}
