//! Dense activation and weight tensors plus the direct convolution.
//!
//! Layout is row-major and channel-major everywhere: element `(c, y, x)` of a
//! feature map lives at `c * H * W + y * W + x`, element `(j, i, u, v)` of a
//! filter bank at `((j * C_in + i) * K + u) * K + v`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Rank-3 activation tensor `C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "feature map dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            vec![0.0; channels * height * width],
        )
    }

    /// Builds a map by evaluating `f(c, y, x)` for every element.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(C, H, W)`.
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub(crate) fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    /// The `H * W` plane of channel `c`.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Adds `bias[c]` to every pixel of channel `c`.
    pub fn add_channel_bias(&mut self, bias: &[f32]) -> Result<()> {
        if bias.len() != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                found: bias.len(),
            });
        }
        let plane = self.height * self.width;
        for (chunk, b) in self.data.chunks_mut(plane).zip(bias) {
            chunk.iter_mut().for_each(|v| *v += b);
        }
        Ok(())
    }
}

/// Rank-4 convolution weights `C_out x C_in x K x K`, `K` odd.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    data: Vec<f32>,
}

impl FilterBank {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kernel == 0 {
            return Err(Error::Shape(format!(
                "filter bank dimensions must be positive, got {out_channels}x{in_channels}x{kernel}x{kernel}"
            )));
        }
        if kernel % 2 == 0 {
            return Err(Error::Shape(format!(
                "kernel size must be odd, got {kernel}"
            )));
        }
        let expected = out_channels * in_channels * kernel * kernel;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "filter bank {out_channels}x{in_channels}x{kernel}x{kernel} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel,
            data,
        })
    }

    pub fn from_fn(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(out_channels * in_channels * kernel * kernel);
        for j in 0..out_channels {
            for i in 0..in_channels {
                for u in 0..kernel {
                    for v in 0..kernel {
                        data.push(f(j, i, u, v));
                    }
                }
            }
        }
        Self::new(out_channels, in_channels, kernel, data)
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    #[inline]
    pub fn kernel(&self) -> usize {
        self.kernel
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize, u: usize, v: usize) -> f32 {
        self.data[((j * self.in_channels + i) * self.kernel + u) * self.kernel + v]
    }

    /// The `K * K` kernel connecting input channel `i` to output channel `j`.
    pub fn kernel_slice(&self, j: usize, i: usize) -> &[f32] {
        let kk = self.kernel * self.kernel;
        let start = (j * self.in_channels + i) * kk;
        &self.data[start..start + kk]
    }
}

/// Zero padding on each side of the spatial dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PaddingSpec {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl PaddingSpec {
    pub const ZERO: PaddingSpec = PaddingSpec {
        top: 0,
        bottom: 0,
        left: 0,
        right: 0,
    };

    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Padding that keeps the spatial size for a stride-1 kernel of odd size `k`.
    pub fn same(kernel: usize) -> Self {
        Self::uniform(kernel / 2)
    }

    /// Total padding along the height (`P_H`).
    pub fn vertical(&self) -> usize {
        self.top + self.bottom
    }

    /// Total padding along the width (`P_W`).
    pub fn horizontal(&self) -> usize {
        self.left + self.right
    }
}

/// Zero-pads `map` according to `spec`.
pub fn pad(map: &FeatureMap, spec: PaddingSpec) -> FeatureMap {
    let (c, h, w) = map.shape();
    let ph = h + spec.vertical();
    let pw = w + spec.horizontal();
    let mut data = vec![0.0f32; c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            let src = &map.data[(ch * h + y) * w..(ch * h + y + 1) * w];
            let dst_start = (ch * ph + y + spec.top) * pw + spec.left;
            data[dst_start..dst_start + w].copy_from_slice(src);
        }
    }
    FeatureMap {
        channels: c,
        height: ph,
        width: pw,
        data,
    }
}

/// Instrumented operation tally: one multiplication and one addition per MAC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCount {
    pub multiplications: u64,
    pub additions: u64,
}

impl OpCount {
    pub fn total(&self) -> u64 {
        self.multiplications + self.additions
    }
}

fn check_same_size(map: &FeatureMap, filters: &FilterBank, spec: PaddingSpec) -> Result<()> {
    if map.channels() != filters.in_channels() {
        return Err(Error::ChannelMismatch {
            expected: filters.in_channels(),
            found: map.channels(),
        });
    }
    let k = filters.kernel();
    if spec.vertical() != k - 1 || spec.horizontal() != k - 1 {
        return Err(Error::Config(format!(
            "padding {spec:?} does not keep the spatial size for kernel {k}"
        )));
    }
    Ok(())
}

/// Stride-1 same-size convolution (cross-correlation, as in CNN frameworks).
///
/// `out[j][y][x] = sum_i sum_{u,v} F[j][i][u][v] * X_pad[i][y+u][x+v]`, summed
/// in `f64` per output pixel.
pub fn conv2d_direct(
    map: &FeatureMap,
    filters: &FilterBank,
    spec: PaddingSpec,
) -> Result<FeatureMap> {
    conv2d_direct_counted(map, filters, spec).map(|(out, _)| out)
}

/// [`conv2d_direct`] plus the number of multiplications and additions it
/// performed, padded zeros included.
pub fn conv2d_direct_counted(
    map: &FeatureMap,
    filters: &FilterBank,
    spec: PaddingSpec,
) -> Result<(FeatureMap, OpCount)> {
    check_same_size(map, filters, spec)?;
    let padded = pad(map, spec);
    let (c_in, h, w) = map.shape();
    let (pw, k) = (padded.width(), filters.kernel());
    let c_out = filters.out_channels();
    let mut out = vec![0.0f32; c_out * h * w];
    let mut macs = 0u64;
    for j in 0..c_out {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for i in 0..c_in {
                    let kernel = filters.kernel_slice(j, i);
                    let plane = padded.channel(i);
                    for u in 0..k {
                        let row = &plane[(y + u) * pw + x..(y + u) * pw + x + k];
                        for (wv, xv) in kernel[u * k..(u + 1) * k].iter().zip(row) {
                            acc += f64::from(*wv) * f64::from(*xv);
                        }
                    }
                    macs += (k * k) as u64;
                }
                out[(j * h + y) * w + x] = acc as f32;
            }
        }
    }
    let map = FeatureMap::new(c_out, h, w, out)?;
    Ok((
        map,
        OpCount {
            multiplications: macs,
            additions: macs,
        },
    ))
}

/// FLOPs of a regular same-size convolution: `2 * H * W * K^2 * C_in * C_out`.
pub fn mac_count_regular(
    c_in: usize,
    c_out: usize,
    height: usize,
    width: usize,
    kernel: usize,
) -> u64 {
    2 * (height as u64) * (width as u64) * (kernel as u64).pow(2) * (c_in as u64) * (c_out as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    /// Textbook nested-loop convolution with bounds checks instead of a
    /// padded copy.
    fn reference_conv(map: &FeatureMap, filters: &FilterBank, p: usize) -> Vec<f64> {
        let (c_in, h, w) = map.shape();
        let k = filters.kernel();
        let mut out = vec![0.0f64; filters.out_channels() * h * w];
        for j in 0..filters.out_channels() {
            for y in 0..h {
                for x in 0..w {
                    let mut s = 0.0f64;
                    for i in 0..c_in {
                        for u in 0..k {
                            for v in 0..k {
                                let yy = y as isize + u as isize - p as isize;
                                let xx = x as isize + v as isize - p as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                s += f64::from(filters.get(j, i, u, v))
                                    * f64::from(map.get(i, yy as usize, xx as usize));
                            }
                        }
                    }
                    out[(j * h + y) * w + x] = s;
                }
            }
        }
        out
    }

    fn random_map(rng: &mut CounterRng, c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(c, h, w, |_, _, _| rng.next_normal() as f32).unwrap()
    }

    fn random_filters(rng: &mut CounterRng, o: usize, i: usize, k: usize) -> FilterBank {
        FilterBank::from_fn(o, i, k, |_, _, _, _| rng.next_normal() as f32).unwrap()
    }

    #[test]
    fn pad_single_pixel() {
        let map = FeatureMap::new(1, 1, 1, vec![5.0]).unwrap();
        let out = pad(&map, PaddingSpec::uniform(1));
        assert_eq!(out.shape(), (1, 3, 3));
        assert_eq!(out.data(), &[0., 0., 0., 0., 5., 0., 0., 0., 0.]);
    }

    #[test]
    fn pad_zero_spec_is_identity() {
        let map = FeatureMap::new(2, 2, 2, (0..8).map(|v| v as f32).collect()).unwrap();
        assert_eq!(pad(&map, PaddingSpec::ZERO), map);
    }

    #[test]
    fn pad_right_column() {
        let map = FeatureMap::new(1, 2, 2, vec![1., 2., 3., 4.]).unwrap();
        let spec = PaddingSpec {
            right: 1,
            ..PaddingSpec::ZERO
        };
        let out = pad(&map, spec);
        assert_eq!(out.shape(), (1, 2, 3));
        assert_eq!(out.data(), &[1., 2., 0., 3., 4., 0.]);
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(FeatureMap::new(0, 1, 1, vec![]).is_err());
        assert!(FeatureMap::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FilterBank::new(1, 1, 2, vec![0.0; 4]).is_err());
        assert!(FilterBank::new(1, 1, 3, vec![0.0; 8]).is_err());
    }

    #[test]
    fn ones_kernel_center_sums_nine() {
        let map = FeatureMap::new(1, 3, 3, vec![1.0; 9]).unwrap();
        let filters = FilterBank::new(1, 1, 3, vec![1.0; 9]).unwrap();
        let out = conv2d_direct(&map, &filters, PaddingSpec::uniform(1)).unwrap();
        assert_eq!(out.get(0, 1, 1), 9.0);
        assert_eq!(out.get(0, 0, 0), 4.0);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = CounterRng::new(3);
        let map = random_map(&mut rng, 1, 5, 4);
        let filters = FilterBank::from_fn(
            1,
            1,
            3,
            |_, _, u, v| if u == 1 && v == 1 { 1.0 } else { 0.0 },
        )
        .unwrap();
        let out = conv2d_direct(&map, &filters, PaddingSpec::same(3)).unwrap();
        assert_eq!(out, map);
    }

    #[test]
    fn matches_reference_triple_loop() {
        let mut rng = CounterRng::new(11);
        let map = random_map(&mut rng, 2, 6, 6);
        let filters = random_filters(&mut rng, 3, 2, 3);
        let out = conv2d_direct(&map, &filters, PaddingSpec::same(3)).unwrap();
        let reference = reference_conv(&map, &filters, 1);
        assert_eq!(out.shape(), (3, 6, 6));
        for (a, b) in out.data().iter().zip(&reference) {
            assert!(
                (f64::from(*a) - b).abs() <= 1e-5 * b.abs().max(1.0),
                "{a} vs {b}"
            );
        }
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let map = FeatureMap::zeros(2, 4, 4).unwrap();
        let filters = FilterBank::new(1, 3, 3, vec![0.0; 27]).unwrap();
        assert!(matches!(
            conv2d_direct(&map, &filters, PaddingSpec::same(3)),
            Err(Error::ChannelMismatch {
                expected: 3,
                found: 2
            })
        ));
        let filters = FilterBank::new(1, 2, 3, vec![0.0; 18]).unwrap();
        assert!(matches!(
            conv2d_direct(&map, &filters, PaddingSpec::ZERO),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn regular_flops_formula() {
        assert_eq!(mac_count_regular(2, 3, 4, 4, 3), 1728);
        assert_eq!(mac_count_regular(1, 1, 1, 1, 1), 2);
    }

    #[test]
    fn instrumented_count_matches_formula() {
        let map = FeatureMap::zeros(2, 4, 4).unwrap();
        let filters = FilterBank::new(3, 2, 3, vec![0.0; 54]).unwrap();
        let (out, count) = conv2d_direct_counted(&map, &filters, PaddingSpec::same(3)).unwrap();
        assert_eq!(out.shape(), (3, 4, 4));
        assert_eq!(count.multiplications, count.additions);
        assert_eq!(count.total(), 1728);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn conv_is_linear(seed in any::<u64>(), c in 1usize..4, h in 1usize..7, w in 1usize..7,
                          o in 1usize..4, a in -3.0f32..3.0, b in -3.0f32..3.0) {
            let mut rng = CounterRng::new(seed);
            let x1 = random_map(&mut rng, c, h, w);
            let x2 = random_map(&mut rng, c, h, w);
            let f = random_filters(&mut rng, o, c, 3);
            let mixed = FeatureMap::new(c, h, w,
                x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let spec = PaddingSpec::same(3);
            let lhs = conv2d_direct(&mixed, &f, spec).unwrap();
            let y1 = conv2d_direct(&x1, &f, spec).unwrap();
            let y2 = conv2d_direct(&x2, &f, spec).unwrap();
            prop_assert_eq!(lhs.shape(), (o, h, w));
            let scale = lhs.data().iter().fold(1.0f32, |m, v| m.max(v.abs()));
            for ((l, p), q) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
                prop_assert!((l - (a * p + b * q)).abs() <= 1e-4 * scale);
            }
        }

        #[test]
        fn counted_flops_equal_formula(c in 1usize..5, o in 1usize..5, h in 1usize..8, w in 1usize..8,
                                       k in prop::sample::select(vec![1usize, 3, 5])) {
            let map = FeatureMap::zeros(c, h, w).unwrap();
            let f = FilterBank::new(o, c, k, vec![0.0; o * c * k * k]).unwrap();
            let (out, count) = conv2d_direct_counted(&map, &f, PaddingSpec::same(k)).unwrap();
            prop_assert_eq!(out.shape(), (o, h, w));
            prop_assert_eq!(count.total(), mac_count_regular(c, o, h, w, k));
        }
    }
}
