//! Feature extraction: the angle-delay (virtual) channel representation and
//! the normalized real-valued feature matrix handed to the embedding stage.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ArrayConfig, ChannelSample, MultipathComponent};
use crate::error::{Error, Result};
use crate::scenario::Dataset;

const SINGULAR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VirtualGridConfig {
    /// Number of angle bins `N_D`.
    pub num_angle_bins: usize,
    /// Number of delay bins `T_D`.
    pub num_delay_bins: usize,
    /// Bandwidth in Hz; sets the delay-bin pitch `1 / W`.
    pub bandwidth: f64,
}

impl Default for VirtualGridConfig {
    fn default() -> Self {
        Self { num_angle_bins: 32, num_delay_bins: 60, bandwidth: 500e6 }
    }
}

impl VirtualGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_angle_bins == 0 || self.num_delay_bins == 0 {
            return Err(Error::domain("virtual grid needs at least one angle and one delay bin"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::domain("virtual grid bandwidth must be positive"));
        }
        Ok(())
    }

    /// Normalized spatial frequency of angle bin `p`.
    pub fn angle_bin(&self, p: usize) -> f64 {
        -0.5 + p as f64 / self.num_angle_bins as f64
    }

    pub fn delay_bin(&self, q: usize) -> f64 {
        q as f64 / self.bandwidth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Element,
    #[default]
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    #[default]
    Abs,
    Angle,
    Real,
    Imag,
}

impl Component {
    fn apply(self, z: Complex64) -> f64 {
        match self {
            Component::Abs => z.norm(),
            Component::Angle => z.arg(),
            Component::Real => z.re,
            Component::Imag => z.im,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    #[serde(default)]
    pub representation: Representation,
    #[serde(default)]
    pub component: Component,
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self { representation: Representation::Virtual, component: Component::Abs, normalize: true }
    }
}

/// Real feature rows for the samples that survived (non-zero channels).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    /// Dataset sample id of every row.
    pub index_map: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, index_map: Vec<usize>) -> Result<Self> {
        if values.nrows() != index_map.len() {
            return Err(Error::domain(format!(
                "{} rows but {} index entries",
                values.nrows(),
                index_map.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("feature matrix has non-finite entries"));
        }
        Ok(Self { values, index_map })
    }

    /// Rows keep their position as sample id.
    pub fn from_rows(values: Array2<f64>) -> Self {
        let index_map = (0..values.nrows()).collect();
        Self { values, index_map }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

fn near_integer(x: f64) -> Option<f64> {
    let r = x.round();
    ((x - r).abs() < SINGULAR_EPS).then_some(r)
}

/// Normalized Dirichlet kernel `sin(pi N x) / (N sin(pi x)) * exp(-j 2 pi x)`.
pub fn dirichlet_kernel(x: f64, n: usize) -> Complex64 {
    let phase = Complex64::from_polar(1.0, -2.0 * PI * x);
    let amplitude = match near_integer(x) {
        Some(m) => {
            let parity = (m as i64).rem_euclid(2) * ((n as i64 - 1).rem_euclid(2));
            if parity == 0 {
                1.0
            } else {
                -1.0
            }
        }
        None => (PI * n as f64 * x).sin() / (n as f64 * (PI * x).sin()),
    };
    phase * amplitude
}

pub fn sinc(x: f64) -> f64 {
    match near_integer(x) {
        Some(m) if m == 0.0 => 1.0,
        Some(_) => 0.0,
        None => (PI * x).sin() / (PI * x),
    }
}

/// Angle-delay response of a path list on the virtual grid, `N_D x T_D`.
pub fn virtual_transform(mpcs: &[MultipathComponent], vcfg: &VirtualGridConfig) -> Array2<Complex64> {
    let (nd, td) = (vcfg.num_angle_bins, vcfg.num_delay_bins);
    let mut out = Array2::<Complex64>::zeros((nd, td));
    for mpc in mpcs {
        let u = 0.5 * mpc.aoa.cos();
        let angle: Vec<Complex64> = (0..nd)
            .map(|p| mpc.amplitude * dirichlet_kernel(vcfg.angle_bin(p) - u, nd))
            .collect();
        let delay: Vec<f64> = (0..td)
            .map(|q| sinc(vcfg.bandwidth * (vcfg.delay_bin(q) - mpc.delay)))
            .collect();
        for (p, a) in angle.iter().enumerate() {
            for (q, d) in delay.iter().enumerate() {
                out[[p, q]] += a * d;
            }
        }
    }
    out
}

/// Scaling of the subcarrier-to-delay transform in [`virtual_transform_dft`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DftScaling {
    /// `1/F`: an on-grid path maps to its complex gain, like the analytic kernels.
    #[default]
    Kernel,
    /// `1/sqrt(F)`: norm-preserving when `N_D = N` and `T_D = F`.
    Unitary,
}

/// Discrete angle-delay transform of a stored channel matrix.
pub fn virtual_transform_dft(
    sample: &ChannelSample,
    array: &ArrayConfig,
    vcfg: &VirtualGridConfig,
    scaling: DftScaling,
) -> Result<Array2<Complex64>> {
    vcfg.validate()?;
    let (n, f) = sample.matrix.dim();
    if n != array.num_antennas || f != array.num_subcarriers {
        return Err(Error::domain(format!("sample shape {n}x{f} does not match the array config")));
    }
    let (nd, td) = (vcfg.num_angle_bins, vcfg.num_delay_bins);
    if nd < n {
        return Err(Error::domain(format!("{nd} angle bins cannot resolve {n} antennas")));
    }
    if td > f {
        return Err(Error::domain(format!("{td} delay bins exceed {f} subcarriers")));
    }
    let angle_scale = 1.0 / (n as f64).sqrt();
    let angle_twiddle = Array2::from_shape_fn((nd, n), |(p, k)| {
        Complex64::from_polar(angle_scale, -2.0 * PI * k as f64 * vcfg.angle_bin(p))
    });
    let offsets = array.subcarrier_offsets();
    let delay_scale = match scaling {
        DftScaling::Kernel => 1.0 / f as f64,
        DftScaling::Unitary => 1.0 / (f as f64).sqrt(),
    };
    let delay_twiddle = Array2::from_shape_fn((f, td), |(q, t)| {
        Complex64::from_polar(delay_scale, 2.0 * PI * offsets[q] * vcfg.delay_bin(t))
    });
    Ok(angle_twiddle.dot(&sample.matrix).dot(&delay_twiddle))
}

fn sample_representation(ds: &Dataset, m: usize, spec: &FeatureSpec, vcfg: &VirtualGridConfig) -> Result<Array2<Complex64>> {
    match spec.representation {
        Representation::Element => Ok(ds.samples[m].matrix.clone()),
        Representation::Virtual => match &ds.paths {
            Some(paths) => Ok(virtual_transform(&paths[m], vcfg)),
            None => virtual_transform_dft(&ds.samples[m], &ds.array, vcfg, DftScaling::Kernel),
        },
    }
}

/// Builds the feature matrix, dropping zero-norm rows.
///
/// The virtual representation uses the analytic kernels when the dataset
/// carries path parameters, and the DFT approximation otherwise.
pub fn assemble_features(ds: &Dataset, spec: &FeatureSpec, vcfg: &VirtualGridConfig) -> Result<FeatureMatrix> {
    vcfg.validate()?;
    let rows: Vec<Option<Vec<f64>>> = (0..ds.len())
        .into_par_iter()
        .map(|m| {
            let rep = sample_representation(ds, m, spec, vcfg)?;
            // row-major vectorization
            let mut row: Vec<f64> = rep.iter().map(|&z| spec.component.apply(z)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Ok(None);
            }
            if spec.normalize {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            Ok(Some(row))
        })
        .collect::<Result<_>>()?;

    let width = match spec.representation {
        Representation::Element => ds.array.num_antennas * ds.array.num_subcarriers,
        Representation::Virtual => vcfg.num_angle_bins * vcfg.num_delay_bins,
    };
    let index_map: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter_map(|(m, r)| r.as_ref().map(|_| m))
        .collect();
    if index_map.is_empty() {
        return Err(Error::EmptyFeatures);
    }
    let mut flat = Vec::with_capacity(index_map.len() * width);
    for row in rows.into_iter().flatten() {
        flat.extend(row);
    }
    let values = Array2::from_shape_vec((index_map.len(), width), flat).expect("rows have uniform width");
    FeatureMatrix::new(values, index_map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::synth_channel;
    use crate::scenario::{build_grid, GridSpec, Location};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mpc(re: f64, im: f64, aoa: f64, delay: f64) -> MultipathComponent {
        MultipathComponent::new(Complex64::new(re, im), aoa, delay)
    }

    #[test]
    fn kernel_limits() {
        for n in [1, 2, 7, 32] {
            assert_abs_diff_eq!((dirichlet_kernel(0.0, n) - 1.0).norm(), 0.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(dirichlet_kernel(1.0 / 32.0, 32).norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(dirichlet_kernel(0.5, 2).norm(), 0.0, epsilon = 1e-15);
        // odd multiples of 1 with even N flip sign
        assert_abs_diff_eq!(dirichlet_kernel(1.0, 4).re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dirichlet_kernel(1.0, 5).re, 1.0, epsilon = 1e-12);
        assert_eq!(sinc(0.0), 1.0);
        assert_eq!(sinc(1.0), 0.0);
        assert_abs_diff_eq!(sinc(0.5), 2.0 / PI, epsilon = 1e-15);
        assert_abs_diff_eq!(sinc(-0.5), 2.0 / PI, epsilon = 1e-15);
    }

    #[test]
    fn kernels_are_continuous_across_the_singular_branch() {
        let eps = 1e-8;
        for n in [2usize, 5, 32] {
            for m in -2..=2 {
                let x = m as f64;
                for base in [x - 2e-9, x, x + 5e-10] {
                    let jump = (dirichlet_kernel(base, n) - dirichlet_kernel(base + eps, n)).norm();
                    assert!(jump <= 10.0 * n as f64 * n as f64 * eps, "n={n} x={base} jump={jump}");
                    assert!((sinc(base) - sinc(base + eps)).abs() <= 10.0 * eps);
                }
            }
        }
    }

    fn on_grid_path(vcfg: &VirtualGridConfig, p0: usize, q0: usize) -> MultipathComponent {
        let u = vcfg.angle_bin(p0);
        mpc(1.0, 0.0, (2.0 * u).acos(), q0 as f64 / vcfg.bandwidth)
    }

    #[test]
    fn on_grid_path_is_a_delta() {
        let vcfg = VirtualGridConfig::default();
        let path = on_grid_path(&vcfg, 20, 7);
        let hv = virtual_transform(&[path], &vcfg);
        for ((p, q), z) in hv.indexed_iter() {
            let expect = if (p, q) == (20, 7) { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(z.norm(), expect, epsilon = 1e-12);
        }
        assert!(virtual_transform(&[], &vcfg).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn off_grid_delay_splits_between_neighbouring_bins() {
        let vcfg = VirtualGridConfig::default();
        let mut path = on_grid_path(&vcfg, 10, 0);
        path.delay = 12.5 / vcfg.bandwidth;
        let hv = virtual_transform(&[path], &vcfg);
        assert_abs_diff_eq!(hv[[10, 12]].norm(), 2.0 / PI, epsilon = 1e-12);
        assert_abs_diff_eq!(hv[[10, 13]].norm(), 2.0 / PI, epsilon = 1e-12);
    }

    fn array(n: usize, f: usize, w: f64) -> ArrayConfig {
        ArrayConfig { num_antennas: n, num_subcarriers: f, bandwidth: w, ..ArrayConfig::default() }
    }

    #[test]
    fn dft_path_matches_analytic_on_grid() {
        let vcfg = VirtualGridConfig { num_angle_bins: 32, num_delay_bins: 60, bandwidth: 500e6 };
        let arr = array(32, 60, 500e6);
        let path = on_grid_path(&vcfg, 9, 23);
        let h = synth_channel(&[path], &arr).unwrap();
        let dft = virtual_transform_dft(&h, &arr, &vcfg, DftScaling::Kernel).unwrap();
        let analytic = virtual_transform(&[path], &vcfg);
        let err: f64 = (&dft - &analytic).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let scale: f64 = analytic.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / scale <= 1e-6, "relative error {}", err / scale);
    }

    #[test]
    fn dft_zero_and_shape_checks() {
        let vcfg = VirtualGridConfig { num_angle_bins: 8, num_delay_bins: 4, bandwidth: 1e8 };
        let arr = array(8, 4, 1e8);
        let zero = ChannelSample::zeros(&arr, 0);
        let out = virtual_transform_dft(&zero, &arr, &vcfg, DftScaling::Kernel).unwrap();
        assert!(out.iter().all(|z| z.norm() == 0.0));
        let small = VirtualGridConfig { num_angle_bins: 4, ..vcfg };
        assert!(virtual_transform_dft(&zero, &arr, &small, DftScaling::Kernel).is_err());
        let long = VirtualGridConfig { num_delay_bins: 5, ..vcfg };
        assert!(virtual_transform_dft(&zero, &arr, &long, DftScaling::Kernel).is_err());
    }

    proptest! {
        #[test]
        fn unitary_dft_preserves_energy(paths in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, 0.05..3.1f64, 0.0..40e-9f64), 1..4)) {
            let arr = array(8, 12, 2e8);
            let vcfg = VirtualGridConfig { num_angle_bins: 8, num_delay_bins: 12, bandwidth: 2e8 };
            let mpcs: Vec<_> = paths.iter().map(|&(a, b, t, d)| mpc(a, b, t, d)).collect();
            let h = synth_channel(&mpcs, &arr).unwrap();
            let out = virtual_transform_dft(&h, &arr, &vcfg, DftScaling::Unitary).unwrap();
            let e_in = h.frobenius_norm_sqr().sqrt();
            let e_out = out.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!((e_in - e_out).abs() <= 1e-9);
        }

        #[test]
        fn virtual_transform_is_linear(
            a in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, 0.05..3.1f64, 0.0..100e-9f64), 0..3),
            b in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, 0.05..3.1f64, 0.0..100e-9f64), 0..3),
        ) {
            let vcfg = VirtualGridConfig { num_angle_bins: 8, num_delay_bins: 10, bandwidth: 1e8 };
            let ma: Vec<_> = a.iter().map(|&(r, i, t, d)| mpc(r, i, t, d)).collect();
            let mb: Vec<_> = b.iter().map(|&(r, i, t, d)| mpc(r, i, t, d)).collect();
            let joined: Vec<_> = ma.iter().chain(mb.iter()).copied().collect();
            let sum = virtual_transform(&ma, &vcfg) + virtual_transform(&mb, &vcfg);
            let direct = virtual_transform(&joined, &vcfg);
            for (x, y) in sum.iter().zip(direct.iter()) {
                prop_assert!((x - y).norm() <= 1e-12);
            }
        }

        #[test]
        fn abs_features_ignore_global_phase(phi in 0.0..(2.0 * PI), paths in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, 0.05..3.1f64, 0.0..100e-9f64), 1..4)) {
            let grid = GridSpec { rows: 1, cols: 2, spacing: 0.2, origin: Location::default(), ue_height: 0.0 };
            let arr = array(4, 4, 1e8);
            let base: Vec<_> = paths.iter().map(|&(r, i, t, d)| mpc(r, i, t, d)).collect();
            prop_assume!(base.iter().map(|m| m.amplitude.norm()).sum::<f64>() > 1e-3);
            let rot = Complex64::from_polar(1.0, phi);
            let rotated: Vec<_> = base.iter().map(|m| MultipathComponent { amplitude: m.amplitude * rot, ..*m }).collect();
            let samples = vec![ChannelSample::zeros(&arr, 0), ChannelSample::zeros(&arr, 1)];
            let ds = Dataset::new(samples, arr, grid).unwrap()
                .with_locations(build_grid(&grid)).unwrap()
                .with_paths(vec![base, rotated]).unwrap();
            let vcfg = VirtualGridConfig { num_angle_bins: 8, num_delay_bins: 6, bandwidth: 1e8 };
            let fm = assemble_features(&ds, &FeatureSpec::default(), &vcfg).unwrap();
            prop_assume!(fm.nrows() == 2);
            for (x, y) in fm.values.row(0).iter().zip(fm.values.row(1).iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    fn tiny_dataset() -> Dataset {
        let grid = GridSpec { rows: 1, cols: 3, spacing: 0.2, origin: Location::default(), ue_height: 0.0 };
        let arr = array(4, 4, 1e8);
        let paths = vec![
            vec![mpc(1.0, 0.5, 1.0, 5e-9)],
            vec![],
            vec![mpc(0.2, 0.0, 2.0, 1e-8), mpc(0.0, 0.3, 0.7, 3e-8)],
        ];
        let samples = paths.iter().map(|p| synth_channel(p, &arr).unwrap()).collect();
        Dataset::new(samples, arr, grid).unwrap().with_paths(paths).unwrap()
    }

    #[test]
    fn assembled_rows_are_unit_norm_and_zero_rows_dropped() {
        let ds = tiny_dataset();
        let vcfg = VirtualGridConfig { num_angle_bins: 32, num_delay_bins: 60, bandwidth: 1e8 };
        let fm = assemble_features(&ds, &FeatureSpec::default(), &vcfg).unwrap();
        assert_eq!(fm.values.dim(), (2, 1920));
        assert_eq!(fm.index_map, vec![0, 2]);
        for row in fm.values.rows() {
            assert_abs_diff_eq!(row.dot(&row).sqrt(), 1.0, epsilon = 1e-9);
        }
        let element = FeatureSpec { representation: Representation::Element, ..FeatureSpec::default() };
        let fe = assemble_features(&ds, &element, &vcfg).unwrap();
        assert_eq!(fe.values.dim(), (2, 16));
    }

    #[test]
    fn component_transforms() {
        let z = Complex64::new(3.0, 4.0);
        assert_eq!(Component::Abs.apply(z), 5.0);
        assert_eq!(Component::Real.apply(z), 3.0);
        assert_eq!(Component::Imag.apply(z), 4.0);
        assert_abs_diff_eq!(Component::Angle.apply(z), (4.0f64).atan2(3.0));
    }

    #[test]
    fn normalization_of_a_two_vector() {
        let grid = GridSpec { rows: 1, cols: 1, spacing: 1.0, origin: Location::default(), ue_height: 0.0 };
        let arr = array(1, 2, 1e8);
        let sample = ChannelSample {
            matrix: Array2::from_shape_vec((1, 2), vec![Complex64::new(3.0, 0.0), Complex64::new(0.0, -4.0)]).unwrap(),
            sample_id: 0,
        };
        let ds = Dataset::new(vec![sample], arr, grid).unwrap();
        let spec = FeatureSpec { representation: Representation::Element, ..FeatureSpec::default() };
        let fm = assemble_features(&ds, &spec, &VirtualGridConfig::default()).unwrap();
        assert_abs_diff_eq!(fm.values[[0, 0]], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(fm.values[[0, 1]], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn all_zero_dataset_is_an_error() {
        let grid = GridSpec { rows: 1, cols: 2, spacing: 1.0, origin: Location::default(), ue_height: 0.0 };
        let arr = array(2, 2, 1e8);
        let ds = Dataset::new(vec![ChannelSample::zeros(&arr, 0), ChannelSample::zeros(&arr, 1)], arr, grid).unwrap();
        let spec = FeatureSpec { representation: Representation::Element, ..FeatureSpec::default() };
        assert!(matches!(
            assemble_features(&ds, &spec, &VirtualGridConfig::default()),
            Err(Error::EmptyFeatures)
        ));
    }
}
