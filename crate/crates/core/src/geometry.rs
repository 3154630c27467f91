//! Topology, multipath geometry and uplink channel synthesis.
//!
//! Each AP carries an `N_h x N_v` planar array; each user carries one fluid
//! antenna that can move inside a small square region around its nominal
//! position. Under the far-field model the path angles and the path-response
//! matrix of a link do not depend on the antenna position, so the channel of
//! link `(m, k)` is `h_mk = G_mk^H Sigma_mk f_mk(u_k)` where only the transmit
//! field response `f_mk` moves with `u_k`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Point = [f64; 2];

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Axis-aligned square movement region, in local coordinates around the
/// user's reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FasRegion {
    pub min: f64,
    pub max: f64,
}

impl FasRegion {
    /// Square of side `side` centred on the reference point.
    pub fn centered(side: f64) -> Self {
        Self { min: -0.5 * side, max: 0.5 * side }
    }

    pub fn center(&self) -> Point {
        let c = 0.5 * (self.min + self.max);
        [c, c]
    }

    pub fn contains(&self, p: Point) -> bool {
        p.iter().all(|&x| x >= self.min && x <= self.max)
    }

    pub fn clamp(&self, p: Point) -> Point {
        [p[0].clamp(self.min, self.max), p[1].clamp(self.min, self.max)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub num_aps: usize,
    pub num_users: usize,
    pub array_h: usize,
    pub array_v: usize,
    pub wavelength: f64,
    pub ap_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
    /// Local antenna coordinates `t_mn`, one list of `N` points per AP.
    pub ap_antenna_offsets: Vec<Vec<Point>>,
    pub regions: Vec<FasRegion>,
}

impl Topology {
    pub fn antennas_per_ap(&self) -> usize {
        self.array_h * self.array_v
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.antennas_per_ap();
        if n == 0 || self.num_aps == 0 || self.num_users == 0 {
            return Err(invalid("topology needs at least one AP, user and antenna"));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(invalid("wavelength must be positive"));
        }
        if self.ap_positions.len() != self.num_aps
            || self.ap_antenna_offsets.len() != self.num_aps
            || self.user_positions.len() != self.num_users
            || self.regions.len() != self.num_users
        {
            return Err(Error::DimensionMismatch("topology lists disagree with M/K".into()));
        }
        if self.ap_antenna_offsets.iter().any(|o| o.len() != n) {
            return Err(Error::DimensionMismatch("each AP needs N antenna offsets".into()));
        }
        for r in &self.regions {
            if !(r.min <= r.max) || !r.min.is_finite() || !r.max.is_finite() {
                return Err(invalid("FAS region needs d_min <= d_max"));
            }
        }
        let finite = |p: &Point| p.iter().all(|x| x.is_finite());
        if !self.ap_positions.iter().all(finite)
            || !self.user_positions.iter().all(finite)
            || !self.ap_antenna_offsets.iter().flatten().all(finite)
        {
            return Err(invalid("coordinates must be finite"));
        }
        Ok(())
    }
}

/// Uniform planar array on a half-wavelength grid centred on the AP reference point.
pub fn half_wavelength_upa(array_h: usize, array_v: usize, wavelength: f64) -> Vec<Point> {
    let d = 0.5 * wavelength;
    let ch = (array_h as f64 - 1.0) / 2.0;
    let cv = (array_v as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(array_h * array_v);
    for nv in 0..array_v {
        for nh in 0..array_h {
            out.push([(nh as f64 - ch) * d, (nv as f64 - cv) * d]);
        }
    }
    out
}

/// Elevation/azimuth pairs of the paths on one side of a link.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathAngles {
    pub elevation: Vec<f64>,
    pub azimuth: Vec<f64>,
}

impl PathAngles {
    pub fn len(&self) -> usize {
        self.elevation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elevation.is_empty()
    }

    /// `sin(theta) cos(phi)` per path, the x-direction phase slope.
    pub fn x_projection(&self) -> Vec<f64> {
        self.elevation
            .iter()
            .zip(&self.azimuth)
            .map(|(t, p)| t.sin() * p.cos())
            .collect()
    }

    /// `cos(theta)` per path, the y-direction phase slope.
    pub fn y_projection(&self) -> Vec<f64> {
        self.elevation.iter().map(|t| t.cos()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub tx: PathAngles,
    pub rx: PathAngles,
    /// `L_r x L_t` path-response matrix.
    pub path_response: DMatrix<Complex64>,
    pub large_scale: f64,
}

/// Per-link multipath description, indexed `m * K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry {
    pub num_aps: usize,
    pub num_users: usize,
    pub ricean_k: f64,
    pub links: Vec<Link>,
}

impl LinkGeometry {
    pub fn link(&self, m: usize, k: usize) -> &Link {
        &self.links[m * self.num_users + k]
    }
}

/// FAS positions in local coordinates, one per user.
#[derive(Debug, Clone, PartialEq)]
pub struct FasPositions(pub Vec<Point>);

impl FasPositions {
    pub fn centers(topology: &Topology) -> Self {
        Self(topology.regions.iter().map(FasRegion::center).collect())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn from_flat(x: &[f64]) -> Self {
        Self(x.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }
}

fn phase_vector(offset: Point, angles: &PathAngles, wavelength: f64) -> Result<DVector<Complex64>> {
    if !(wavelength > 0.0) {
        return Err(invalid(format!("wavelength must be positive, got {wavelength}")));
    }
    if !(offset[0].is_finite() && offset[1].is_finite()) {
        return Err(invalid("antenna offset must be finite"));
    }
    if angles.elevation.len() != angles.azimuth.len() {
        return Err(Error::DimensionMismatch("elevation/azimuth lengths differ".into()));
    }
    let k = 2.0 * PI / wavelength;
    Ok(DVector::from_iterator(
        angles.len(),
        angles.elevation.iter().zip(&angles.azimuth).map(|(t, p)| {
            let rho = offset[0] * t.sin() * p.cos() + offset[1] * t.cos();
            Complex64::from_polar(1.0, k * rho)
        }),
    ))
}

/// Receive field response of one AP antenna at local offset `t_mn`.
pub fn rx_field_response(offset: Point, rx: &PathAngles, wavelength: f64) -> Result<DVector<Complex64>> {
    phase_vector(offset, rx, wavelength)
}

/// Transmit field response of a fluid antenna at local position `u_k`.
pub fn tx_field_response(position: Point, tx: &PathAngles, wavelength: f64) -> Result<DVector<Complex64>> {
    phase_vector(position, tx, wavelength)
}

/// `h = G^H Sigma f`.
pub fn channel_vector(
    rx_response: &DMatrix<Complex64>,
    path_response: &DMatrix<Complex64>,
    tx_response: &DVector<Complex64>,
) -> Result<DVector<Complex64>> {
    if rx_response.nrows() != path_response.nrows() || path_response.ncols() != tx_response.len() {
        return Err(Error::DimensionMismatch(format!(
            "G is {}x{}, Sigma is {}x{}, f has {} entries",
            rx_response.nrows(),
            rx_response.ncols(),
            path_response.nrows(),
            path_response.ncols(),
            tx_response.len()
        )));
    }
    Ok(rx_response.adjoint() * (path_response * tx_response))
}

/// Uplink channels of every link at one set of FAS positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub num_aps: usize,
    pub num_users: usize,
    pub antennas: usize,
    /// `h_mk`, indexed `m * K + k`.
    pub h: Vec<DVector<Complex64>>,
    /// `G_mk` (`L_r x N`).
    pub rx_response: Vec<DMatrix<Complex64>>,
    /// `f_mk` (`L_t`).
    pub tx_response: Vec<DVector<Complex64>>,
}

impl ChannelSet {
    pub fn h(&self, m: usize, k: usize) -> &DVector<Complex64> {
        &self.h[m * self.num_users + k]
    }

    /// Channels of all users at AP `m`.
    pub fn at_ap(&self, m: usize) -> Vec<&DVector<Complex64>> {
        self.h[m * self.num_users..(m + 1) * self.num_users].iter().collect()
    }
}

/// Position-independent part of every link, cached for repeated channel
/// evaluation during position optimization.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub num_aps: usize,
    pub num_users: usize,
    pub antennas: usize,
    pub wavelength: f64,
    pub regions: Vec<FasRegion>,
    rx_response: Vec<DMatrix<Complex64>>,
    /// `G^H Sigma`, `N x L_t`.
    mixing: Vec<DMatrix<Complex64>>,
    tx_angles: Vec<PathAngles>,
    tx_x: Vec<Vec<f64>>,
    tx_y: Vec<Vec<f64>>,
}

impl ChannelModel {
    pub fn new(topology: &Topology, geometry: &LinkGeometry) -> Result<Self> {
        topology.validate()?;
        if geometry.num_aps != topology.num_aps
            || geometry.num_users != topology.num_users
            || geometry.links.len() != topology.num_aps * topology.num_users
        {
            return Err(Error::DimensionMismatch("geometry does not match topology".into()));
        }
        let n = topology.antennas_per_ap();
        let lambda = topology.wavelength;
        let mut rx_response = Vec::with_capacity(geometry.links.len());
        let mut mixing = Vec::with_capacity(geometry.links.len());
        for m in 0..topology.num_aps {
            for k in 0..topology.num_users {
                let link = geometry.link(m, k);
                if link.path_response.nrows() != link.rx.len() || link.path_response.ncols() != link.tx.len() {
                    return Err(Error::DimensionMismatch(format!("path response of link ({m},{k})")));
                }
                let mut g = DMatrix::zeros(link.rx.len(), n);
                for (col, offset) in topology.ap_antenna_offsets[m].iter().enumerate() {
                    g.set_column(col, &rx_field_response(*offset, &link.rx, lambda)?);
                }
                mixing.push(g.adjoint() * &link.path_response);
                rx_response.push(g);
            }
        }
        let tx_angles: Vec<PathAngles> = geometry.links.iter().map(|l| l.tx.clone()).collect();
        Ok(Self {
            num_aps: topology.num_aps,
            num_users: topology.num_users,
            antennas: n,
            wavelength: lambda,
            regions: topology.regions.clone(),
            rx_response,
            mixing,
            tx_x: tx_angles.iter().map(PathAngles::x_projection).collect(),
            tx_y: tx_angles.iter().map(PathAngles::y_projection).collect(),
            tx_angles,
        })
    }

    fn index(&self, m: usize, k: usize) -> usize {
        m * self.num_users + k
    }

    fn tx_response(&self, idx: usize, u: Point) -> DVector<Complex64> {
        let kw = 2.0 * PI / self.wavelength;
        DVector::from_iterator(
            self.tx_x[idx].len(),
            self.tx_x[idx]
                .iter()
                .zip(&self.tx_y[idx])
                .map(|(sx, sy)| Complex64::from_polar(1.0, kw * (u[0] * sx + u[1] * sy))),
        )
    }

    /// `h_mk(u_k)`.
    pub fn channel(&self, m: usize, k: usize, u: Point) -> DVector<Complex64> {
        let idx = self.index(m, k);
        &self.mixing[idx] * self.tx_response(idx, u)
    }

    /// `(d h_mk / d x_k, d h_mk / d y_k)` at `u`.
    pub fn channel_gradient(&self, m: usize, k: usize, u: Point) -> (DVector<Complex64>, DVector<Complex64>) {
        let idx = self.index(m, k);
        let f = self.tx_response(idx, u);
        let kw = 2.0 * PI / self.wavelength;
        let j = Complex64::new(0.0, kw);
        let dfx = DVector::from_iterator(f.len(), f.iter().zip(&self.tx_x[idx]).map(|(v, s)| j * *s * v));
        let dfy = DVector::from_iterator(f.len(), f.iter().zip(&self.tx_y[idx]).map(|(v, s)| j * *s * v));
        (&self.mixing[idx] * dfx, &self.mixing[idx] * dfy)
    }

    /// Every antenna at the centre of its region.
    pub fn centers(&self) -> FasPositions {
        FasPositions(self.regions.iter().map(FasRegion::center).collect())
    }

    pub fn tx_angles(&self, m: usize, k: usize) -> &PathAngles {
        &self.tx_angles[self.index(m, k)]
    }

    /// All channels at the given positions.
    pub fn channels(&self, positions: &FasPositions) -> Result<ChannelSet> {
        if positions.0.len() != self.num_users {
            return Err(Error::DimensionMismatch("one FAS position per user is required".into()));
        }
        for (k, (p, r)) in positions.0.iter().zip(&self.regions).enumerate() {
            if !r.contains(*p) {
                return Err(invalid(format!("FAS position of user {k} lies outside its region")));
            }
        }
        Ok(self.channels_unchecked(positions))
    }

    /// As [`channels`](Self::channels) without the region check; used for
    /// extrapolated points and finite differences.
    pub fn channels_unchecked(&self, positions: &FasPositions) -> ChannelSet {
        let mut h = Vec::with_capacity(self.num_aps * self.num_users);
        let mut tx = Vec::with_capacity(self.num_aps * self.num_users);
        for m in 0..self.num_aps {
            for (k, &u) in positions.0.iter().enumerate() {
                let idx = self.index(m, k);
                let f = self.tx_response(idx, u);
                h.push(&self.mixing[idx] * &f);
                tx.push(f);
            }
        }
        ChannelSet {
            num_aps: self.num_aps,
            num_users: self.num_users,
            antennas: self.antennas,
            h,
            rx_response: self.rx_response.clone(),
            tx_response: tx,
        }
    }
}

/// Channels at the given FAS positions.
pub fn build_channels(topology: &Topology, geometry: &LinkGeometry, positions: &FasPositions) -> Result<ChannelSet> {
    ChannelModel::new(topology, geometry)?.channels(positions)
}

/// Three-slope path-loss constants; distances in meters, heights in meters,
/// carrier in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathLossModel {
    pub carrier_hz: f64,
    pub ap_height_m: f64,
    pub user_height_m: f64,
    pub d0_m: f64,
    pub d1_m: f64,
    /// Log-normal shadowing standard deviation in dB; 0 disables it.
    pub shadow_sigma_db: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self {
            carrier_hz: 2.0e9,
            ap_height_m: 15.0,
            user_height_m: 1.65,
            d0_m: 10.0,
            d1_m: 50.0,
            shadow_sigma_db: 0.0,
        }
    }
}

impl PathLossModel {
    /// Hata-COST231 constant `L` in dB.
    pub fn hata_constant_db(&self) -> f64 {
        let f = self.carrier_hz / 1e6;
        let lf = f.log10();
        46.3 + 33.9 * lf - 13.82 * self.ap_height_m.log10() - (1.1 * lf - 0.7) * self.user_height_m
            + (1.56 * lf - 0.8)
    }

    /// Path loss in dB (negative) at horizontal distance `d` meters, without shadowing.
    pub fn path_loss_db(&self, d: f64) -> f64 {
        let l = self.hata_constant_db();
        let km = |x: f64| x / 1000.0;
        let (d0, d1) = (km(self.d0_m), km(self.d1_m));
        let d = km(d);
        if d > d1 {
            -l - 35.0 * d.log10()
        } else if d > d0 {
            -l - 15.0 * d1.log10() - 20.0 * d.log10()
        } else {
            -l - 15.0 * d1.log10() - 20.0 * d0.log10()
        }
    }

    /// Linear large-scale fading coefficient.
    pub fn large_scale(&self, d: f64, shadow_db: f64) -> f64 {
        10f64.powf((self.path_loss_db(d) + shadow_db) / 10.0)
    }
}

/// Parameters of the random scenario generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub num_aps: usize,
    pub num_users: usize,
    pub array_h: usize,
    pub array_v: usize,
    pub area_side_m: f64,
    pub num_paths: usize,
    pub ricean_k: f64,
    /// FAS region side as a multiple of the wavelength.
    pub region_side_wavelengths: f64,
    pub path_loss: PathLossModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_aps: 20,
            num_users: 10,
            array_h: 2,
            array_v: 2,
            area_side_m: 200.0,
            num_paths: 10,
            ricean_k: 1.0,
            region_side_wavelengths: 1.0,
            path_loss: PathLossModel::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.path_loss.carrier_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_aps == 0 || self.num_users == 0 || self.array_h == 0 || self.array_v == 0 {
            return Err(invalid("M, K, N_h and N_v must be positive"));
        }
        if !(self.area_side_m > 0.0) {
            return Err(invalid("area side must be positive"));
        }
        if self.num_paths == 0 {
            return Err(invalid("at least one path is required"));
        }
        if !(self.ricean_k >= 0.0) {
            return Err(invalid("Ricean factor must be non-negative"));
        }
        if self.num_paths < 2 && self.ricean_k.is_finite() {
            return Err(invalid("L >= 2 is required unless the Ricean factor is infinite"));
        }
        if !(self.region_side_wavelengths >= 0.0) {
            return Err(invalid("region side must be non-negative"));
        }
        let pl = &self.path_loss;
        if !(pl.carrier_hz > 0.0 && pl.ap_height_m > 0.0 && pl.user_height_m > 0.0) {
            return Err(invalid("carrier and antenna heights must be positive"));
        }
        if !(pl.d0_m > 0.0 && pl.d1_m > pl.d0_m) {
            return Err(invalid("path-loss breakpoints need 0 < d0 < d1"));
        }
        if !(pl.shadow_sigma_db >= 0.0) {
            return Err(invalid("shadowing deviation must be non-negative"));
        }
        Ok(())
    }

    /// Variance of each diagonal path gain, normalized so the sum is 1.
    pub fn path_variances(&self) -> Vec<f64> {
        let l = self.num_paths;
        if !self.ricean_k.is_finite() {
            let mut v = vec![0.0; l];
            v[0] = 1.0;
            return v;
        }
        let kappa = self.ricean_k;
        (0..l)
            .map(|i| {
                if i == 0 {
                    kappa / (kappa + 1.0)
                } else {
                    1.0 / ((kappa + 1.0) * (l as f64 - 1.0))
                }
            })
            .collect()
    }
}

fn uniform_angles<R: Rng>(rng: &mut R, l: usize) -> PathAngles {
    let mut draw = || rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
    let elevation = (0..l).map(|_| draw()).collect();
    let azimuth = (0..l).map(|_| draw()).collect();
    PathAngles { elevation, azimuth }
}

/// Draws a circularly symmetric complex Gaussian with the given variance.
pub fn complex_gaussian<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let sd = (0.5 * variance).sqrt();
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    Complex64::new(sd * n.sample(rng), sd * n.sample(rng))
}

/// Random topology and link geometry; identical seeds give identical output.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<(Topology, LinkGeometry)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.area_side_m;
    let lambda = config.wavelength();
    let point = |rng: &mut ChaCha8Rng| [rng.random_range(0.0..side), rng.random_range(0.0..side)];
    let ap_positions: Vec<Point> = (0..config.num_aps).map(|_| point(&mut rng)).collect();
    let user_positions: Vec<Point> = (0..config.num_users).map(|_| point(&mut rng)).collect();
    let offsets = half_wavelength_upa(config.array_h, config.array_v, lambda);
    let region = FasRegion::centered(config.region_side_wavelengths * lambda);
    let topology = Topology {
        num_aps: config.num_aps,
        num_users: config.num_users,
        array_h: config.array_h,
        array_v: config.array_v,
        wavelength: lambda,
        ap_antenna_offsets: vec![offsets; config.num_aps],
        regions: vec![region; config.num_users],
        ap_positions,
        user_positions,
    };

    let variances = config.path_variances();
    let shadow = Normal::new(0.0, config.path_loss.shadow_sigma_db).map_err(|e| invalid(e.to_string()))?;
    let l = config.num_paths;
    let mut links = Vec::with_capacity(config.num_aps * config.num_users);
    for ap in &topology.ap_positions {
        for user in &topology.user_positions {
            let d = ((ap[0] - user[0]).powi(2) + (ap[1] - user[1]).powi(2)).sqrt();
            let shadow_db = if config.path_loss.shadow_sigma_db > 0.0 { shadow.sample(&mut rng) } else { 0.0 };
            let beta = config.path_loss.large_scale(d, shadow_db);
            let tx = uniform_angles(&mut rng, l);
            let rx = uniform_angles(&mut rng, l);
            let mut sigma = DMatrix::zeros(l, l);
            for (i, v) in variances.iter().enumerate() {
                sigma[(i, i)] = complex_gaussian(&mut rng, beta * v);
            }
            links.push(Link { tx, rx, path_response: sigma, large_scale: beta });
        }
    }
    let geometry = LinkGeometry {
        num_aps: config.num_aps,
        num_users: config.num_users,
        ricean_k: config.ricean_k,
        links,
    };
    Ok((topology, geometry))
}
