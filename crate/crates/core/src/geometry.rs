//! Room discretization, Cartesian/DOA conversion and test-position grids.
//!
//! Clusters are indexed in x-fastest lattice order:
//! `index = i + nx * (j + ny * k)`. Model files rely on this order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

const AXES: [char; 3] = ['x', 'y', 'z'];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[inline]
pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Shoebox room plus the propagation constants shared by every stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: Vec3,
    pub sound_speed: f64,
    pub sample_rate: u32,
}

impl RoomSpec {
    pub const DEFAULT_SOUND_SPEED: f64 = 343.0;
    pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

    pub fn new(dims: Vec3, sound_speed: f64, sample_rate: u32) -> Result<Self> {
        let room = RoomSpec {
            dims,
            sound_speed,
            sample_rate,
        };
        room.validate()?;
        Ok(room)
    }

    /// The 4 m cube used throughout the experiments, at 343 m/s and 8 kHz.
    pub fn meeting_room() -> Self {
        RoomSpec {
            dims: [4.0, 4.0, 4.0],
            sound_speed: Self::DEFAULT_SOUND_SPEED,
            sample_rate: Self::DEFAULT_SAMPLE_RATE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            return Err(Error::invalid(
                "room",
                format!("dimensions must be positive, got {:?}", self.dims),
            ));
        }
        if !(self.sound_speed.is_finite() && self.sound_speed > 0.0) {
            return Err(Error::invalid("room", "sound speed must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid("room", "sample rate must be positive"));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn surface_area(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + y * z + x * z)
    }

    /// Closed-box containment.
    pub fn contains(&self, p: Vec3) -> bool {
        p.iter()
            .zip(self.dims)
            .all(|(c, d)| c.is_finite() && *c >= 0.0 && *c <= d)
    }

    pub fn contains_strictly(&self, p: Vec3) -> bool {
        p.iter()
            .zip(self.dims)
            .all(|(c, d)| c.is_finite() && *c > 0.0 && *c < d)
    }

    pub fn centroid(&self) -> Vec3 {
        [self.dims[0] / 2.0, self.dims[1] / 2.0, self.dims[2] / 2.0]
    }
}

/// A fixed set of omnidirectional microphones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicArray {
    positions: Vec<Vec3>,
    center: Vec3,
}

impl MicArray {
    pub fn new(positions: Vec<Vec3>, room: &RoomSpec) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::invalid(
                "microphone array",
                format!("need at least 2 microphones, got {}", positions.len()),
            ));
        }
        if let Some(p) = positions.iter().find(|p| !room.contains_strictly(**p)) {
            return Err(Error::OutsideRoom(*p).context("microphone position"));
        }
        let m = positions.len() as f64;
        let mut center = [0.0; 3];
        for p in &positions {
            for a in 0..3 {
                center[a] += p[a];
            }
        }
        center.iter_mut().for_each(|c| *c /= m);
        Ok(MicArray { positions, center })
    }

    /// Six microphones, two per axis, 0.4 m apart around the room centroid.
    pub fn six_mic_cross(room: &RoomSpec) -> Result<Self> {
        let [cx, cy, cz] = room.centroid();
        let h = 0.2;
        Self::new(
            vec![
                [cx - h, cy, cz],
                [cx + h, cy, cz],
                [cx, cy - h, cz],
                [cx, cy + h, cz],
                [cx, cy, cz - h],
                [cx, cy, cz + h],
            ],
            room,
        )
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Largest microphone-to-microphone distance.
    pub fn aperture(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                best = best.max(distance(*a, *b));
            }
        }
        best
    }
}

/// Partition of the room into `K` equal axis-aligned boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterGrid {
    pub room_dims: Vec3,
    pub cluster_dim: Vec3,
    pub counts: [usize; 3],
}

/// Divides the room into clusters of size `cluster_dim`. Every room dimension
/// must be an exact multiple of the matching cluster dimension.
pub fn make_cluster_grid(room: &RoomSpec, cluster_dim: Vec3) -> Result<ClusterGrid> {
    room.validate()?;
    let mut counts = [0usize; 3];
    for a in 0..3 {
        let (d, c) = (room.dims[a], cluster_dim[a]);
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid(
                "cluster size",
                format!("must be positive along {}, got {c}", AXES[a]),
            ));
        }
        let ratio = d / c;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            let whole = ratio.floor();
            return Err(Error::NotDivisible {
                axis: AXES[a],
                room: d,
                cluster: c,
                remainder: d - whole * c,
            });
        }
        counts[a] = n as usize;
    }
    Ok(ClusterGrid {
        room_dims: room.dims,
        cluster_dim,
        counts,
    })
}

impl ClusterGrid {
    pub fn k(&self) -> usize {
        self.counts.iter().product()
    }

    /// Longest diagonal of one cluster.
    pub fn diagonal(&self) -> f64 {
        norm(self.cluster_dim)
    }

    pub fn lattice_of(&self, index: usize) -> Result<[usize; 3]> {
        if index >= self.k() {
            return Err(Error::ClusterIndex {
                index,
                k: self.k(),
            });
        }
        let [nx, ny, _] = self.counts;
        Ok([index % nx, (index / nx) % ny, index / (nx * ny)])
    }

    pub fn index_of(&self, cell: [usize; 3]) -> usize {
        let [nx, ny, _] = self.counts;
        cell[0] + nx * (cell[1] + ny * cell[2])
    }

    /// Cluster containing `p`. Points on a shared face go to the lower cell.
    pub fn cluster_of(&self, p: Vec3) -> Result<usize> {
        let mut cell = [0usize; 3];
        for a in 0..3 {
            let c = p[a];
            if !(c.is_finite() && c >= 0.0 && c <= self.room_dims[a]) {
                return Err(Error::OutsideRoom(p));
            }
            let i = (c / self.cluster_dim[a]).ceil() as i64 - 1;
            cell[a] = i.clamp(0, self.counts[a] as i64 - 1) as usize;
        }
        Ok(self.index_of(cell))
    }

    pub fn center_of(&self, index: usize) -> Result<Vec3> {
        let cell = self.lattice_of(index)?;
        Ok(std::array::from_fn(|a| {
            (cell[a] as f64 + 0.5) * self.cluster_dim[a]
        }))
    }

    /// The 8 box corners. Bit `a` of the corner number selects the upper
    /// face along axis `a`.
    pub fn vertexes_of(&self, index: usize) -> Result<[Vec3; 8]> {
        let cell = self.lattice_of(index)?;
        Ok(std::array::from_fn(|t| {
            std::array::from_fn(|a| {
                let upper = (t >> a) & 1;
                (cell[a] + upper) as f64 * self.cluster_dim[a]
            })
        }))
    }
}

/// Direction of arrival relative to the array center, in degrees.
///
/// Elevation is measured up from the horizontal plane through the center,
/// azimuth from +x toward +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doa {
    pub elevation: f64,
    pub azimuth: f64,
    pub range: f64,
}

/// Wraps an angle in degrees into (-180, 180].
pub fn wrap_degrees(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

impl Doa {
    pub fn new(elevation: f64, azimuth: f64, range: f64) -> Result<Self> {
        if !(elevation.is_finite() && (-90.0..=90.0).contains(&elevation)) {
            return Err(Error::invalid(
                "doa",
                format!("elevation {elevation} outside [-90, 90]"),
            ));
        }
        if !azimuth.is_finite() {
            return Err(Error::invalid("doa", "azimuth must be finite"));
        }
        if !(range.is_finite() && range >= 0.0) {
            return Err(Error::invalid("doa", format!("range {range} is negative")));
        }
        Ok(Doa {
            elevation,
            azimuth: wrap_degrees(azimuth),
            range,
        })
    }

    pub fn is_pole(&self) -> bool {
        self.elevation.abs() >= 90.0
    }
}

pub fn cartesian_to_doa(p: Vec3, center: Vec3) -> Result<Doa> {
    let [dx, dy, dz] = sub(p, center);
    let r = norm([dx, dy, dz]);
    if !r.is_finite() {
        return Err(Error::invalid("doa", "non-finite coordinates"));
    }
    if r == 0.0 {
        return Err(Error::UndefinedDoa);
    }
    let horizontal = dx.hypot(dy);
    let elevation = dz.atan2(horizontal).to_degrees();
    let azimuth = if horizontal == 0.0 {
        0.0
    } else {
        wrap_degrees(dy.atan2(dx).to_degrees())
    };
    Ok(Doa {
        elevation,
        azimuth,
        range: r,
    })
}

pub fn doa_to_cartesian(d: Doa, center: Vec3) -> Vec3 {
    let (theta, phi) = (d.elevation.to_radians(), d.azimuth.to_radians());
    [
        center[0] + d.range * theta.cos() * phi.cos(),
        center[1] + d.range * theta.cos() * phi.sin(),
        center[2] + d.range * theta.sin(),
    ]
}

/// Spherical shells of test positions around a center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestGridSpec {
    pub radii: Vec<f64>,
    pub n_azimuth: usize,
    pub azimuth_span: (f64, f64),
    pub n_elevation: usize,
    pub elevation_span: (f64, f64),
}

impl Default for TestGridSpec {
    /// 3 radii x 21 azimuths x 9 elevations = 567 positions.
    fn default() -> Self {
        TestGridSpec {
            radii: vec![0.5, 1.0, 1.5],
            n_azimuth: 21,
            azimuth_span: (-160.0, 160.0),
            n_elevation: 9,
            elevation_span: (-60.0, 60.0),
        }
    }
}

fn even_steps(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl TestGridSpec {
    pub fn azimuths(&self) -> Vec<f64> {
        even_steps(self.n_azimuth, self.azimuth_span)
    }

    pub fn elevations(&self) -> Vec<f64> {
        even_steps(self.n_elevation, self.elevation_span)
    }

    pub fn len(&self) -> usize {
        self.radii.len() * self.n_azimuth * self.n_elevation
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generates test positions ordered by radius, then elevation, then azimuth.
/// Each point is returned with the DOA it was generated from.
pub fn test_grid(spec: &TestGridSpec, center: Vec3, room: &RoomSpec) -> Result<Vec<(Vec3, Doa)>> {
    let mut out = Vec::with_capacity(spec.len());
    for &r in &spec.radii {
        for &el in &spec.elevations() {
            for &az in &spec.azimuths() {
                let doa = Doa::new(el, az, r)?;
                let p = doa_to_cartesian(doa, center);
                if !room.contains_strictly(p) {
                    return Err(Error::OutsideRoom(p).context(format!(
                        "test position r={r} elevation={el} azimuth={az}"
                    )));
                }
                out.push((p, doa));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(cd: f64) -> ClusterGrid {
        make_cluster_grid(&RoomSpec::meeting_room(), [cd; 3]).unwrap()
    }

    #[test]
    fn cluster_counts() {
        assert_eq!(grid(0.25).k(), 4096);
        assert_eq!(grid(0.5).k(), 512);
        let unit = RoomSpec::new([1.0; 3], 343.0, 8000).unwrap();
        assert_eq!(make_cluster_grid(&unit, [1.0; 3]).unwrap().k(), 1);
    }

    #[test]
    fn non_divisible_reports_remainder() {
        let err = make_cluster_grid(&RoomSpec::meeting_room(), [0.3, 0.25, 0.25]).unwrap_err();
        match err {
            Error::NotDivisible {
                axis, remainder, ..
            } => {
                assert_eq!(axis, 'x');
                assert_abs_diff_eq!(remainder, 0.1, epsilon = 1e-9);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn cluster_of_first_cell_and_faces() {
        let g = grid(0.25);
        assert_eq!(g.cluster_of([0.1, 0.1, 0.1]).unwrap(), 0);
        // shared face between cells 0 and 1 along x
        assert_eq!(g.cluster_of([0.25, 0.1, 0.1]).unwrap(), 0);
        assert_eq!(g.cluster_of([0.0, 0.0, 0.0]).unwrap(), 0);
        assert_eq!(g.cluster_of([4.0, 4.0, 4.0]).unwrap(), g.k() - 1);
        assert!(matches!(
            g.cluster_of([4.01, 1.0, 1.0]),
            Err(Error::OutsideRoom(_))
        ));
        assert!(g.cluster_of([-0.01, 1.0, 1.0]).is_err());
    }

    #[test]
    fn x_fastest_order() {
        let g = grid(0.25);
        assert_eq!(g.lattice_of(1).unwrap(), [1, 0, 0]);
        assert_eq!(g.lattice_of(16).unwrap(), [0, 1, 0]);
        assert_eq!(g.lattice_of(256).unwrap(), [0, 0, 1]);
        assert!(g.lattice_of(4096).is_err());
    }

    #[test]
    fn center_and_vertexes_of_first_cell() {
        let g = grid(0.25);
        assert_eq!(g.center_of(0).unwrap(), [0.125; 3]);
        let v = g.vertexes_of(0).unwrap();
        for corner in v {
            assert!(corner.iter().all(|c| *c == 0.0 || *c == 0.25));
        }
        let mut sorted: Vec<_> = v.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
    }

    #[test]
    fn vertex_mean_is_center_everywhere() {
        let g = grid(0.5);
        for i in 0..g.k() {
            let v = g.vertexes_of(i).unwrap();
            let c = g.center_of(i).unwrap();
            for a in 0..3 {
                let mean = v.iter().map(|p| p[a]).sum::<f64>() / 8.0;
                assert_abs_diff_eq!(mean, c[a], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn center_round_trip_on_random_clusters() {
        use rand::{Rng, SeedableRng};
        let g = grid(0.25);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let c = rng.random_range(0..g.k());
            assert_eq!(g.cluster_of(g.center_of(c).unwrap()).unwrap(), c);
        }
    }

    #[test]
    fn doa_axes_and_pole() {
        let c = [2.0; 3];
        let d = cartesian_to_doa([3.0, 2.0, 2.0], c).unwrap();
        assert_eq!((d.elevation, d.azimuth, d.range), (0.0, 0.0, 1.0));
        let d = cartesian_to_doa([2.0, 3.0, 2.0], c).unwrap();
        assert_abs_diff_eq!(d.azimuth, 90.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.elevation, 0.0, epsilon = 1e-12);
        let d = cartesian_to_doa([2.0, 2.0, 3.0], c).unwrap();
        assert_eq!((d.elevation, d.azimuth, d.range), (90.0, 0.0, 1.0));
        assert!(matches!(cartesian_to_doa(c, c), Err(Error::UndefinedDoa)));
    }

    #[test]
    fn doa_to_cartesian_examples() {
        let c = [2.0; 3];
        let p = doa_to_cartesian(Doa::new(0.0, 0.0, 1.0).unwrap(), c);
        assert_abs_diff_eq!(p[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 2.0, epsilon = 1e-12);
        let p = doa_to_cartesian(Doa::new(-90.0, 37.0, 0.5).unwrap(), c);
        assert_abs_diff_eq!(p[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn azimuth_normalization() {
        assert_eq!(wrap_degrees(-180.0), 180.0);
        assert_eq!(wrap_degrees(180.0), 180.0);
        assert_eq!(wrap_degrees(540.0), 180.0);
        assert_abs_diff_eq!(wrap_degrees(-190.0), 170.0, epsilon = 1e-12);
        let d = cartesian_to_doa([1.0, 2.0, 2.0], [2.0; 3]).unwrap();
        assert_eq!(d.azimuth, 180.0);
    }

    #[test]
    fn paper_test_grids() {
        let room = RoomSpec::meeting_room();
        let spec = TestGridSpec::default();
        let pts = test_grid(&spec, room.centroid(), &room).unwrap();
        assert_eq!(pts.len(), 567);
        let az = spec.azimuths();
        let el = spec.elevations();
        assert_abs_diff_eq!(az[1] - az[0], 16.0, epsilon = 1e-12);
        assert_abs_diff_eq!(el[1] - el[0], 15.0, epsilon = 1e-12);
        let reduced = TestGridSpec {
            radii: vec![0.5, 1.5],
            ..TestGridSpec::default()
        };
        assert_eq!(test_grid(&reduced, room.centroid(), &room).unwrap().len(), 378);
    }

    #[test]
    fn test_grid_rejects_points_outside() {
        let room = RoomSpec::meeting_room();
        let spec = TestGridSpec {
            radii: vec![2.5],
            ..TestGridSpec::default()
        };
        let err = test_grid(&spec, room.centroid(), &room).unwrap_err();
        assert_eq!(err.kind(), "outside-room");
        assert!(err.to_string().contains("r=2.5"));
    }

    #[test]
    fn mic_array_validation() {
        let room = RoomSpec::meeting_room();
        let arr = MicArray::six_mic_cross(&room).unwrap();
        assert_eq!(arr.center(), [2.0, 2.0, 2.0]);
        assert_abs_diff_eq!(arr.aperture(), 0.4, epsilon = 1e-12);
        assert!(MicArray::new(vec![[1.0; 3]], &room).is_err());
        assert!(MicArray::new(vec![[1.0; 3], [4.0, 1.0, 1.0]], &room).is_err());
    }

    proptest! {
        #[test]
        fn doa_round_trip(el in -89.9f64..89.9, az in -179.9f64..180.0, r in 0.01f64..3.0) {
            let c = [2.0, 1.5, 2.5];
            let d = Doa::new(el, az, r).unwrap();
            let back = cartesian_to_doa(doa_to_cartesian(d, c), c).unwrap();
            prop_assert!((back.elevation - el).abs() <= 1e-9 * el.abs().max(1.0));
            prop_assert!(wrap_degrees(back.azimuth - az).abs() <= 1e-9 * az.abs().max(1.0));
            prop_assert!((back.range - r).abs() <= 1e-9 * r);
        }

        #[test]
        fn cluster_map_is_a_partition(x in 0.0f64..=4.0, y in 0.0f64..=4.0, z in 0.0f64..=4.0) {
            let g = grid(0.25);
            let p = [x, y, z];
            let c = g.cluster_of(p).unwrap();
            prop_assert!(c < g.k());
            let center = g.center_of(c).unwrap();
            prop_assert!(distance(center, p) <= g.diagonal() / 2.0 + 1e-12);
        }

        #[test]
        fn doa_ranges(x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
            prop_assume!(norm([x, y, z]) > 1e-9);
            let d = cartesian_to_doa([x, y, z], [0.0; 3]).unwrap();
            prop_assert!((-90.0..=90.0).contains(&d.elevation));
            prop_assert!(d.azimuth > -180.0 && d.azimuth <= 180.0);
        }
    }
}
