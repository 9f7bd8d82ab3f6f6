//! Benchmark cavities, materials, basis groups and reference spectra.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assembly::Tile;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const BUILTIN_NAMES: [&str; 5] = ["square", "lshape2d", "inhomogeneous", "cube", "lshape3d"];

const LSHAPE2D_REFERENCE: [f64; 5] = [
    1.47562182408,
    3.53403136678,
    9.86960440109,
    9.86960440109,
    11.3894793979,
];

const INHOMOGENEOUS_REFERENCE: [f64; 10] = [
    3.317548763415,
    3.366324157260,
    6.186389562488,
    13.92632333103,
    15.08299096123,
    15.77886590819,
    18.64329693686,
    25.79753111031,
    29.85240067684,
    30.53785871253,
];

const LSHAPE3D_REFERENCE: [f64; 9] = [
    9.63972384472,
    11.3452262252,
    13.4036357679,
    15.1972519265,
    19.5093282458,
    19.7392088022,
    19.7392088022,
    19.7392088022,
    21.2590837990,
];

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileSpec {
    #[serde(default)]
    pub name: String,
    pub bounds: Vec<[f64; 2]>,
    #[serde(default = "one")]
    pub epsilon: f64,
    #[serde(default = "one")]
    pub mu: f64,
}

/// Support box of one basis group; must be a union of tiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    #[serde(default)]
    pub name: String,
    pub bounds: Vec<[f64; 2]>,
    /// Overrides the configured rank for this group.
    #[serde(default)]
    pub rank: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Eigenvalues of a homogeneous box, enumerated exactly.
    ClosedForm,
    /// Embedded benchmark constants.
    Table,
    #[default]
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub dim: usize,
    pub tiles: Vec<TileSpec>,
    pub groups: Vec<GroupSpec>,
    /// Compact-support groups instead of one boundary-masked box.
    #[serde(default)]
    pub decomposed: bool,
    #[serde(default)]
    pub reference: ReferenceKind,
    /// Used when `reference` is `table` and the domain is not builtin.
    #[serde(default)]
    pub reference_values: Vec<f64>,
}

fn tile(name: &str, bounds: &[[f64; 2]], epsilon: f64) -> TileSpec {
    TileSpec {
        name: name.into(),
        bounds: bounds.to_vec(),
        epsilon,
        mu: 1.0,
    }
}

fn group(name: &str, bounds: &[[f64; 2]]) -> GroupSpec {
    GroupSpec {
        name: name.into(),
        bounds: bounds.to_vec(),
        rank: None,
    }
}

fn lshape_tiles_2d() -> Vec<TileSpec> {
    vec![
        tile("omega1", &[[0.0, 1.0], [0.0, 1.0]], 1.0),
        tile("omega2", &[[-1.0, 0.0], [0.0, 1.0]], 1.0),
        tile("omega3", &[[-1.0, 0.0], [-1.0, 0.0]], 1.0),
    ]
}

fn lshape_groups_2d() -> Vec<GroupSpec> {
    vec![
        group("omega1", &[[0.0, 1.0], [0.0, 1.0]]),
        group("omega2", &[[-1.0, 0.0], [0.0, 1.0]]),
        group("omega3", &[[-1.0, 0.0], [-1.0, 0.0]]),
        group("omega4", &[[-1.0, 1.0], [0.0, 1.0]]),
        group("omega5", &[[-1.0, 0.0], [-1.0, 1.0]]),
    ]
}

fn extrude<T: Clone>(items: Vec<T>, f: impl Fn(&mut T)) -> Vec<T> {
    items
        .into_iter()
        .map(|mut t| {
            f(&mut t);
            t
        })
        .collect()
}

impl DomainSpec {
    pub fn builtin(name: &str) -> Result<Self> {
        let spec = match name {
            "square" => DomainSpec {
                name: name.into(),
                dim: 2,
                tiles: vec![tile("omega", &[[0.0, 1.0], [0.0, 1.0]], 1.0)],
                groups: vec![group("omega", &[[0.0, 1.0], [0.0, 1.0]])],
                decomposed: false,
                reference: ReferenceKind::ClosedForm,
                reference_values: Vec::new(),
            },
            "cube" => DomainSpec {
                name: name.into(),
                dim: 3,
                tiles: vec![tile("omega", &[[0.0, 1.0]; 3], 1.0)],
                groups: vec![group("omega", &[[0.0, 1.0]; 3])],
                decomposed: false,
                reference: ReferenceKind::ClosedForm,
                reference_values: Vec::new(),
            },
            "lshape2d" => DomainSpec {
                name: name.into(),
                dim: 2,
                tiles: lshape_tiles_2d(),
                groups: lshape_groups_2d(),
                decomposed: true,
                reference: ReferenceKind::Table,
                reference_values: Vec::new(),
            },
            "inhomogeneous" => DomainSpec {
                name: name.into(),
                dim: 2,
                tiles: vec![
                    tile("omega1", &[[0.0, 1.0], [0.0, 1.0]], 0.5),
                    tile("omega2", &[[-1.0, 0.0], [0.0, 1.0]], 1.0),
                    tile("omega3", &[[-1.0, 0.0], [-1.0, 0.0]], 0.5),
                    tile("omega4", &[[0.0, 1.0], [-1.0, 0.0]], 1.0),
                ],
                groups: vec![
                    group("omega1", &[[0.0, 1.0], [0.0, 1.0]]),
                    group("omega2", &[[-1.0, 0.0], [0.0, 1.0]]),
                    group("omega3", &[[-1.0, 0.0], [-1.0, 0.0]]),
                    group("omega4", &[[0.0, 1.0], [-1.0, 0.0]]),
                    group("top", &[[-1.0, 1.0], [0.0, 1.0]]),
                    group("bottom", &[[-1.0, 1.0], [-1.0, 0.0]]),
                    group("left", &[[-1.0, 0.0], [-1.0, 1.0]]),
                    group("right", &[[0.0, 1.0], [-1.0, 1.0]]),
                ],
                decomposed: true,
                reference: ReferenceKind::Table,
                reference_values: Vec::new(),
            },
            "lshape3d" => DomainSpec {
                name: name.into(),
                dim: 3,
                tiles: extrude(lshape_tiles_2d(), |t| t.bounds.push([0.0, 1.0])),
                groups: extrude(lshape_groups_2d(), |g| g.bounds.push([0.0, 1.0])),
                decomposed: true,
                reference: ReferenceKind::Table,
                reference_values: Vec::new(),
            },
            other => return Err(Error::UnknownDomain(other.into())),
        };
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: DomainSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// A builtin name or a path to a JSON definition.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN_NAMES.contains(&name_or_path) {
            Self::builtin(name_or_path)
        } else if name_or_path.ends_with(".json") || Path::new(name_or_path).exists() {
            Self::load(name_or_path)
        } else {
            Err(Error::UnknownDomain(name_or_path.into()))
        }
    }

    /// Drops groups spanning more than one tile.
    pub fn without_unions(mut self) -> Self {
        let tiles = self.tiles.clone();
        self.groups
            .retain(|g| tiles.iter().filter(|t| box_inside(&t.bounds, &g.bounds)).count() <= 1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dim) {
            return Err(Error::InvalidArgument(format!("dimension {} not in {{2, 3}}", self.dim)));
        }
        if self.tiles.is_empty() || self.groups.is_empty() {
            return Err(Error::Decomposition("need at least one tile and one group".into()));
        }
        for t in &self.tiles {
            check_box(&t.bounds, self.dim)?;
            if !(t.epsilon > 0.0 && t.mu > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "tile `{}` has a non-positive material",
                    t.name
                )));
            }
        }
        for (a, ta) in self.tiles.iter().enumerate() {
            for tb in &self.tiles[a + 1..] {
                if overlap(&ta.bounds, &tb.bounds) > 0.0 {
                    return Err(Error::Decomposition(format!(
                        "tiles `{}` and `{}` overlap",
                        ta.name, tb.name
                    )));
                }
            }
        }
        for g in &self.groups {
            check_box(&g.bounds, self.dim)?;
            let covered: f64 = self
                .tiles
                .iter()
                .filter(|t| box_inside(&t.bounds, &g.bounds))
                .map(|t| volume(&t.bounds))
                .sum();
            if (covered - volume(&g.bounds)).abs() > 1e-12 * volume(&g.bounds) {
                return Err(Error::Decomposition(format!(
                    "group `{}` is not a union of tiles",
                    g.name
                )));
            }
            if g.rank == Some(0) {
                return Err(Error::InvalidArgument(format!("group `{}` has rank 0", g.name)));
            }
        }
        if !self.decomposed && self.groups.len() != 1 {
            return Err(Error::Decomposition(
                "a box domain without decomposition has exactly one group".into(),
            ));
        }
        if !self.decomposed && self.tiles.len() != 1 {
            return Err(Error::Decomposition(
                "a box domain without decomposition has exactly one tile".into(),
            ));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.tiles.iter().map(|t| volume(&t.bounds)).sum()
    }

    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        (0..self.dim)
            .map(|j| {
                self.tiles.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
                    (lo.min(t.bounds[j][0]), hi.max(t.bounds[j][1]))
                })
            })
            .collect()
    }

    /// Closed-set membership in some tile.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.tiles
            .iter()
            .any(|t| t.bounds.iter().zip(x).all(|(b, &v)| b[0] <= v && v <= b[1]))
    }

    pub fn layout_tiles<T: Real>(&self) -> Vec<Tile<T>> {
        self.tiles
            .iter()
            .map(|t| Tile {
                bounds: t.bounds.iter().map(|b| (T::lit(b[0]), T::lit(b[1]))).collect(),
                epsilon: T::lit(t.epsilon),
                mu: T::lit(t.mu),
            })
            .collect()
    }

    pub fn group_bounds<T: Real>(&self, g: usize) -> Vec<(T, T)> {
        self.groups[g]
            .bounds
            .iter()
            .map(|b| (T::lit(b[0]), T::lit(b[1])))
            .collect()
    }

    fn is_homogeneous_box(&self) -> bool {
        self.tiles.len() == 1 && self.tiles[0].epsilon == 1.0 && self.tiles[0].mu == 1.0
    }

    /// Exact eigenvalues with multiplicity for a homogeneous box.
    pub fn exact_eigenvalues(&self, count: usize) -> Result<Vec<f64>> {
        if self.reference != ReferenceKind::ClosedForm || !self.is_homogeneous_box() {
            return Err(Error::NoClosedForm(self.name.clone()));
        }
        let lengths: Vec<f64> = self.tiles[0].bounds.iter().map(|b| b[1] - b[0]).collect();
        Ok(box_eigenvalues(&lengths, count))
    }

    /// Reference eigenvalues, closed form or embedded, at most `count`.
    pub fn reference_values(&self, count: usize) -> Option<Vec<f64>> {
        match self.reference {
            ReferenceKind::ClosedForm => self.exact_eigenvalues(count).ok(),
            ReferenceKind::Table => {
                let table = reference_table(&self.name).unwrap_or(&self.reference_values);
                Some(table.iter().copied().take(count).collect())
            }
            ReferenceKind::None => None,
        }
    }
}

/// Embedded benchmark eigenvalues of a builtin domain.
pub fn reference_table(name: &str) -> Option<&'static [f64]> {
    match name {
        "lshape2d" => Some(&LSHAPE2D_REFERENCE),
        "inhomogeneous" => Some(&INHOMOGENEOUS_REFERENCE),
        "lshape3d" => Some(&LSHAPE3D_REFERENCE),
        _ => None,
    }
}

/// `π² Σ (k_i/L_i)²` over index tuples whose field is nonzero: in 2D every
/// `(i, j) ≠ 0` once; in 3D tuples with at most one zero index, twice when
/// all indices are positive.
pub fn box_eigenvalues(lengths: &[f64], count: usize) -> Vec<f64> {
    let dim = lengths.len();
    let lmax = lengths.iter().copied().fold(0.0, f64::max);
    let mut kmax = (count as f64).sqrt() as usize + 2;
    loop {
        let mut vals = Vec::new();
        let mut idx = vec![0usize; dim];
        loop {
            let zeros = idx.iter().filter(|&&k| k == 0).count();
            let mult = match (dim, zeros) {
                (2, z) if z < 2 => 1,
                (3, 0) => 2,
                (3, 1) => 1,
                _ => 0,
            };
            let lam: f64 = PI * PI
                * idx
                    .iter()
                    .zip(lengths)
                    .map(|(&k, &l)| (k as f64 / l).powi(2))
                    .sum::<f64>();
            for _ in 0..mult {
                vals.push(lam);
            }
            let mut j = 0;
            while j < dim {
                idx[j] += 1;
                if idx[j] <= kmax {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == dim {
                break;
            }
        }
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        vals.truncate(count);
        // Anything beyond the enumerated cube is at least this large.
        let bound = PI * PI * ((kmax + 1) as f64 / lmax).powi(2);
        if vals.len() == count && vals.last().is_none_or(|&v| v < bound) {
            return vals;
        }
        kmax *= 2;
    }
}

/// `|λ_nn − λ_ref| / λ_ref`.
pub fn relative_error(lambda_nn: f64, lambda_ref: f64) -> Result<f64> {
    if lambda_ref == 0.0 {
        return Err(Error::InvalidArgument("zero reference eigenvalue".into()));
    }
    Ok((lambda_nn - lambda_ref).abs() / lambda_ref.abs())
}

fn check_box(bounds: &[[f64; 2]], dim: usize) -> Result<()> {
    if bounds.len() != dim {
        return Err(Error::Decomposition("box dimension mismatch".into()));
    }
    if bounds.iter().any(|b| !(b[0] < b[1]) || !b[0].is_finite() || !b[1].is_finite()) {
        return Err(Error::Decomposition("box with an empty interval".into()));
    }
    Ok(())
}

fn volume(bounds: &[[f64; 2]]) -> f64 {
    bounds.iter().map(|b| b[1] - b[0]).product()
}

fn overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x[1].min(y[1]) - x[0].max(y[0])).max(0.0))
        .product()
}

fn box_inside(inner: &[[f64; 2]], outer: &[[f64; 2]]) -> bool {
    inner.iter().zip(outer).all(|(i, o)| o[0] <= i[0] && i[1] <= o[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for name in BUILTIN_NAMES {
            let d = DomainSpec::builtin(name).unwrap();
            d.validate().unwrap();
        }
        assert!(matches!(DomainSpec::builtin("torus"), Err(Error::UnknownDomain(_))));
    }

    #[test]
    fn builtin_contents() {
        let sq = DomainSpec::builtin("square").unwrap();
        assert_eq!(sq.tiles[0].bounds, vec![[0.0, 1.0], [0.0, 1.0]]);
        let inh = DomainSpec::builtin("inhomogeneous").unwrap();
        assert_eq!(inh.tiles[0].epsilon, 0.5);
        assert_eq!(inh.tiles[2].epsilon, 0.5);
        assert_eq!(inh.tiles[1].epsilon, 1.0);
        let l = DomainSpec::builtin("lshape2d").unwrap();
        assert_eq!(l.groups.len(), 5);
        assert_eq!(l.groups[3].bounds, vec![[-1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(l.groups[4].bounds, vec![[-1.0, 0.0], [-1.0, 1.0]]);
        assert!((l.volume() - 3.0).abs() < 1e-15);
        assert!(!l.contains(&[0.5, -0.5]));
        assert!(l.contains(&[-0.5, -0.5]));
        let l3 = DomainSpec::builtin("lshape3d").unwrap();
        assert_eq!(l3.groups[0].bounds.len(), 3);
        assert_eq!(DomainSpec::builtin("lshape2d").unwrap().without_unions().groups.len(), 3);
    }

    #[test]
    fn exact_spectra() {
        let sq = DomainSpec::builtin("square").unwrap();
        let p2 = PI * PI;
        let v = sq.exact_eigenvalues(4).unwrap();
        for (a, b) in v.iter().zip([p2, p2, 2.0 * p2, 4.0 * p2]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((sq.exact_eigenvalues(1).unwrap()[0] - 9.869604401089).abs() < 1e-11);
        let cube = DomainSpec::builtin("cube").unwrap();
        let v = cube.exact_eigenvalues(5).unwrap();
        for (a, b) in v.iter().zip([2.0, 2.0, 2.0, 3.0, 3.0]) {
            assert!((a - b * p2).abs() < 1e-12);
        }
        assert!(matches!(
            DomainSpec::builtin("lshape2d").unwrap().exact_eigenvalues(3),
            Err(Error::NoClosedForm(_))
        ));
    }

    #[test]
    fn square_spectrum_matches_enumeration() {
        let mut brute = Vec::new();
        for i in 0..=20u32 {
            for j in 0..=20u32 {
                if i + j > 0 {
                    brute.push(f64::from(i * i + j * j) * PI * PI);
                }
            }
        }
        brute.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sq = DomainSpec::builtin("square").unwrap();
        for count in [1, 7, 23, 50] {
            let v = sq.exact_eigenvalues(count).unwrap();
            assert_eq!(v.len(), count);
            for (a, b) in v.iter().zip(&brute) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn prefix_stability() {
        let cube = DomainSpec::builtin("cube").unwrap();
        let long = cube.exact_eigenvalues(40).unwrap();
        for n in 1..40 {
            assert_eq!(cube.exact_eigenvalues(n).unwrap()[..], long[..n]);
        }
    }

    #[test]
    fn reference_tables() {
        assert_eq!(reference_table("lshape2d").unwrap()[0], 1.47562182408);
        assert_eq!(reference_table("inhomogeneous").unwrap()[2], 6.186389562488);
        assert_eq!(reference_table("lshape3d").unwrap()[0], 9.63972384472);
        let l = DomainSpec::builtin("lshape2d").unwrap();
        assert_eq!(l.reference_values(3).unwrap().len(), 3);
    }

    #[test]
    fn relative_errors() {
        assert_eq!(relative_error(PI * PI, PI * PI).unwrap(), 0.0);
        assert!((relative_error(9.86960453843, PI * PI).unwrap() - 1.39e-8).abs() < 1e-10);
        assert_eq!(relative_error(2.0, 1.0).unwrap(), 1.0);
        assert!(relative_error(1.0, 0.0).is_err());
    }

    #[test]
    fn json_roundtrip_and_rejection() {
        let l = DomainSpec::builtin("lshape2d").unwrap();
        let text = serde_json::to_string(&l).unwrap();
        assert_eq!(DomainSpec::from_json(&text).unwrap(), l);
        let bad = r#"{"name":"x","dim":2,"tiles":[{"bounds":[[0,1],[0,1]]},{"bounds":[[0.5,1.5],[0,1]]}],
            "groups":[{"bounds":[[0,1],[0,1]]}],"decomposed":true}"#;
        assert!(matches!(DomainSpec::from_json(bad), Err(Error::Decomposition(_))));
        let not_union = r#"{"name":"x","dim":2,"tiles":[{"bounds":[[0,1],[0,1]]}],
            "groups":[{"bounds":[[0,0.5],[0,1]]}],"decomposed":true}"#;
        assert!(matches!(DomainSpec::from_json(not_union), Err(Error::Decomposition(_))));
    }
}
