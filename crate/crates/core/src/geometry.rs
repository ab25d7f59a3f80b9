//! Sign-pattern geometry: orthants, magnitude-ordering cones, and the vertex
//! set of a cone.
//!
//! An orthant is identified with a sign pattern over `{-1, 0, +1}`. A cone
//! refines an orthant by the ordering of coordinate magnitudes, so it is
//! identified with the pair (signs, tie-grouped magnitude order). The vertex
//! set of `x` consists of the unit "staircase" vectors
//! `(1/sqrt(k)) * sum_{i<=k} sign(x_{j_i}) e_{j_i}` taken at every tie-group
//! boundary of the descending magnitude order `j_1, .., j_n`. Every point in
//! the closure of the cone is a nonnegative combination of these vertices.

use std::collections::HashSet;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantize::{sign_of, QuantizationMode, QuantizedWeight};
use crate::vector;

/// Relative tolerance used when deciding cone-closure membership.
pub const DECOMPOSITION_TOL: f64 = 1e-12;

/// Largest dimension accepted by [`count_geometry`] and [`enumerate_geometry`].
pub const GEOMETRY_MAX_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignPattern(Vec<i8>);

impl SignPattern {
    pub fn new(signs: Vec<i8>) -> Self {
        debug_assert!(signs.iter().all(|s| (-1..=1).contains(s)));
        SignPattern(signs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, i8> {
        self.0.iter()
    }

    /// No zero entries.
    pub fn is_regular(&self) -> bool {
        self.0.iter().all(|&s| s != 0)
    }

    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|&&s| s != 0).count()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] != 0).collect()
    }
}

/// Coordinate-wise sign; zero maps to zero.
pub fn orthant_of(x: &[f64]) -> SignPattern {
    SignPattern(x.iter().map(|&v| sign_of(v)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConeDescriptor {
    pub signs: SignPattern,
    /// Coordinates by descending magnitude; ascending index inside a tie group.
    pub order: Vec<usize>,
    /// Maximal runs of equal magnitude, in `order` order.
    pub tie_groups: Vec<Vec<usize>>,
}

impl ConeDescriptor {
    pub fn is_regular(&self) -> bool {
        self.signs.is_regular() && self.tie_groups.iter().all(|g| g.len() == 1)
    }

    pub fn dim(&self) -> usize {
        self.signs.len()
    }
}

pub fn cone_of(x: &[f64]) -> ConeDescriptor {
    cone_of_with_tol(x, 0.0)
}

/// Like [`cone_of`], but magnitudes differing by at most `tie_tol` along the
/// sorted order are merged into one tie group.
pub fn cone_of_with_tol(x: &[f64], tie_tol: f64) -> ConeDescriptor {
    let sorted = vector::magnitude_order(x);
    let mut tie_groups: Vec<Vec<usize>> = Vec::new();
    let mut prev: Option<f64> = None;
    for &i in &sorted {
        let a = x[i].abs();
        match (prev, tie_groups.last_mut()) {
            (Some(p), Some(group)) if p - a <= tie_tol => group.push(i),
            _ => tie_groups.push(vec![i]),
        }
        prev = Some(a);
    }
    for g in &mut tie_groups {
        g.sort_unstable();
    }
    let order = tie_groups.iter().flatten().copied().collect();
    ConeDescriptor {
        signs: orthant_of(x),
        order,
        tie_groups,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    Interior,
    Closure,
    Outside,
}

/// Where `y` sits relative to `Cone(x)`.
pub fn in_cone(y: &[f64], x: &[f64]) -> Result<Membership> {
    Error::check_dim(x.len(), y.len())?;
    if vector::is_zero(x) {
        return Err(Error::ZeroVector("cone of the zero vector is not defined"));
    }
    if cone_of(y) == cone_of(x) {
        return Ok(Membership::Interior);
    }
    match decompose_in_cone(y, &vertex_set(x)) {
        Ok(_) => Ok(Membership::Closure),
        Err(Error::NotInConeClosure(_)) => Ok(Membership::Outside),
        Err(e) => Err(e),
    }
}

/// Unit-norm vertices of a cone with strictly nested supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSet {
    vertices: Vec<QuantizedWeight>,
}

impl VertexSet {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[QuantizedWeight] {
        &self.vertices
    }

    pub fn iter(&self) -> std::slice::Iter<'_, QuantizedWeight> {
        self.vertices.iter()
    }

    pub fn position(&self, w: &QuantizedWeight) -> Option<usize> {
        self.vertices.iter().position(|z| z.same_state(w))
    }

    pub fn contains(&self, w: &QuantizedWeight) -> bool {
        self.position(w).is_some()
    }

    /// Moves `first` to the front, keeping the others in ascending support order.
    pub fn with_first(&self, first: &QuantizedWeight) -> Result<VertexSet> {
        let idx = self.position(first).ok_or_else(|| {
            Error::NotInConeClosure(format!("{first} is not a vertex of this cone"))
        })?;
        let mut vertices = self.vertices.clone();
        let z = vertices.remove(idx);
        vertices.insert(0, z);
        Ok(VertexSet { vertices })
    }
}

pub fn vertex_set(x: &[f64]) -> VertexSet {
    vertex_set_with_tol(x, 0.0)
}

/// Vertex `k` exists iff the k-th largest magnitude is nonzero and it is
/// either the last coordinate or strictly larger than the next one.
pub fn vertex_set_with_tol(x: &[f64], tie_tol: f64) -> VertexSet {
    let cone = cone_of_with_tol(x, tie_tol);
    let n = x.len();
    let mut vertices = Vec::new();
    let mut signs = vec![0i8; n];
    for group in &cone.tie_groups {
        if group.iter().any(|&i| x[i] == 0.0) {
            break;
        }
        for &i in group {
            signs[i] = sign_of(x[i]);
        }
        let w = QuantizedWeight::unit(SignPattern::new(signs.clone()), QuantizationMode::Ternary)
            .expect("vertex support is nonempty");
        vertices.push(w);
    }
    VertexSet { vertices }
}

/// Nonnegative coefficients `mu` with `y = sum_i mu[i] * basis[i]`, aligned
/// with the order of `basis`.
///
/// Vertices are processed by support size: on the block of coordinates added
/// by the vertex with support `k`, the signed value of `y` is constant, say
/// `b`, and `mu = sqrt(k) * (b - b_next)`.
pub fn decompose_in_cone(y: &[f64], basis: &VertexSet) -> Result<Vec<f64>> {
    let n = y.len();
    if let Some(z) = basis.vertices.first() {
        Error::check_dim(z.dim(), n)?;
    }
    let tol = DECOMPOSITION_TOL * vector::norm(y).max(f64::MIN_POSITIVE);

    let mut by_support: Vec<usize> = (0..basis.len()).collect();
    by_support.sort_by_key(|&i| basis.vertices[i].support_size());

    // Blocks of newly added coordinates, with their signs.
    let mut blocks: Vec<Vec<(usize, i8)>> = Vec::with_capacity(basis.len());
    let mut covered = vec![0i8; n];
    for &vi in &by_support {
        let signs = basis.vertices[vi].signs().as_slice();
        let mut block = Vec::new();
        for (j, &s) in signs.iter().enumerate() {
            match (covered[j], s) {
                (0, 0) => {}
                (0, s) => block.push((j, s)),
                (c, s) if c == s => {}
                _ => {
                    return Err(Error::invalid(
                        "basis",
                        "vertex supports are not nested with consistent signs",
                    ))
                }
            }
        }
        if block.is_empty() {
            return Err(Error::invalid("basis", "vertex supports are not strictly nested"));
        }
        for &(j, s) in &block {
            covered[j] = s;
        }
        blocks.push(block);
    }

    for j in 0..n {
        if covered[j] == 0 && y[j].abs() > tol {
            return Err(Error::NotInConeClosure(format!(
                "coordinate {j} is {} outside every vertex support",
                y[j]
            )));
        }
    }

    let levels: Vec<f64> = blocks
        .iter()
        .map(|block| {
            let mean = block.iter().map(|&(j, s)| f64::from(s) * y[j]).sum::<f64>()
                / block.len() as f64;
            for &(j, s) in block {
                if (f64::from(s) * y[j] - mean).abs() > tol {
                    return Err(Error::NotInConeClosure(format!(
                        "coordinate {j} breaks a magnitude tie of the cone"
                    )));
                }
            }
            Ok(mean)
        })
        .collect::<Result<_>>()?;

    let mut mu = vec![0.0; basis.len()];
    for (pos, &vi) in by_support.iter().enumerate() {
        let next = levels.get(pos + 1).copied().unwrap_or(0.0);
        let k = basis.vertices[vi].support_size() as f64;
        let m = k.sqrt() * (levels[pos] - next);
        if m < -tol * k.sqrt() {
            return Err(Error::NotInConeClosure(format!(
                "coefficient of the {}-sparse vertex would be {m}",
                k as usize
            )));
        }
        mu[vi] = m.max(0.0);
    }
    Ok(mu)
}

/// `sum_i mu[i] * basis[i]`.
pub fn recompose(mu: &[f64], basis: &VertexSet) -> Vec<f64> {
    let n = basis.vertices.first().map_or(0, |z| z.dim());
    let mut out = vec![0.0; n];
    for (m, z) in mu.iter().zip(basis.iter()) {
        for (o, v) in out.iter_mut().zip(z.to_vec()) {
            *o += m * v;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryCounts {
    pub orthants: u64,
    pub regular_orthants: u64,
    pub regular_cones_per_regular_orthant: u64,
}

fn check_geometry_dim(n: usize) -> Result<()> {
    if (1..=GEOMETRY_MAX_DIM).contains(&n) {
        Ok(())
    } else {
        Err(Error::DimensionOutOfRange {
            what: "geometry counting",
            n,
            min: 1,
            max: GEOMETRY_MAX_DIM,
        })
    }
}

/// Closed-form counts `(3^n, 2^n, n!)`.
pub fn count_geometry(n: usize) -> Result<GeometryCounts> {
    check_geometry_dim(n)?;
    Ok(GeometryCounts {
        orthants: 3u64.pow(n as u32),
        regular_orthants: 2u64.pow(n as u32),
        regular_cones_per_regular_orthant: (1..=n as u64).product(),
    })
}

/// Counts by enumeration: distinct orthants over every sign pattern, and
/// distinct regular cones over every magnitude ranking inside each regular
/// orthant. Fails if the regular orthants disagree on their cone count.
pub fn enumerate_geometry(n: usize) -> Result<GeometryCounts> {
    check_geometry_dim(n)?;
    let mut orthants = HashSet::new();
    let mut regular = Vec::new();
    for signs in (0..n).map(|_| [-1.0, 0.0, 1.0]).multi_cartesian_product() {
        let o = orthant_of(&signs);
        if o.is_regular() {
            regular.push(signs.clone());
        }
        orthants.insert(o);
    }

    let mut cones_per_orthant: Option<u64> = None;
    for signs in &regular {
        let mut cones = HashSet::new();
        for ranking in (0..n).permutations(n) {
            let x: Vec<f64> = (0..n)
                .map(|i| signs[i] * (n - ranking[i]) as f64)
                .collect();
            let c = cone_of(&x);
            if c.is_regular() {
                cones.insert(c);
            }
        }
        let count = cones.len() as u64;
        match cones_per_orthant {
            None => cones_per_orthant = Some(count),
            Some(prev) if prev != count => {
                return Err(Error::invalid(
                    "geometry",
                    format!("regular orthants disagree on cone counts ({prev} vs {count})"),
                ))
            }
            _ => {}
        }
    }

    Ok(GeometryCounts {
        orthants: orthants.len() as u64,
        regular_orthants: regular.len() as u64,
        regular_cones_per_regular_orthant: cones_per_orthant.unwrap_or(0),
    })
}
