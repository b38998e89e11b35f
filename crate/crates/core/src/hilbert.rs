//! Properly convex domains in an affine chart, their Hilbert metric, orbit
//! growth in that metric, and the averaged orbit measures `ν_p`, `λ_n`.
//!
//! Points of the chart `R^m` embed projectively as `(x, 1)`. A generator
//! `g ∈ SL(m+1)` acts by `x ↦ chart(g·(x, 1))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::orbit::{self, ExponentEstimate, ExponentMethod, GeneratorSet, OrbitBall};
use crate::par::*;
use crate::tol;

/// Serialized form of a domain.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    Ball { center: Vec<f64>, radius: f64 },
    Polytope { vertices: Vec<Vec<f64>> },
}

#[derive(Clone, Debug)]
struct Facet {
    normal: Vec<f64>,
    offset: f64,
}

/// A bounded convex domain with nonempty interior.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "DomainSpec", into = "DomainSpec")]
pub struct ConvexDomain {
    spec: DomainSpec,
    facets: Vec<Facet>,
}

impl TryFrom<DomainSpec> for ConvexDomain {
    type Error = Error;
    fn try_from(spec: DomainSpec) -> Result<Self> {
        ConvexDomain::new(spec)
    }
}

impl From<ConvexDomain> for DomainSpec {
    fn from(d: ConvexDomain) -> Self {
        d.spec
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(p: &[f64], t: f64, v: &[f64]) -> Vec<f64> {
    p.iter().zip(v).map(|(x, y)| x + t * y).collect()
}

/// Supporting hyperplanes through affinely independent `m`-subsets of the
/// vertices. Quadratic-to-exponential in the vertex count, which is fine for
/// the small polytopes used as test domains.
fn facets_of(vertices: &[Vec<f64>]) -> Result<Vec<Facet>> {
    let m = vertices[0].len();
    let scale = vertices
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |a, x| a.max(x.abs()))
        .max(1.0);
    let eps = 1e-10 * scale;
    let mut out: Vec<Facet> = Vec::new();
    for subset in linalg::subsets(vertices.len(), m) {
        let base = &vertices[subset[0]];
        let diffs = Mat::from_fn(m, m.max(1) - 1, |r, c| vertices[subset[c + 1]][r] - base[r]);
        if linalg::gram_schmidt_log_norms(&diffs).iter().any(|&l| l < eps.ln()) {
            continue;
        }
        // normal = the direction orthogonal to all differences
        let frame = linalg::complete_frame(&diffs);
        let n: Vec<f64> = frame.column(m - 1).iter().copied().collect();
        let b = dot(&n, base);
        let side: Vec<f64> = vertices.iter().map(|v| dot(&n, v) - b).collect();
        let (lo, hi) = side
            .iter()
            .fold((0.0f64, 0.0f64), |(l, h), &s| (l.min(s), h.max(s)));
        let (normal, offset) = if hi <= eps {
            (n, b)
        } else if lo >= -eps {
            (n.iter().map(|x| -x).collect(), -b)
        } else {
            continue;
        };
        if out
            .iter()
            .any(|f| (dot(&f.normal, &normal) - 1.0).abs() < 1e-9 && (f.offset - offset).abs() < eps)
        {
            continue;
        }
        out.push(Facet { normal, offset });
    }
    if out.len() < m + 1 {
        return Err(Error::InvalidDomain("vertices do not span the chart".into()));
    }
    Ok(out)
}

impl ConvexDomain {
    pub fn new(spec: DomainSpec) -> Result<Self> {
        let facets = match &spec {
            DomainSpec::Ball { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidDomain("ball needs a center and positive radius".into()));
                }
                Vec::new()
            }
            DomainSpec::Polytope { vertices } => {
                let Some(first) = vertices.first() else {
                    return Err(Error::InvalidDomain("empty vertex list".into()));
                };
                let m = first.len();
                if m == 0 || vertices.iter().any(|v| v.len() != m) || vertices.len() < m + 1 {
                    return Err(Error::InvalidDomain("vertices must affinely span R^m".into()));
                }
                facets_of(vertices)?
            }
        };
        Ok(ConvexDomain { spec, facets })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        ConvexDomain::new(DomainSpec::Ball { center, radius })
    }

    pub fn polytope(vertices: Vec<Vec<f64>>) -> Result<Self> {
        ConvexDomain::new(DomainSpec::Polytope { vertices })
    }

    /// The projective model of `H^m`: unit ball, preserved by `SO(m,1)`.
    pub fn klein(m: usize) -> Self {
        ConvexDomain::ball(vec![0.0; m], 1.0).expect("unit ball is valid")
    }

    /// Cube `[−1, 1]^m`.
    pub fn cube(m: usize) -> Self {
        let vertices = (0..1usize << m)
            .map(|b| (0..m).map(|i| if b >> i & 1 == 1 { 1.0 } else { -1.0 }).collect())
            .collect();
        ConvexDomain::polytope(vertices).expect("cube is valid")
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    /// Chart dimension `m`.
    pub fn dim(&self) -> usize {
        match &self.spec {
            DomainSpec::Ball { center, .. } => center.len(),
            DomainSpec::Polytope { vertices } => vertices[0].len(),
        }
    }

    /// A canonical interior point: the center or the vertex centroid.
    pub fn center(&self) -> Vec<f64> {
        match &self.spec {
            DomainSpec::Ball { center, .. } => center.clone(),
            DomainSpec::Polytope { vertices } => {
                let n = vertices.len() as f64;
                (0..self.dim())
                    .map(|i| vertices.iter().map(|v| v[i]).sum::<f64>() / n)
                    .collect()
            }
        }
    }

    /// Signed depth: positive inside, zero on the boundary. For a ball this is
    /// `r − |x − c|`, for a polytope the smallest facet slack.
    pub fn depth(&self, x: &[f64]) -> f64 {
        match &self.spec {
            DomainSpec::Ball { center, radius } => radius - norm(&sub(x, center)),
            DomainSpec::Polytope { .. } => self
                .facets
                .iter()
                .map(|f| f.offset - dot(&f.normal, x))
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.depth(x) > tol::INTERIOR_MARGIN
    }

    fn check_interior(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if !self.contains(x) {
            return Err(Error::NotInterior);
        }
        Ok(())
    }

    /// Exit parameter `t > 0` of the ray `p + t v`.
    pub fn exit_time(&self, p: &[f64], v: &[f64]) -> f64 {
        match &self.spec {
            DomainSpec::Ball { center, radius } => {
                let w = sub(p, center);
                let a = dot(v, v);
                let b = dot(&w, v);
                let c = dot(&w, &w) - radius * radius;
                // positive root of a t² + 2b t + c, written without cancellation
                let disc = (b * b - a * c).max(0.0).sqrt();
                if b > 0.0 { -c / (b + disc) } else { (disc - b) / a }
            }
            DomainSpec::Polytope { .. } => self
                .facets
                .iter()
                .filter_map(|f| {
                    let s = dot(&f.normal, v);
                    (s > 0.0).then(|| (f.offset - dot(&f.normal, p)) / s)
                })
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Boundary points `(a, b)` with `p, q ∈ (a, b)`: `a` ends the ray from
    /// `q` through `p`, `b` the ray from `p` through `q`.
    pub fn chord(&self, p: &[f64], q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_interior(p)?;
        self.check_interior(q)?;
        let v = sub(q, p);
        if norm(&v) == 0.0 {
            return Err(Error::CoincidentPoints);
        }
        let tb = self.exit_time(p, &v);
        let back: Vec<f64> = v.iter().map(|x| -x).collect();
        let ta = self.exit_time(p, &back);
        Ok((axpy(p, -ta, &v), axpy(p, tb, &v)))
    }

    /// `½ log (|a−q| |b−p|) / (|a−p| |b−q|)`.
    pub fn distance(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        let (a, b) = match self.chord(p, q) {
            Ok(c) => c,
            Err(Error::CoincidentPoints) => return Ok(0.0),
            Err(e) => return Err(e),
        };
        let num = norm(&sub(&a, q)) * norm(&sub(&b, p));
        let den = norm(&sub(&a, p)) * norm(&sub(&b, q));
        Ok((0.5 * (num / den).ln()).max(0.0))
    }

    /// Gram matrix `J` of the quadratic form whose negative cone is the ball:
    /// `B(X, Y) = (X_a − cX_h)·(Y_a − cY_h) − r² X_h Y_h`.
    pub fn ball_form(&self) -> Option<Mat> {
        let DomainSpec::Ball { center, radius } = &self.spec else {
            return None;
        };
        let m = center.len();
        // J = Lᵀ diag(1,…,1,−r²) L with L = [I −c; 0 1]
        let mut l = Mat::identity(m + 1, m + 1);
        for i in 0..m {
            l[(i, m)] = -center[i];
        }
        let mut e = Mat::identity(m + 1, m + 1);
        e[(m, m)] = -radius * radius;
        Some(l.transpose() * e * l)
    }

    /// Image under a projective map. Polytopes map vertexwise; a ball maps
    /// to itself when `g` preserves its form and is rejected otherwise.
    pub fn transform(&self, g: &Mat) -> Result<ConvexDomain> {
        let m = self.dim();
        if g.nrows() != m + 1 || g.ncols() != m + 1 {
            return Err(Error::DimensionMismatch { expected: m + 1, got: g.nrows() });
        }
        match &self.spec {
            DomainSpec::Ball { .. } => {
                if preserves_form(self, g) {
                    Ok(self.clone())
                } else {
                    Err(Error::InvalidDomain(
                        "image of a ball under this map is not a ball".into(),
                    ))
                }
            }
            DomainSpec::Polytope { vertices } => {
                let hs: Vec<Vec<f64>> = vertices.iter().map(|v| apply(g, &homogeneous(v))).collect();
                let sign = hs[0][m].signum();
                if hs.iter().any(|h| h[m].signum() != sign || h[m] == 0.0) {
                    return Err(Error::InvalidDomain("image leaves the affine chart".into()));
                }
                ConvexDomain::polytope(hs.iter().map(|h| chart(h)).collect())
            }
        }
    }

    /// Sample of interior points used by the preservation check.
    pub fn sample_points(&self) -> Vec<Vec<f64>> {
        let m = self.dim();
        let c = self.center();
        let mut out = vec![c.clone()];
        match &self.spec {
            DomainSpec::Ball { radius, .. } => {
                let mut dirs: Vec<Vec<f64>> = Vec::new();
                for i in 0..m {
                    for s in [1.0, -1.0] {
                        let mut v = vec![0.0; m];
                        v[i] = s;
                        dirs.push(v);
                    }
                }
                // a fixed spread of oblique directions
                for k in 0..16 {
                    let v: Vec<f64> = (0..m)
                        .map(|i| ((k * (2 * i + 3) + i) as f64 * 0.7548776662).sin())
                        .collect();
                    let n = norm(&v);
                    if n > 1e-6 {
                        dirs.push(v.iter().map(|x| x / n).collect());
                    }
                }
                for v in dirs {
                    for f in [0.5, 0.999] {
                        out.push(axpy(&c, f * radius, &v));
                    }
                }
            }
            DomainSpec::Polytope { vertices } => {
                for v in vertices {
                    for f in [0.5, 0.999] {
                        out.push(axpy(&c, f, &sub(v, &c)));
                    }
                }
            }
        }
        out
    }
}

pub fn homogeneous(x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    h.push(1.0);
    h
}

pub fn chart(h: &[f64]) -> Vec<f64> {
    let m = h.len() - 1;
    h[..m].iter().map(|x| x / h[m]).collect()
}

fn apply(g: &Mat, h: &[f64]) -> Vec<f64> {
    (0..g.nrows())
        .map(|r| (0..g.ncols()).map(|c| g[(r, c)] * h[c]).sum())
        .collect()
}

/// `x ↦ chart(g·(x, 1))`.
pub fn act(g: &Mat, x: &[f64]) -> Vec<f64> {
    chart(&apply(g, &homogeneous(x)))
}

fn bilinear(j: &Mat, x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for r in 0..n {
        for c in 0..n {
            acc += x[r] * j[(r, c)] * y[c];
        }
    }
    acc
}

/// `gᵀJg = ±J` up to rounding, for the form of a ball.
pub fn preserves_form(domain: &ConvexDomain, g: &Mat) -> bool {
    let Some(j) = domain.ball_form() else {
        return false;
    };
    let img = g.transpose() * &j * g;
    let scale = g.iter().fold(0.0f64, |a, x| a.max(x.abs())).powi(2) * j.amax();
    let tol = 1e-9 * scale.max(1.0);
    linalg::max_abs_diff(&img, &j) < tol || linalg::max_abs_diff(&img, &(-&j)) < tol
}

/// Hilbert distance between homogeneous points of a ball through its form:
/// `cosh d = |B(P,Q)| / √(B(P,P) B(Q,Q))`. The norms are passed in so that
/// callers moving points by form-preserving maps can supply them exactly.
fn form_distance(j: &Mat, p: &[f64], pp: f64, q: &[f64], qq: f64) -> f64 {
    let c = bilinear(j, p, q).abs() / (pp.abs().sqrt() * qq.abs().sqrt());
    c.max(1.0).acosh()
}

/// How the domain metric is evaluated along an orbit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceRoute {
    /// Quadratic form of a ball preserved by every generator; stays accurate
    /// arbitrarily far out.
    Form,
    /// Cross-ratio in chart coordinates; saturates near the boundary once
    /// the distance to it drops below rounding.
    Chart,
}

/// Orbit of a basepoint `o` under an orbit ball, as homogeneous vectors.
#[derive(Clone, Debug)]
pub struct OrbitPositions {
    pub labels: Vec<String>,
    pub word_lens: Vec<usize>,
    points: Vec<Vec<f64>>,
    route: DistanceRoute,
    base_norm: f64,
}

impl OrbitPositions {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn route(&self) -> DistanceRoute {
        self.route
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        chart(&self.points[i])
    }

    /// `dist_Ω(p, γ_i o)` for a chart point `p`.
    pub fn distance_from(&self, domain: &ConvexDomain, p: &[f64], i: usize) -> Result<f64> {
        match self.route {
            DistanceRoute::Form => {
                let j = domain.ball_form().expect("form route implies a ball");
                let hp = homogeneous(p);
                let pp = bilinear(&j, &hp, &hp);
                Ok(form_distance(&j, &hp, pp, &self.points[i], self.base_norm))
            }
            DistanceRoute::Chart => domain.distance(p, &chart(&self.points[i])),
        }
    }

    /// Distances from a homogeneous point with known form value (form route
    /// only); used along hyperboloid rays.
    fn form_distances(&self, j: &Mat, hp: &[f64], pp: f64) -> Vec<f64> {
        self.points
            .par_iter()
            .map(|q| form_distance(j, hp, pp, q, self.base_norm))
            .collect()
    }

    pub fn distances_from(&self, domain: &ConvexDomain, p: &[f64]) -> Result<Vec<f64>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| self.distance_from(domain, p, i))
            .collect()
    }
}

/// Each generator and its inverse maps the sample points of `Ω` into the
/// closure of `Ω`.
pub fn check_preserved(domain: &ConvexDomain, gens: &GeneratorSet) -> Result<()> {
    let m = domain.dim();
    if gens.dim() != m + 1 {
        return Err(Error::DimensionMismatch { expected: m + 1, got: gens.dim() });
    }
    let pts = domain.sample_points();
    let slack = 1e-9 * domain.center().iter().fold(1.0f64, |a, x| a.max(x.abs()));
    for l in 0..gens.num_letters() {
        let g = gens.letter(l);
        for x in &pts {
            let h = apply(g, &homogeneous(x));
            if h[m] == 0.0 || domain.depth(&chart(&h)) < -slack {
                return Err(Error::DomainNotPreserved(gens.label(l).to_string()));
            }
        }
    }
    Ok(())
}

/// Positions `γo` over an orbit ball. Checks preservation first and picks
/// the form route when the domain is a ball and every generator preserves
/// its form.
pub fn orbit_positions(domain: &ConvexDomain, orbit: &OrbitBall, o: &[f64]) -> Result<OrbitPositions> {
    domain.check_interior(o)?;
    check_preserved(domain, orbit.generators())?;
    let gens = orbit.generators();
    let form_ok = (0..gens.num_letters()).all(|l| preserves_form(domain, gens.letter(l)));
    let ho = homogeneous(o);
    let (route, base_norm) = match (form_ok, domain.ball_form()) {
        (true, Some(j)) => (DistanceRoute::Form, bilinear(&j, &ho, &ho)),
        _ => (DistanceRoute::Chart, 0.0),
    };
    let points: Vec<Vec<f64>> = (0..orbit.len())
        .into_par_iter()
        .map(|i| apply(&orbit.matrix(i), &ho))
        .collect();
    Ok(OrbitPositions {
        labels: (0..orbit.len()).map(|i| orbit.word_string(i)).collect(),
        word_lens: (0..orbit.len()).map(|i| orbit.word_len(i)).collect(),
        points,
        route,
        base_norm,
    })
}

/// `δ_Ω` estimated by count regression over `dist_Ω(o, γo)`.
pub fn hilbert_critical_exponent(
    domain: &ConvexDomain,
    gens: &GeneratorSet,
    o: &[f64],
    max_len: usize,
) -> Result<ExponentEstimate> {
    check_preserved(domain, gens)?;
    let orbit = OrbitBall::enumerate(gens, max_len)?;
    let pos = orbit_positions(domain, &orbit, o)?;
    let d = pos.distances_from(domain, o)?;
    let values: Vec<(f64, usize)> = d.into_iter().zip(pos.word_lens.iter().copied()).collect();
    orbit::critical_exponent_from_values(&values, ExponentMethod::CountRegression)
}

/// Probability measure on group elements, indexed like the orbit positions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaMeasure {
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
}

impl GammaMeasure {
    fn from_log_weights(labels: &[String], logw: &[f64]) -> Self {
        let lse = det_logsumexp(logw.len(), |i| logw[i]);
        GammaMeasure {
            labels: labels.to_vec(),
            weights: logw.iter().map(|w| (w - lse).exp()).collect(),
        }
    }

    pub fn total(&self) -> f64 {
        det_sum(self.weights.len(), |i| self.weights[i])
    }

    /// `Σ |μ(γ) − ν(γ)|`; at most 2.
    pub fn total_variation(&self, other: &GammaMeasure) -> Result<f64> {
        if self.labels != other.labels {
            return Err(Error::InvalidInput("measures live on different label sets".into()));
        }
        Ok(det_sum(self.weights.len(), |i| (self.weights[i] - other.weights[i]).abs()))
    }

    pub fn csv_rows(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let rows = self
            .labels
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| vec![l.clone(), format!("{w:e}")])
            .collect();
        (vec!["word".into(), "weight".into()], rows)
    }
}

/// `ν_p ∝ Σ e^{−δ dist_Ω(p, γo)} D_γ` over the truncated orbit.
pub fn kaimanovich_nu(domain: &ConvexDomain, pos: &OrbitPositions, delta: f64, p: &[f64]) -> Result<GammaMeasure> {
    domain.check_interior(p)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidInput("δ must be positive".into()));
    }
    let d = pos.distances_from(domain, p)?;
    let logw: Vec<f64> = d.iter().map(|x| -delta * x).collect();
    Ok(GammaMeasure::from_log_weights(&pos.labels, &logw))
}

/// Nodes and trapezoid weights on `[0, n]` with step `h`, normalised to sum
/// to one. `n = 0` gives the single node `0`.
pub fn trapezoid_nodes(n: f64, h: f64) -> Vec<(f64, f64)> {
    if n <= 0.0 {
        return vec![(0.0, 1.0)];
    }
    let mut ts: Vec<f64> = Vec::new();
    let mut k = 0usize;
    loop {
        let t = k as f64 * h;
        if t >= n - 1e-12 {
            break;
        }
        ts.push(t);
        k += 1;
    }
    ts.push(n);
    let mut out: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 0.0)).collect();
    for i in 0..ts.len() - 1 {
        let w = 0.5 * (ts[i + 1] - ts[i]) / n;
        out[i].1 += w;
        out[i + 1].1 += w;
    }
    out
}

/// `λ_n(p, x) = (1/n) ∫₀ⁿ ν_{ℓ(t)} dt` along the unit-speed geodesic ray
/// `ℓ` from `p` towards the boundary point `x`, by the trapezoid rule.
pub fn lambda_n(
    domain: &ConvexDomain,
    pos: &OrbitPositions,
    delta: f64,
    p: &[f64],
    x: &[f64],
    n: f64,
) -> Result<GammaMeasure> {
    domain.check_interior(p)?;
    if x.len() != domain.dim() {
        return Err(Error::DimensionMismatch { expected: domain.dim(), got: x.len() });
    }
    let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if domain.depth(x).abs() > 1e-9 * scale {
        return Err(Error::InvalidInput("x must lie on the boundary".into()));
    }
    if !(delta > 0.0) || !(n >= 0.0) {
        return Err(Error::InvalidInput("δ must be positive and n nonnegative".into()));
    }
    let nodes = trapezoid_nodes(n, tol::LAMBDA_STEP);
    let mut acc = vec![0.0; pos.len()];
    let ray = Ray::new(domain, pos, p, x)?;
    for (t, c) in nodes {
        let d = ray.distances(domain, pos, t)?;
        let lse = det_logsumexp(d.len(), |i| -delta * d[i]);
        for (a, di) in acc.iter_mut().zip(&d) {
            *a += c * (-delta * di - lse).exp();
        }
    }
    Ok(GammaMeasure { labels: pos.labels.clone(), weights: acc })
}

enum Ray {
    /// `ℓ(t) = cosh t P + sinh t V` on the hyperboloid `B(X,X) = −1`.
    Hyperboloid { j: Mat, p: Vec<f64>, v: Vec<f64> },
    /// Affine segment from `p` to the boundary point `x`, with `a` the far
    /// end of the chord behind `p`.
    Segment { p: Vec<f64>, x: Vec<f64>, alpha: f64, len: f64 },
}

impl Ray {
    fn new(domain: &ConvexDomain, pos: &OrbitPositions, p: &[f64], x: &[f64]) -> Result<Self> {
        if pos.route == DistanceRoute::Form {
            let j = domain.ball_form().expect("form route implies a ball");
            let hp = homogeneous(p);
            let s = (-bilinear(&j, &hp, &hp)).sqrt();
            let hp: Vec<f64> = hp.iter().map(|c| c / s).collect();
            let hx = homogeneous(x);
            let bpx = bilinear(&j, &hp, &hx);
            let v: Vec<f64> = hx.iter().zip(&hp).map(|(xi, pi)| (xi + bpx * pi) / -bpx).collect();
            return Ok(Ray::Hyperboloid { j, p: hp, v });
        }
        let dir = sub(x, p);
        let len = norm(&dir);
        if len == 0.0 {
            return Err(Error::CoincidentPoints);
        }
        let back: Vec<f64> = dir.iter().map(|c| -c).collect();
        let alpha = domain.exit_time(p, &back) * len;
        Ok(Ray::Segment { p: p.to_vec(), x: x.to_vec(), alpha, len })
    }

    fn distances(&self, domain: &ConvexDomain, pos: &OrbitPositions, t: f64) -> Result<Vec<f64>> {
        match self {
            Ray::Hyperboloid { j, p, v } => {
                let (c, s) = (t.cosh(), t.sinh());
                let l: Vec<f64> = p.iter().zip(v).map(|(a, b)| c * a + s * b).collect();
                Ok(pos.form_distances(j, &l, -1.0))
            }
            Ray::Segment { p, x, alpha, len } => {
                // dist(p, p + s(x − p)) = t  ⇔  s = α(e^{2t} − 1)/(len + α e^{2t})
                let e = (2.0 * t).exp();
                let s = alpha * (e - 1.0) / (len + alpha * e);
                let q = axpy(p, s, &sub(x, p));
                if !(s < 1.0) || !domain.contains(&q) {
                    return Err(Error::RayExit(t));
                }
                pos.distances_from(domain, &q)
            }
        }
    }
}

/// Hilbert distances `dist_Ω(o, γo)` per orbit element, with labels.
pub fn metric_table(domain: &ConvexDomain, pos: &OrbitPositions, o: &[f64]) -> Result<Vec<(String, usize, f64)>> {
    let d = pos.distances_from(domain, o)?;
    Ok(pos
        .labels
        .iter()
        .zip(&pos.word_lens)
        .zip(d)
        .map(|((l, &n), d)| (l.clone(), n, d))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_in_ball(rng: &mut ChaCha8Rng, m: usize, r: f64) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..m).map(|_| rng.random_range(-r..r)).collect();
            if norm(&v) < r {
                return v;
            }
        }
    }

    /// Lorentz boost in the `(x_0, x_m)` plane, an isometry of the Klein ball.
    fn boost(m: usize, s: f64) -> Mat {
        let mut g = Mat::identity(m + 1, m + 1);
        g[(0, 0)] = s.cosh();
        g[(m, m)] = s.cosh();
        g[(0, m)] = s.sinh();
        g[(m, 0)] = s.sinh();
        g
    }

    #[test]
    fn chord_examples() {
        let ball = ConvexDomain::klein(2);
        let (a, b) = ball.chord(&[0.0, 0.0], &[0.5, 0.0]).unwrap();
        assert!(norm(&sub(&a, &[-1.0, 0.0])) < 1e-12 && norm(&sub(&b, &[1.0, 0.0])) < 1e-12);
        let sq = ConvexDomain::cube(2);
        let (a, b) = sq.chord(&[0.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!(norm(&sub(&a, &[-1.0, -1.0])) < 1e-12 && norm(&sub(&b, &[1.0, 1.0])) < 1e-12);
        assert!(matches!(sq.chord(&[0.1, 0.1], &[0.1, 0.1]), Err(Error::CoincidentPoints)));
        assert!(matches!(sq.chord(&[0.1, 0.1], &[2.0, 0.0]), Err(Error::NotInterior)));
    }

    #[test]
    fn ball_chords_end_on_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = vec![0.3, -0.2, 0.1];
        let dom = ConvexDomain::ball(c.clone(), 2.0).unwrap();
        for _ in 0..200 {
            let p = axpy(&c, 1.0, &random_in_ball(&mut rng, 3, 2.0));
            let q = axpy(&c, 1.0, &random_in_ball(&mut rng, 3, 2.0));
            let (a, b) = dom.chord(&p, &q).unwrap();
            assert!((norm(&sub(&a, &c)) - 2.0).abs() < 1e-10);
            assert!((norm(&sub(&b, &c)) - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn radial_formula() {
        let ball = ConvexDomain::klein(3);
        assert_eq!(ball.distance(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3]).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x = random_in_ball(&mut rng, 3, 1.0);
            let d = ball.distance(&[0.0; 3], &x).unwrap();
            assert!((d - norm(&x).atanh()).abs() < 1e-10);
        }
    }

    #[test]
    fn ball_metric_via_isometry_and_form() {
        let ball = ConvexDomain::klein(2);
        let j = ball.ball_form().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = random_in_ball(&mut rng, 2, 0.95);
            let q = random_in_ball(&mut rng, 2, 0.95);
            let d = ball.distance(&p, &q).unwrap();
            // move p to the origin along the x-axis after rotating it there
            let theta = p[1].atan2(p[0]);
            let mut rot = Mat::identity(3, 3);
            rot[(0, 0)] = theta.cos();
            rot[(0, 1)] = theta.sin();
            rot[(1, 0)] = -theta.sin();
            rot[(1, 1)] = theta.cos();
            let g = boost(2, -norm(&p).atanh()) * rot;
            assert!(norm(&act(&g, &p)) < 1e-12);
            assert!((d - norm(&act(&g, &q)).atanh()).abs() < 1e-8);
            let (hp, hq) = (homogeneous(&p), homogeneous(&q));
            let f = form_distance(&j, &hp, bilinear(&j, &hp, &hp), &hq, bilinear(&j, &hq, &hq));
            assert!((d - f).abs() < 1e-8);
        }
    }

    #[test]
    fn triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for dom in [ConvexDomain::klein(2), ConvexDomain::cube(2)] {
            for _ in 0..1000 {
                let p = random_in_ball(&mut rng, 2, 0.99);
                let q = random_in_ball(&mut rng, 2, 0.99);
                let r = random_in_ball(&mut rng, 2, 0.99);
                let slack = dom.distance(&p, &q).unwrap() + dom.distance(&q, &r).unwrap()
                    - dom.distance(&p, &r).unwrap();
                assert!(slack >= -1e-9);
            }
        }
    }

    #[test]
    fn segments_are_geodesics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dom in [ConvexDomain::klein(2), ConvexDomain::cube(2)] {
            for _ in 0..200 {
                let p = random_in_ball(&mut rng, 2, 0.9);
                let r = random_in_ball(&mut rng, 2, 0.9);
                let q = axpy(&p, rng.random_range(0.1..0.9), &sub(&r, &p));
                let lhs = dom.distance(&p, &r).unwrap();
                let rhs = dom.distance(&p, &q).unwrap() + dom.distance(&q, &r).unwrap();
                assert!((lhs - rhs).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn projective_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sq = ConvexDomain::cube(2);
        for _ in 0..100 {
            let mut g = Mat::identity(3, 3);
            for v in g.iter_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
            let img = sq.transform(&g).unwrap();
            let p = random_in_ball(&mut rng, 2, 0.7);
            let q = random_in_ball(&mut rng, 2, 0.7);
            let d1 = sq.distance(&p, &q).unwrap();
            let d2 = img.distance(&act(&g, &p), &act(&g, &q)).unwrap();
            assert!((d1 - d2).abs() < 1e-8);
        }
        let ball = ConvexDomain::klein(2);
        let g = boost(2, 0.7);
        assert!(ball.transform(&g).is_ok());
        assert!(ball.transform(&linalg::exp_diag(&[0.1, 0.0, -0.1])).is_err());
    }

    #[test]
    fn polytope_validation() {
        assert!(ConvexDomain::polytope(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]).is_err());
        let tri = ConvexDomain::polytope(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.2, 0.2]])
            .unwrap();
        assert_eq!(tri.facets.len(), 3);
        assert_eq!(ConvexDomain::cube(3).facets.len(), 6);
        let json = serde_json::to_string(&tri).unwrap();
        let back: ConvexDomain = serde_json::from_str(&json).unwrap();
        assert_eq!(back.spec(), tri.spec());
    }

    #[test]
    fn f2_preserves_klein_disk_and_matches_phi_h() {
        let gens = fixtures::f2_so21();
        let ball = ConvexDomain::klein(2);
        let orbit = OrbitBall::enumerate(&gens, 6).unwrap();
        let pos = orbit_positions(&ball, &orbit, &[0.0, 0.0]).unwrap();
        assert_eq!(pos.route(), DistanceRoute::Form);
        let d = pos.distances_from(&ball, &[0.0, 0.0]).unwrap();
        for i in 0..orbit.len() {
            let k = orbit.kappa(i);
            let phi_h = 0.5 * (k.0[0] - k.0[2]);
            assert!((d[i] - phi_h).abs() < 1e-6, "{i}");
        }
        let bad = fixtures::f3().unwrap();
        assert!(matches!(check_preserved(&ball, &bad), Err(Error::DomainNotPreserved(_))));
    }

    #[test]
    fn cyclic_exponent_small() {
        let ball = ConvexDomain::klein(2);
        let gens = GeneratorSet::new(vec![("a".into(), boost(2, 1.0))], orbit::WordPolicy::FreeReduced)
            .unwrap();
        let est = hilbert_critical_exponent(&ball, &gens, &[0.0, 0.0], 40).unwrap();
        assert!(est.delta_hat <= 0.1);
    }

    #[test]
    fn nu_and_lambda_basics() {
        let gens = fixtures::f2_so21();
        let ball = ConvexDomain::klein(2);
        let orbit = OrbitBall::enumerate(&gens, 4).unwrap();
        let pos = orbit_positions(&ball, &orbit, &[0.0, 0.0]).unwrap();
        let p = [0.1, -0.2];
        let nu = kaimanovich_nu(&ball, &pos, 1.0, &p).unwrap();
        assert!((nu.total() - 1.0).abs() < 1e-12);
        let nu2 = kaimanovich_nu(&ball, &pos, 1.0, &p).unwrap();
        assert_eq!(nu.total_variation(&nu2).unwrap(), 0.0);
        let x = [1.0, 0.0];
        let l0 = lambda_n(&ball, &pos, 1.0, &p, &x, 0.0).unwrap();
        assert!(l0.total_variation(&nu).unwrap() < 1e-12);
        let l = lambda_n(&ball, &pos, 1.0, &p, &x, 3.05).unwrap();
        assert!((l.total() - 1.0).abs() < 1e-12);
        assert!(lambda_n(&ball, &pos, 1.0, &p, &[0.5, 0.0], 1.0).is_err());
    }

    #[test]
    fn hyperboloid_ray_has_unit_speed() {
        let gens = fixtures::f2_so21();
        let ball = ConvexDomain::klein(2);
        let orbit = OrbitBall::enumerate(&gens, 1).unwrap();
        let pos = orbit_positions(&ball, &orbit, &[0.0, 0.0]).unwrap();
        let p = [0.2, 0.1];
        let ray = Ray::new(&ball, &pos, &p, &[0.0, 1.0]).unwrap();
        let Ray::Hyperboloid { j, p: hp, v } = &ray else { panic!() };
        for t in [0.5f64, 2.0, 7.0] {
            let l: Vec<f64> = hp.iter().zip(v).map(|(a, b)| t.cosh() * a + t.sinh() * b).collect();
            assert!((form_distance(j, hp, -1.0, &l, -1.0) - t).abs() < 1e-9);
            let pt = chart(&l);
            if t < 5.0 {
                assert!((ball.distance(&p, &pt).unwrap() - t).abs() < 1e-8);
                // on the segment from p to x
                let dir = sub(&[0.0, 1.0], &p);
                let w = sub(&pt, &p);
                assert!((dir[0] * w[1] - dir[1] * w[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn segment_ray_matches_metric() {
        let sq = ConvexDomain::cube(2);
        let p = [0.1, 0.2];
        let x = [1.0, 0.5];
        let dir = sub(&x, &p);
        let len = norm(&dir);
        let alpha = sq.exit_time(&p, &dir.iter().map(|c| -c).collect::<Vec<_>>()) * len;
        for t in [0.3f64, 1.0, 4.0] {
            let e = (2.0 * t).exp();
            let s = alpha * (e - 1.0) / (len + alpha * e);
            let q = axpy(&p, s, &dir);
            assert!((sq.distance(&p, &q).unwrap() - t).abs() < 1e-9);
        }
    }

    #[test]
    fn trapezoid_weights() {
        let n = trapezoid_nodes(1.0, 0.1);
        assert_eq!(n.len(), 11);
        assert!((n.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((n[0].1 - 0.05).abs() < 1e-12 && (n[5].1 - 0.1).abs() < 1e-12);
        assert_eq!(trapezoid_nodes(0.0, 0.1), vec![(0.0, 1.0)]);
        let odd = trapezoid_nodes(0.25, 0.1);
        assert_eq!(odd.len(), 4);
        assert!((odd[3].0 - 0.25).abs() < 1e-15);
    }
}
