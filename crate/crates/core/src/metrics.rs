//! Pose and shape distances between a predicted and a ground-truth object:
//! ADD, its closest-point variant ADD-S, and symmetric Chamfer distance.
//!
//! Point-set functions work in the input units. The [`EvalPair`] wrappers
//! report millimeters from meter inputs. Every mean is a left-to-right sum
//! in index order divided by the count, so results are bit-reproducible and
//! match a plain double loop exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::mesh::{load_mesh, sample_surface, TriMesh};

pub const DEFAULT_SAMPLE_COUNT: usize = 2048;
pub const DEFAULT_SAMPLE_SEED: u64 = 0x5eed_0ba5e;
const METERS_TO_MM: f64 = 1000.0;

/// Squared distance with a fixed summation order; the tree and every
/// oracle must use this exact expression.
#[inline]
pub fn squared_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone, Copy)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Exact nearest-neighbor index over a fixed point set.
///
/// Each node splits on its own point's coordinate; the left subtree holds
/// coordinates `≤` the split and the right subtree `≥`. A subtree is skipped
/// only when the squared plane distance strictly exceeds the best squared
/// distance so far. Rounding is monotone, so for any point beyond the plane
/// `squared_distance ≥ plane²` holds in floating point too, and the search
/// returns exactly the brute-force minimum. Ties go to the lowest index.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build(points, &mut order, 0, &mut nodes);
        Self {
            points,
            nodes,
            root,
        }
    }

    fn build(
        points: &[Vector3<f64>],
        order: &mut [usize],
        depth: usize,
        nodes: &mut Vec<Node>,
    ) -> Option<usize> {
        if order.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let id = nodes.len();
        nodes.push(Node {
            point: order[mid],
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = order.split_at_mut(mid);
        let left = Self::build(points, lo, depth + 1, nodes);
        let right = Self::build(points, &mut rest[1..], depth + 1, nodes);
        nodes[id].left = left;
        nodes[id].right = right;
        Some(id)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(index, squared distance)` of the closest point, `None` when empty.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        if let Some(root) = self.root {
            self.search(root, query, &mut best);
        }
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, id: usize, q: &Vector3<f64>, best: &mut (usize, f64)) {
        let node = self.nodes[id];
        let p = &self.points[node.point];
        let d2 = squared_distance(q, p);
        if d2 < best.1 || (d2 == best.1 && node.point < best.0) {
            *best = (node.point, d2);
        }
        let diff = q[node.axis] - p[node.axis];
        let (near, far) = if diff <= 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.search(n, q, best);
        }
        if let Some(f) = far {
            if diff * diff <= best.1 {
                self.search(f, q, best);
            }
        }
    }
}

fn ordered_mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.fold(0.0, |acc, v| acc + v) / n as f64
}

fn require_points(points: &[Vector3<f64>], what: &'static str) -> Result<()> {
    if points.is_empty() {
        Err(Error::EmptyInput(what))
    } else {
        Ok(())
    }
}

/// Nearest-neighbor distance from every query to `targets`, in query order.
pub fn nearest_distances(queries: &[Vector3<f64>], targets: &[Vector3<f64>]) -> Result<Vec<f64>> {
    require_points(targets, "target point set")?;
    let tree = KdTree::new(targets);
    Ok(queries
        .par_iter()
        .map(|q| tree.nearest(q).map_or(f64::INFINITY, |(_, d2)| d2.sqrt()))
        .collect())
}

/// Mean distance between index-corresponding points.
pub fn add_points(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    require_points(pred, "predicted point set")?;
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predicted vs {} ground-truth points",
            pred.len(),
            gt.len()
        )));
    }
    Ok(ordered_mean(
        pred.iter().zip(gt).map(|(a, b)| squared_distance(a, b).sqrt()),
        pred.len(),
    ))
}

/// Mean over `gt` of the distance to the closest point of `pred`.
pub fn adds_points(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    require_points(gt, "ground-truth point set")?;
    let d = nearest_distances(gt, pred)?;
    Ok(ordered_mean(d.into_iter(), gt.len()))
}

/// `½·(mean NN a→b + mean NN b→a)`.
pub fn chamfer_points(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64> {
    require_points(a, "first point set")?;
    require_points(b, "second point set")?;
    let ab = ordered_mean(nearest_distances(a, b)?.into_iter(), a.len());
    let ba = ordered_mean(nearest_distances(b, a)?.into_iter(), b.len());
    Ok(0.5 * (ab + ba))
}

/// A predicted and a ground-truth object, each a canonical mesh plus pose.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub pred_mesh: TriMesh,
    pub pred_pose: Pose,
    pub gt_mesh: TriMesh,
    pub gt_pose: Pose,
    pub sample_count: usize,
    pub sample_seed: u64,
}

impl EvalPair {
    pub fn new(pred_mesh: TriMesh, pred_pose: Pose, gt_mesh: TriMesh, gt_pose: Pose) -> Self {
        Self {
            pred_mesh,
            pred_pose,
            gt_mesh,
            gt_pose,
            sample_count: DEFAULT_SAMPLE_COUNT,
            sample_seed: DEFAULT_SAMPLE_SEED,
        }
    }

    /// Same mesh on both sides, so vertex indices correspond.
    pub fn shares_mesh(&self) -> bool {
        self.pred_mesh == self.gt_mesh
    }

    fn validate(&self) -> Result<()> {
        if self.pred_mesh.is_empty() || self.gt_mesh.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if self.sample_count == 0 {
            return Err(Error::InvalidConfig("sample_count must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical point sets: the shared vertices, or area samples of each
    /// mesh drawn with the same seed.
    fn canonical_points(&self) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
        self.validate()?;
        if self.shares_mesh() {
            let v = self.gt_mesh.vertices().to_vec();
            return Ok((v.clone(), v));
        }
        Ok((
            sample_surface(&self.pred_mesh, self.sample_count, self.sample_seed)?,
            sample_surface(&self.gt_mesh, self.sample_count, self.sample_seed)?,
        ))
    }

    fn posed_points(&self) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
        let (p, g) = self.canonical_points()?;
        Ok((pose_all(&self.pred_pose, &p), pose_all(&self.gt_pose, &g)))
    }
}

fn pose_all(pose: &Pose, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    points.iter().map(|p| pose.transform_point(p)).collect()
}

/// ADD in millimeters. Across different meshes each predicted sample is
/// matched once, in canonical coordinates, to its nearest ground-truth
/// sample; both are then posed.
pub fn add_metric(pair: &EvalPair) -> Result<f64> {
    let (pred, gt) = pair.canonical_points()?;
    let matched: Vec<Vector3<f64>> = if pair.shares_mesh() {
        gt
    } else {
        let tree = KdTree::new(&gt);
        pred.iter()
            .map(|p| tree.nearest(p).map(|(j, _)| gt[j]).ok_or(Error::EmptyMesh))
            .collect::<Result<_>>()?
    };
    let pred = pose_all(&pair.pred_pose, &pred);
    let matched = pose_all(&pair.gt_pose, &matched);
    Ok(add_points(&pred, &matched)? * METERS_TO_MM)
}

/// ADD-S in millimeters.
pub fn adds_metric(pair: &EvalPair) -> Result<f64> {
    let (pred, gt) = pair.posed_points()?;
    Ok(adds_points(&pred, &gt)? * METERS_TO_MM)
}

/// Chamfer distance in millimeters.
pub fn chamfer_metric(pair: &EvalPair) -> Result<f64> {
    let (pred, gt) = pair.posed_points()?;
    Ok(chamfer_points(&pred, &gt)? * METERS_TO_MM)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub add: f64,
    pub adds: f64,
    pub chamfer: f64,
}

impl MetricValues {
    pub fn zero() -> Self {
        Self {
            add: 0.0,
            adds: 0.0,
            chamfer: 0.0,
        }
    }

    fn mean_of<'a>(items: impl ExactSizeIterator<Item = &'a MetricValues>) -> Self {
        let n = items.len() as f64;
        let sum = items.fold(Self::zero(), |acc, v| Self {
            add: acc.add + v.add,
            adds: acc.adds + v.adds,
            chamfer: acc.chamfer + v.chamfer,
        });
        Self {
            add: sum.add / n,
            adds: sum.adds / n,
            chamfer: sum.chamfer / n,
        }
    }
}

pub fn evaluate_pair(pair: &EvalPair) -> Result<MetricValues> {
    Ok(MetricValues {
        add: add_metric(pair)?,
        adds: adds_metric(pair)?,
        chamfer: chamfer_metric(pair)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub name: String,
    pub category: String,
    #[serde(flatten)]
    pub values: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub category: String,
    pub count: usize,
    #[serde(flatten)]
    pub values: MetricValues,
}

/// Per-instance values, per-category means in category name order, and the
/// unweighted mean of the category means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub instances: Vec<InstanceMetrics>,
    pub categories: Vec<CategoryMetrics>,
    pub average: MetricValues,
}

pub fn aggregate(instances: Vec<InstanceMetrics>) -> Result<MetricsReport> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("no instances to aggregate"));
    }
    let mut groups: BTreeMap<&str, Vec<&MetricValues>> = BTreeMap::new();
    for inst in &instances {
        groups.entry(&inst.category).or_default().push(&inst.values);
    }
    let categories: Vec<CategoryMetrics> = groups
        .into_iter()
        .map(|(category, values)| CategoryMetrics {
            category: category.to_string(),
            count: values.len(),
            values: MetricValues::mean_of(values.into_iter()),
        })
        .collect();
    let average = MetricValues::mean_of(categories.iter().map(|c| &c.values));
    Ok(MetricsReport {
        instances,
        categories,
        average,
    })
}

impl MetricsReport {
    /// Aligned text table: one row per metric, one column per category plus
    /// the average.
    pub fn table(&self) -> String {
        let mut header = vec!["Metric (mm)".to_string()];
        header.extend(self.categories.iter().map(|c| c.category.clone()));
        header.push("Average".into());
        let mut rows = vec![header];
        let metric_rows: [(&str, fn(&MetricValues) -> f64); 3] = [
            ("ADD", |v| v.add),
            ("ADD-S", |v| v.adds),
            ("Ch.", |v| v.chamfer),
        ];
        for (label, get) in metric_rows {
            let mut row = vec![label.to_string()];
            row.extend(self.categories.iter().map(|c| format!("{:.2}", get(&c.values))));
            row.push(format!("{:.2}", get(&self.average)));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, &w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// One evaluation instance as listed in a manifest. Mesh paths are relative
/// to the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub category: String,
    pub pred_mesh: PathBuf,
    pub pred_pose: Pose,
    pub gt_mesh: PathBuf,
    pub gt_pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
    #[serde(default = "default_sample_seed")]
    pub sample_seed: u64,
    pub instances: Vec<ManifestEntry>,
}

fn default_sample_count() -> usize {
    DEFAULT_SAMPLE_COUNT
}

fn default_sample_seed() -> u64 {
    DEFAULT_SAMPLE_SEED
}

/// Loads every mesh, evaluates instances in parallel and aggregates in
/// manifest order.
pub fn evaluate_manifest(manifest: &EvalManifest, base_dir: &Path) -> Result<MetricsReport> {
    let resolve = |p: &Path| -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };
    let instances = manifest
        .instances
        .par_iter()
        .map(|e| {
            let pair = EvalPair {
                pred_mesh: load_mesh(resolve(&e.pred_mesh))?,
                pred_pose: e.pred_pose,
                gt_mesh: load_mesh(resolve(&e.gt_mesh))?,
                gt_pose: e.gt_pose,
                sample_count: manifest.sample_count,
                sample_seed: manifest.sample_seed,
            };
            Ok(InstanceMetrics {
                name: e.name.clone(),
                category: e.category.clone(),
                values: evaluate_pair(&pair)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(instances)
}
