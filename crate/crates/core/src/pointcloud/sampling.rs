use super::{Point3, PointCloud};
use crate::error::{Error, Result};

/// Index of the point nearest the cloud centroid (ties by smallest index).
pub fn default_fps_seed(cloud: &PointCloud) -> usize {
    let c = cloud.centroid();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in cloud.points.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Greedy farthest-point sampling starting at `seed_index`.
///
/// Each step picks the point whose minimum distance to the selected set is
/// largest; ties go to the smallest index.
pub fn fps(cloud: &PointCloud, count: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if count > n {
        return Err(Error::CountExceeds {
            requested: count,
            available: n,
        });
    }
    if seed_index >= n {
        return Err(Error::InvalidArgument(format!(
            "seed index {seed_index} out of range for {n} points"
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let pts: &[Point3] = &cloud.points;
    let mut min_d = vec![f64::INFINITY; n];
    let mut selected = Vec::with_capacity(count);
    let mut taken = vec![false; n];
    let mut current = seed_index;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == count {
            break;
        }
        let anchor = pts[current];
        let mut next = usize::MAX;
        let mut next_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            let d = (p - anchor).norm_squared();
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && min_d[i] > next_d {
                next_d = min_d[i];
                next = i;
            }
        }
        current = next;
    }
    Ok(selected)
}
