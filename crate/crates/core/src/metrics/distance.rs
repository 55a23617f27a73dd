//! Surface extraction and exact Euclidean distance transforms.

use crate::phantom::{voxel_count, Extents};

/// Foreground voxels with at least one 6-connected background neighbour;
/// positions outside the volume count as background.
pub fn boundary(mask: &[bool], extents: Extents) -> Vec<bool> {
    let [d, h, w] = extents;
    let at = |z: usize, y: usize, x: usize| mask[(z * h + y) * w + x];
    let mut out = vec![false; mask.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !at(z, y, x) {
                    continue;
                }
                let interior = z > 0
                    && z + 1 < d
                    && y > 0
                    && y + 1 < h
                    && x > 0
                    && x + 1 < w
                    && at(z - 1, y, x)
                    && at(z + 1, y, x)
                    && at(z, y - 1, x)
                    && at(z, y + 1, x)
                    && at(z, y, x - 1)
                    && at(z, y, x + 1);
                out[(z * h + y) * w + x] = !interior;
            }
        }
    }
    out
}

/// Lower envelope of parabolas along one line (Felzenszwalb & Huttenlocher).
/// `f` holds squared distances (`INFINITY` where unknown) and is overwritten.
fn transform_line(f: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            let Some(&v) = sites.last() else {
                sites.push(q);
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            let s = (fq - (f[v] + (v * v) as f64)) / (2.0 * (q - v) as f64);
            if s <= *bounds.last().expect("bounds tracks sites") {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                bounds.push(s);
                break;
            }
        }
    }
    if sites.is_empty() {
        return;
    }
    let values: Vec<f64> = sites.iter().map(|&v| f[v]).collect();
    let mut k = 0;
    for q in 0..f.len() {
        while k + 1 < sites.len() && bounds[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - sites[k] as f64;
        f[q] = dq * dq + values[k];
    }
}

/// Squared Euclidean distance from every voxel to the nearest `true` site,
/// `INFINITY` when there are no sites.
pub fn squared_distance_transform(sites: &[bool], extents: Extents) -> Vec<f64> {
    let [d, h, w] = extents;
    debug_assert_eq!(sites.len(), voxel_count(extents));
    let mut dist: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let mut line = Vec::new();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    // (length, stride, starting offsets) for each axis pass
    let passes: [(usize, usize, Vec<usize>); 3] = [
        (w, 1, (0..d * h).map(|r| r * w).collect()),
        (h, w, (0..d).flat_map(|zz| (0..w).map(move |x| zz * h * w + x)).collect()),
        (d, h * w, (0..h * w).collect()),
    ];
    for (len, stride, starts) in passes {
        for start in starts {
            line.clear();
            line.extend((0..len).map(|i| dist[start + i * stride]));
            transform_line(&mut line, &mut v, &mut z);
            for (i, &val) in line.iter().enumerate() {
                dist[start + i * stride] = val;
            }
        }
    }
    dist
}
