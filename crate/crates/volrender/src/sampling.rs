use rand::Rng;

/// One sample per equal bin of `[near, far]`: bin midpoints, or uniform
/// positions within each bin when `jitter` is given.
pub fn stratified_samples<R: Rng + ?Sized>(near: f64, far: f64, n: usize, jitter: Option<&mut R>) -> Vec<f64> {
    let step = (far - near) / n as f64;
    match jitter {
        None => (0..n).map(|i| near + (i as f64 + 0.5) * step).collect(),
        Some(rng) => (0..n)
            .map(|i| (near + (i as f64 + rng.random::<f64>()) * step).min(far))
            .collect(),
    }
}

/// The `n + 1` edges of the equal bins used by [`stratified_samples`].
pub fn bin_edges(near: f64, far: f64, n: usize) -> Vec<f64> {
    let step = (far - near) / n as f64;
    (0..=n).map(|i| if i == n { far } else { near + i as f64 * step }).collect()
}

/// Inverse-CDF draws from the piecewise-constant density with mass
/// `weights[i]` on `[edges[i], edges[i + 1]]`, sorted ascending. All-zero
/// weights fall back to a uniform density.
pub fn importance_samples<R: Rng + ?Sized>(edges: &[f64], weights: &[f64], m: usize, rng: &mut R) -> Vec<f64> {
    assert_eq!(edges.len(), weights.len() + 1, "one weight per bin");
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let uniform = !(total > 0.0);
    let mass = |i: usize| if uniform { 1.0 / weights.len() as f64 } else { weights[i].max(0.0) / total };
    let mut cdf = Vec::with_capacity(edges.len());
    cdf.push(0.0);
    for i in 0..weights.len() {
        cdf.push(cdf[i] + mass(i));
    }
    let mut out: Vec<f64> = (0..m)
        .map(|_| {
            let u = rng.random::<f64>() * cdf[weights.len()];
            let mut i = cdf.partition_point(|&c| c <= u).saturating_sub(1).min(weights.len() - 1);
            while mass(i) == 0.0 {
                // u sat exactly on the upper edge of an empty stretch
                i += 1;
            }
            let f = ((u - cdf[i]) / mass(i)).clamp(0.0, 1.0);
            edges[i] + f * (edges[i + 1] - edges[i])
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Merge two ascending lists.
pub fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] <= b[j]) {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out
}

/// Segment lengths: `t[i + 1] - t[i]`, and `far - t[last]` for the last sample.
pub fn deltas(t: &[f64], far: f64) -> Vec<f64> {
    let mut d: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(&last) = t.last() {
        d.push((far - last).max(0.0));
    }
    d
}
