//! Unweighted pool-adjacent-violators projection onto nondecreasing vectors.

/// Least-squares projection of `values` onto the cone of nondecreasing
/// sequences, in place.
pub fn project_nondecreasing(values: &mut [f64]) {
    // Each block is (sum, count); blocks are merged while their means violate order.
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values.iter() {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 <= s1 / c1 as f64 {
                break;
            }
            blocks.pop();
            let last = blocks.len() - 1;
            blocks[last] = (s0 + s1, c0 + c1);
        }
    }
    let mut pos = 0;
    for (sum, count) in blocks {
        let mean = sum / count as f64;
        values[pos..pos + count].fill(mean);
        pos += count;
    }
}
