//! Ratcliff/Obershelp string similarity, `2M / (|a| + |b|)` where `M` is the
//! number of chars in the recursively found longest common blocks.
//!
//! Longest-block ties go to the earliest start in the first string, then in
//! the second. That rule alone is not symmetric, so both entry points order
//! their arguments lexicographically first.

fn canonical<'a>(a: &'a [char], b: &'a [char]) -> (&'a [char], &'a [char]) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Longest common block of `a[alo..ahi]` and `b[blo..bhi]` as `(i, j, len)`.
#[allow(clippy::needless_range_loop)]
fn longest_block(a: &[char], b: &[char], alo: usize, ahi: usize, blo: usize, bhi: usize) -> (usize, usize, usize) {
    let width = bhi - blo;
    let mut prev = vec![0usize; width + 1];
    let mut cur = vec![0usize; width + 1];
    let mut best = (alo, blo, 0);
    for i in alo..ahi {
        for j in blo..bhi {
            let k = j - blo + 1;
            cur[k] = if a[i] == b[j] { prev[k - 1] + 1 } else { 0 };
            if cur[k] > best.2 {
                best = (i + 1 - cur[k], j + 1 - cur[k], cur[k]);
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

fn matching_chars_ordered(a: &[char], b: &[char]) -> usize {
    let mut total = 0;
    let mut stack = vec![(0, a.len(), 0, b.len())];
    while let Some((alo, ahi, blo, bhi)) = stack.pop() {
        if alo >= ahi || blo >= bhi {
            continue;
        }
        let (i, j, k) = longest_block(a, b, alo, ahi, blo, bhi);
        if k == 0 {
            continue;
        }
        total += k;
        stack.push((alo, i, blo, j));
        stack.push((i + k, ahi, j + k, bhi));
    }
    total
}

/// Number of matched chars `M`.
pub fn matching_chars(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (x, y) = canonical(&a, &b);
    matching_chars_ordered(x, y)
}

/// Similarity in `[0, 1]`; two empty strings score 1.
pub fn similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    let (x, y) = canonical(&a, &b);
    2.0 * matching_chars_ordered(x, y) as f64 / total as f64
}
