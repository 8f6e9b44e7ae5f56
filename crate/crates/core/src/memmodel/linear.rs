/// Line `y = m*x + b` through consecutive cells, offsets base-relative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearSegment {
    pub m: i128,
    pub b: i128,
    pub first_offset: u64,
    pub last_offset: u64,
    pub points: usize,
}

impl std::fmt::Display for LinearSegment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{:+}", self.m, self.b)
    }
}

impl LinearSegment {
    pub fn value_at(&self, x: u64) -> Option<i128> {
        self.m.checked_mul(x as i128)?.checked_add(self.b)
    }

    /// Largest `|m*x| + |b|` over the covered offsets.
    pub fn magnitude(&self) -> Option<u128> {
        self.m
            .unsigned_abs()
            .checked_mul(self.last_offset as u128)?
            .checked_add(self.b.unsigned_abs())
    }
}

/// Integer slope between two points, if exact.
fn slope(p: (u64, u128), q: (u64, u128)) -> Option<i128> {
    let dx = (q.0 as i128).checked_sub(p.0 as i128)?;
    let dy = i128::try_from(q.1).ok()?.checked_sub(i128::try_from(p.1).ok()?)?;
    (dx != 0 && dy % dx == 0).then(|| dy / dx)
}

/// Greedy left-to-right fit of integer-coefficient lines through runs of
/// points. `points` must be sorted by offset; lines only span points that are
/// adjacent in the slice.
pub fn linearize(points: &[(u64, u128)]) -> (Vec<LinearSegment>, Vec<(u64, u128)>) {
    let mut segments = Vec::new();
    let mut leftovers = Vec::new();
    let mut i = 0;
    while i < points.len() {
        let fit = points.get(i + 1).and_then(|&q| {
            let p = points[i];
            let m = slope(p, q)?;
            let b = i128::try_from(p.1).ok()?.checked_sub(m.checked_mul(p.0 as i128)?)?;
            Some((m, b))
        });
        let Some((m, b)) = fit else {
            leftovers.push(points[i]);
            i += 1;
            continue;
        };
        let mut j = i + 2;
        while let Some(&(x, y)) = points.get(j) {
            let on_line = m
                .checked_mul(x as i128)
                .and_then(|v| v.checked_add(b))
                .is_some_and(|v| i128::try_from(y) == Ok(v));
            if !on_line {
                break;
            }
            j += 1;
        }
        segments.push(LinearSegment {
            m,
            b,
            first_offset: points[i].0,
            last_offset: points[j - 1].0,
            points: j - i,
        });
        i = j;
    }
    (segments, leftovers)
}

/// Groups leftover points by equal value (groups of two or more, in order of
/// first occurrence, offsets ascending); the rest are singles.
pub fn merge_horizontal(leftovers: &[(u64, u128)]) -> (Vec<(u128, Vec<u64>)>, Vec<(u64, u128)>) {
    let mut order: Vec<(u128, Vec<u64>)> = Vec::new();
    for &(x, y) in leftovers {
        match order.iter_mut().find(|(v, _)| *v == y) {
            Some((_, xs)) => xs.push(x),
            None => order.push((y, vec![x])),
        }
    }
    let mut groups = Vec::new();
    let mut singles = Vec::new();
    for (v, mut xs) in order {
        if xs.len() >= 2 {
            xs.sort_unstable();
            groups.push((v, xs));
        } else {
            singles.push((xs[0], v));
        }
    }
    singles.sort_unstable();
    (groups, singles)
}
