//! Dense two-phase simplex (Bland's rule) used as an independent oracle for l1 minimisation.

/// Minimises `cost·x` subject to `a·x = b`, `x ≥ 0`. Returns `(objective, x)` or `None` when
/// infeasible or unbounded.
pub fn simplex(a: &[Vec<f64>], b: &[f64], cost: &[f64]) -> Option<(f64, Vec<f64>)> {
    const TOL: f64 = 1e-11;
    let m = a.len();
    let n = cost.len();
    let width = n + m + 1;
    let rhs = width - 1;
    let mut t = vec![vec![0.0; width]; m];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[i][j];
        }
        t[i][n + i] = 1.0;
        t[i][rhs] = sign * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, c: &[f64], allowed: usize| -> bool {
        loop {
            let mut entering = None;
            for j in 0..allowed {
                if basis.contains(&j) {
                    continue;
                }
                let reduced = c[j] - (0..m).map(|i| c[basis[i]] * t[i][j]).sum::<f64>();
                if reduced < -TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else { return true };
            let mut leave: Option<usize> = None;
            for i in 0..m {
                if t[i][j] > TOL {
                    let ratio = t[i][rhs] / t[i][j];
                    match leave {
                        None => leave = Some(i),
                        Some(l) => {
                            let best = t[l][rhs] / t[l][j];
                            if ratio < best - TOL || ((ratio - best).abs() <= TOL && basis[i] < basis[l]) {
                                leave = Some(i);
                            }
                        }
                    }
                }
            }
            let Some(r) = leave else { return false };
            pivot(t, r, j);
            basis[r] = j;
        }
    };

    // phase 1
    let mut c1 = vec![0.0; n + m];
    for v in c1.iter_mut().skip(n) {
        *v = 1.0;
    }
    if !run(&mut t, &mut basis, &c1, n + m) {
        return None;
    }
    let infeas: f64 = (0..m).filter(|&i| basis[i] >= n).map(|i| t[i][rhs]).sum();
    if infeas > 1e-9 {
        return None;
    }
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| !basis.contains(&j) && t[i][j].abs() > TOL) {
                pivot(&mut t, i, j);
                basis[i] = j;
            }
        }
    }

    // phase 2
    let mut c2 = cost.to_vec();
    c2.extend(std::iter::repeat_n(0.0, m));
    if !run(&mut t, &mut basis, &c2, n) {
        return None;
    }
    let mut x = vec![0.0; n];
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = t[i][rhs];
        }
    }
    let obj = x.iter().zip(cost).map(|(a, b)| a * b).sum();
    Some((obj, x))
}

fn pivot(t: &mut [Vec<f64>], r: usize, c: usize) {
    let p = t[r][c];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let row = t[r].clone();
    for (i, line) in t.iter_mut().enumerate() {
        if i != r {
            let f = line[c];
            if f != 0.0 {
                for (v, rv) in line.iter_mut().zip(&row) {
                    *v -= f * rv;
                }
            }
        }
    }
}

/// Exact minimum of `‖c‖₁` subject to `D·c = a` via the split `c = p − q`, `p, q ≥ 0`.
/// `d` is row-major with `m` rows of length `n`.
pub fn l1_equality_optimum(d: &[Vec<f64>], a: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = d[0].len();
    let split: Vec<Vec<f64>> = d
        .iter()
        .map(|row| row.iter().copied().chain(row.iter().map(|v| -v)).collect())
        .collect();
    let cost = vec![1.0; 2 * n];
    let (obj, x) = simplex(&split, a, &cost)?;
    let c = (0..n).map(|j| x[j] - x[n + j]).collect();
    Some((obj, c))
}
