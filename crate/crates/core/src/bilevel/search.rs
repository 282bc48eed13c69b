/// Minimizes `f` over a box with Nelder–Mead, projecting trial points onto the box.
///
/// `f` returns `None` for points where the objective is undefined; those are
/// treated as worse than any defined value. Returns the best point and value.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> Option<f64>,
    start: &[f64],
    steps: &[f64],
    lower: &[f64],
    upper: &[f64],
    max_evaluations: usize,
    tolerance: f64,
) -> Option<(Vec<f64>, f64)> {
    let n = start.len();
    let project = |x: Vec<f64>| -> Vec<f64> { x.iter().enumerate().map(|(i, v)| v.clamp(lower[i], upper[i])).collect() };
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        f(x).unwrap_or(f64::INFINITY)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let x0 = project(start.to_vec());
    let f0 = eval(&x0, &mut evals);
    simplex.push((x0.clone(), f0));
    for i in 0..n {
        if evals >= max_evaluations {
            break;
        }
        let mut x = x0.clone();
        x[i] += steps[i];
        if x[i] > upper[i] {
            x[i] = x0[i] - steps[i];
        }
        let x = project(x);
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    while simplex.len() == n + 1 && evals < max_evaluations {
        order(&mut simplex);
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (spread.is_finite() && spread.abs() <= tolerance) || size <= tolerance {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|i| simplex[..n].iter().map(|(x, _)| x[i]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            project(centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect())
        };
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            if evals >= max_evaluations {
                simplex[n] = (xr, fr);
                break;
            }
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            if evals >= max_evaluations {
                break;
            }
            let (xc, fc) = if fr < worst.1 {
                let x = along(0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    if evals >= max_evaluations {
                        break;
                    }
                    let x: Vec<f64> = best.iter().zip(&s.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let fx = eval(&x, &mut evals);
                    *s = (x, fx);
                }
            }
        }
    }
    order(&mut simplex);
    simplex.into_iter().next().filter(|s| s.1.is_finite())
}
