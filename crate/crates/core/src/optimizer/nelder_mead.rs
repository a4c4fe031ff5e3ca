//! Nelder-Mead simplex search with dimension-adaptive coefficients.

#[derive(Debug, Clone)]
#[allow(dead_code)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub max_iters: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// ... and the simplex is no wider than this in every coordinate.
    pub x_tol: f64,
}

pub(crate) fn minimize<F>(f: F, x0: &[f64], steps: &[f64], settings: Settings) -> Outcome
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Outcome {
            f: f(x0),
            x: x0.to_vec(),
            iterations: 0,
            converged: true,
        };
    }
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();

    let mut order: Vec<usize> = (0..=n).collect();
    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];

    while iterations < settings.max_iters {
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        let best = order[0];
        let worst = order[n];
        let second = order[n - 1];

        let spread = values[worst] - values[best];
        let width = (0..n)
            .map(|k| {
                simplex
                    .iter()
                    .map(|v| (v[k] - simplex[best][k]).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.abs() <= settings.f_tol && width <= settings.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                *c += v / nf;
            }
        }
        let along = |t: f64, out: &mut Vec<f64>| {
            for k in 0..n {
                out[k] = centroid[k] + t * (simplex[worst][k] - centroid[k]);
            }
        };

        along(-alpha, &mut trial);
        let fr = f(&trial);
        if fr < values[best] {
            along(-alpha * gamma, &mut trial2);
            let fe = f(&trial2);
            if fe < fr {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = fe;
            } else {
                simplex[worst].copy_from_slice(&trial);
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second] {
            simplex[worst].copy_from_slice(&trial);
            values[worst] = fr;
            continue;
        }
        // Contraction, outside or inside.
        let (t, reference) = if fr < values[worst] { (-alpha * rho, fr) } else { (rho, values[worst]) };
        along(t, &mut trial2);
        let fc = f(&trial2);
        if fc <= reference {
            simplex[worst].copy_from_slice(&trial2);
            values[worst] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        let anchor = simplex[best].clone();
        for &i in &order[1..] {
            for k in 0..n {
                simplex[i][k] = anchor[k] + sigma * (simplex[i][k] - anchor[k]);
            }
            values[i] = f(&simplex[i]);
        }
    }

    let best = (0..=n).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
    Outcome {
        x: simplex[best].clone(),
        f: values[best],
        iterations,
        converged,
    }
}
