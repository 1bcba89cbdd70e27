use crate::error::{Error, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; zero-length input is an error.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding("cosine of a zero vector".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Hinge triplet loss `max(0, γ − cos(m, m₊) + cos(m, m₋))`.
pub fn triplet_loss(m: &[f64], pos: &[f64], neg: &[f64], gamma: f64) -> Result<f64> {
    Ok((gamma - cosine(m, pos)? + cosine(m, neg)?).max(0.0))
}

/// d cos(a, b) / d a.
fn cosine_grad(a: &[f64], b: &[f64]) -> Vec<f64> {
    let (na, nb) = (norm(a), norm(b));
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| y / (na * nb) - c * x / (na * na))
        .collect()
}

/// Loss and its (sub)gradient with respect to each of the three inputs. At
/// the kink and on the flat side the gradient is zero.
pub fn triplet_loss_grad(
    m: &[f64],
    pos: &[f64],
    neg: &[f64],
    gamma: f64,
) -> Result<(f64, [Vec<f64>; 3])> {
    let loss = triplet_loss(m, pos, neg, gamma)?;
    if loss <= 0.0 {
        let z = vec![0.0; m.len()];
        return Ok((0.0, [z.clone(), z.clone(), z]));
    }
    let dm: Vec<f64> = cosine_grad(m, neg)
        .iter()
        .zip(cosine_grad(m, pos))
        .map(|(n, p)| n - p)
        .collect();
    let dpos: Vec<f64> = cosine_grad(pos, m).iter().map(|x| -x).collect();
    let dneg = cosine_grad(neg, m);
    Ok((loss, [dm, dpos, dneg]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_cases() {
        let m = [1.0, 0.0, 0.0];
        let neg = [-1.0, 0.0, 0.0];
        assert_eq!(triplet_loss(&m, &m, &neg, 0.2).unwrap(), 0.0);
        let pos = [0.0, 1.0, 0.0];
        let neg = [0.0, 0.0, 1.0];
        assert!((triplet_loss(&m, &pos, &neg, 0.2).unwrap() - 0.2).abs() < 1e-15);
        assert!(triplet_loss(&m, &[0.0; 3], &neg, 0.2).is_err());
    }
}
