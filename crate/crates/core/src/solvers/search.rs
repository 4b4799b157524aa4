//! Pilot-assignment search: net-SE objective, tabu refinement and the
//! exhaustive partition oracle.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pilot::PilotAssignment;
use crate::scalar::Scalar;
use crate::sim::{evaluate_frame, ChannelSet, LinkParams};
use crate::solvers::power::{equal_power, wmmse_power, WmmseOptions};

/// Largest UE count the oracle accepts (Bell(7) = 877 candidates).
pub const ORACLE_MAX_K: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerRule {
    Equal,
    Wmmse,
}

/// Frame-average net-SE of a labeled assignment under `rule`. The pilot
/// length is the number of distinct labels.
pub fn objective<T: Scalar>(ch: &ChannelSet<T>, labels: &[usize], params: &LinkParams<T>, rule: PowerRule) -> Result<T> {
    let x = PilotAssignment::from_labels(labels, labels.len())?;
    let tau_p = x.psi();
    let eval = evaluate_frame(ch, &x, tau_p, params, |_, state| match rule {
        PowerRule::Equal => Ok(equal_power(&ch.assoc, params.p_max)),
        PowerRule::Wmmse => {
            Ok(wmmse_power(&state.g_hat, &ch.assoc, params.p_max, params.noise_ue, WmmseOptions::default())?.power)
        }
    })?;
    Ok(eval.average)
}

/// Relabels to first-occurrence order, so `[2, 0, 2]` becomes `[0, 1, 0]`.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().find(|(from, _)| *from == l) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len();
                map.push((l, to));
                to
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabuOptions {
    pub tenure: usize,
    pub max_iter: usize,
}

impl TabuOptions {
    pub fn for_ues(k: usize) -> Self {
        Self { tenure: k, max_iter: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult<T> {
    pub labels: Vec<usize>,
    pub objective: T,
    pub evaluations: usize,
}

/// Tabu search over single-UE reassignments. A move puts UE `k` on any
/// occupied sequence or on the lowest free one; moving `k` back to a
/// sequence it recently left is tabu unless it beats the best so far.
pub fn tabu_refine<T: Scalar>(
    ch: &ChannelSet<T>,
    start: &[usize],
    params: &LinkParams<T>,
    opts: TabuOptions,
) -> Result<SearchResult<T>> {
    let k = start.len();
    if k != ch.k() {
        return Err(Error::Shape(format!("{} labels for {} UEs", k, ch.k())));
    }
    let mut current = canonical_labels(start);
    let mut current_obj = objective(ch, &current, params, PowerRule::Equal)?;
    let mut best = SearchResult { labels: current.clone(), objective: current_obj, evaluations: 1 };
    // (ue, sequence, expiry iteration)
    let mut tabu: Vec<(usize, usize, usize)> = Vec::new();
    for iter in 0..opts.max_iter {
        tabu.retain(|&(_, _, until)| until > iter);
        let used: Vec<usize> = {
            let mut u = current.clone();
            u.sort_unstable();
            u.dedup();
            u
        };
        let free = (0..k).find(|g| !used.contains(g));
        let moves: Vec<(usize, usize)> = (0..k)
            .flat_map(|ue| used.iter().copied().chain(free).map(move |g| (ue, g)))
            .filter(|&(ue, g)| current[ue] != g)
            .collect();
        if moves.is_empty() {
            break;
        }
        let scored: Vec<(usize, usize, T)> = moves
            .par_iter()
            .map(|&(ue, g)| {
                let mut cand = current.clone();
                cand[ue] = g;
                objective(ch, &cand, params, PowerRule::Equal).map(|v| (ue, g, v))
            })
            .collect::<Result<_>>()?;
        best.evaluations += scored.len();
        let admissible = scored.iter().filter(|&&(ue, g, v)| {
            !tabu.iter().any(|&(tu, tg, _)| tu == ue && tg == g) || v > best.objective
        });
        let Some(&(ue, g, v)) = admissible.fold(None, |acc: Option<&(usize, usize, T)>, m| match acc {
            Some(a) if a.2 >= m.2 => Some(a),
            _ => Some(m),
        }) else {
            break;
        };
        tabu.push((ue, current[ue], iter + 1 + opts.tenure));
        if tabu.len() > opts.tenure {
            tabu.remove(0);
        }
        current[ue] = g;
        current_obj = v;
        if current_obj > best.objective {
            best.labels = canonical_labels(&current);
            best.objective = current_obj;
        }
    }
    Ok(best)
}

/// Every set partition of `k` items as a restricted-growth string.
pub fn set_partitions(k: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, max: usize, k: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == k {
            out.push(prefix.clone());
            return;
        }
        let limit = if prefix.is_empty() { 0 } else { max + 1 };
        for l in 0..=limit {
            prefix.push(l);
            extend(prefix, max.max(l), k, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        extend(&mut Vec::with_capacity(k), 0, k, &mut out);
    }
    out
}

/// Best assignment over all `Bell(K)` partitions.
pub fn exhaustive_oracle<T: Scalar>(ch: &ChannelSet<T>, params: &LinkParams<T>, rule: PowerRule) -> Result<SearchResult<T>> {
    let k = ch.k();
    if k > ORACLE_MAX_K {
        return Err(Error::Refused(format!("oracle enumerates at most {ORACLE_MAX_K} UEs, got {k}")));
    }
    let parts = set_partitions(k);
    let scored: Vec<(usize, T)> = parts
        .par_iter()
        .enumerate()
        .map(|(i, l)| objective(ch, l, params, rule).map(|v| (i, v)))
        .collect::<Result<_>>()?;
    let (i, v) = scored
        .iter()
        .copied()
        .fold(None, |acc: Option<(usize, T)>, (i, v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((i, v)),
        })
        .expect("at least one partition");
    Ok(SearchResult { labels: parts[i].clone(), objective: v, evaluations: parts.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Grid;
    use crate::sim::{Association, SystemConfig};

    #[test]
    fn bell_numbers() {
        let bell = [1, 1, 2, 5, 15, 52, 203, 877];
        for (k, &b) in bell.iter().enumerate().skip(1) {
            assert_eq!(set_partitions(k).len(), b);
        }
        for p in set_partitions(4) {
            assert_eq!(canonical_labels(&p), p);
        }
    }

    #[test]
    fn canonical_first_occurrence() {
        assert_eq!(canonical_labels(&[2, 0, 2, 5]), vec![0, 1, 0, 2]);
    }

    fn tiny(k: usize, tau_c: usize) -> (ChannelSet<f64>, LinkParams<f64>) {
        let mut cfg = SystemConfig::desk().with_scale(2, 2, k);
        cfg.tau_c = tau_c;
        cfg.n_t = 2;
        let (_, ch) = ChannelSet::generate(&cfg, 11).unwrap();
        (ch, LinkParams::from_config(&cfg))
    }

    #[test]
    fn oracle_single_ue() {
        let (ch, p) = tiny(1, 50);
        let r = exhaustive_oracle(&ch, &p, PowerRule::Equal).unwrap();
        assert_eq!(r.labels, vec![0]);
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn oracle_refuses_large() {
        let (ch, p) = tiny(8, 50);
        assert!(matches!(exhaustive_oracle(&ch, &p, PowerRule::Equal), Err(Error::Refused(_))));
    }

    #[test]
    fn far_apart_ues_share_with_tiny_coherence() {
        let cfg = {
            let mut c = SystemConfig::desk().with_scale(2, 1, 2);
            c.tau_c = 3;
            c.n_t = 3;
            c
        };
        // each UE hears only its own AP
        let beta = Grid::from_rows(vec![vec![1e-7, 1e-16], vec![1e-16, 1e-7]]).unwrap();
        let assoc = Association::new(Grid::from_rows(vec![vec![true, false], vec![false, true]]).unwrap()).unwrap();
        let ch = ChannelSet::with_association(&cfg, beta, assoc, 5).unwrap();
        let p = LinkParams::from_config(&cfg);
        let shared = objective(&ch, &[0, 0], &p, PowerRule::Equal).unwrap();
        let orth = objective(&ch, &[0, 1], &p, PowerRule::Equal).unwrap();
        assert!(shared > orth);
        assert_eq!(exhaustive_oracle(&ch, &p, PowerRule::Equal).unwrap().labels, vec![0, 0]);
    }

    #[test]
    fn tabu_never_worse_and_valid() {
        let (ch, p) = tiny(5, 50);
        let start = vec![0, 1, 2, 3, 4];
        let before = objective(&ch, &start, &p, PowerRule::Equal).unwrap();
        let r = tabu_refine(&ch, &start, &p, TabuOptions::for_ues(5)).unwrap();
        assert!(r.objective >= before);
        assert_eq!(r.labels.len(), 5);
        PilotAssignment::<f64>::from_labels(&r.labels, 5).unwrap();
        assert!((objective(&ch, &r.labels, &p, PowerRule::Equal).unwrap() - r.objective).abs() < 1e-12);
    }

    #[test]
    fn tabu_at_optimum_stays() {
        let (ch, p) = tiny(4, 50);
        let opt = exhaustive_oracle(&ch, &p, PowerRule::Equal).unwrap();
        let r = tabu_refine(&ch, &opt.labels, &p, TabuOptions::for_ues(4)).unwrap();
        assert!((r.objective - opt.objective).abs() < 1e-12);
    }
}
