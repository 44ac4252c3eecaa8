//! Per-match displacement votes reduced to a single action.

use crate::environment::Action;

use super::matching::Match;
use super::Keypoint;

/// Displacement in an x-right, y-up frame: `(x_c - x_t, y_t - y_c)` in raw
/// image rows. Positive x means the target lies to the right, positive y
/// means it lies above.
pub fn displacement(current: &Keypoint, target: &Keypoint) -> (f64, f64) {
    (current.x - target.x, target.y - current.y)
}

pub fn vote(d: (f64, f64), zero_px: f64) -> Action {
    let (dx, dy) = d;
    if dx.abs() <= zero_px && dy.abs() <= zero_px {
        Action::Stop
    } else if dx.abs() > dy.abs() {
        if dx > 0.0 {
            Action::Right
        } else {
            Action::Left
        }
    } else if dy > 0.0 {
        Action::Up
    } else {
        Action::Down
    }
}

/// Most frequent vote; among equally frequent votes the first cast wins.
pub fn mode(votes: &[Action]) -> Option<Action> {
    let mut counts = [0usize; 5];
    let mut first = [usize::MAX; 5];
    for (i, v) in votes.iter().enumerate() {
        let k = v.index();
        counts[k] += 1;
        first[k] = first[k].min(i);
    }
    (0..5)
        .filter(|&k| counts[k] > 0)
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(first[b].cmp(&first[a])))
        .map(|k| Action::ALL[k])
}

/// Votes of all matches with `distance <= d_thresh` (`None` keeps every
/// match). Without votes the previous action is repeated.
pub fn consensus(
    matches: &[Match],
    kps_current: &[Keypoint],
    kps_target: &[Keypoint],
    prev: Action,
    d_thresh: Option<u32>,
    zero_px: f64,
) -> Action {
    let votes: Vec<Action> = matches
        .iter()
        .filter(|m| d_thresh.is_none_or(|t| m.distance <= t))
        .map(|m| vote(displacement(&kps_current[m.current], &kps_target[m.target]), zero_px))
        .collect();
    mode(&votes).unwrap_or(prev)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(x: f64, y: f64) -> Keypoint {
        Keypoint {
            x,
            y,
            angle: 0.0,
            response: 1.0,
        }
    }

    fn shifted(n: usize, dx: f64, dy: f64) -> (Vec<Match>, Vec<Keypoint>, Vec<Keypoint>) {
        let target: Vec<Keypoint> = (0..n).map(|i| kp(50.0 + i as f64, 80.0)).collect();
        // y-up displacement dy means the current point sits dy rows higher
        let current = target.iter().map(|k| kp(k.x + dx, k.y - dy)).collect();
        let matches = (0..n)
            .map(|i| Match {
                current: i,
                target: i,
                distance: 5,
            })
            .collect();
        (matches, current, target)
    }

    #[test]
    fn dominant_axis_examples() {
        let (m, c, t) = shifted(12, 20.0, 1.0);
        assert_eq!(consensus(&m, &c, &t, Action::Left, None, 1.0), Action::Right);
        let (m, c, t) = shifted(12, -3.0, 9.0);
        assert_eq!(consensus(&m, &c, &t, Action::Left, None, 1.0), Action::Up);
        let (m, c, t) = shifted(12, 2.0, -9.0);
        assert_eq!(consensus(&m, &c, &t, Action::Left, None, 1.0), Action::Down);
        let (m, c, t) = shifted(12, 0.5, -1.0);
        assert_eq!(consensus(&m, &c, &t, Action::Left, None, 1.0), Action::Stop);
    }

    #[test]
    fn mode_and_ties() {
        use Action::*;
        assert_eq!(mode(&[Right, Up, Right, Up, Right]), Some(Right));
        assert_eq!(mode(&[Up, Right, Right, Up]), Some(Up));
        assert_eq!(mode(&[]), None);
    }

    #[test]
    fn threshold_filters_and_empty_falls_back() {
        let (m, c, t) = shifted(5, 20.0, 0.0);
        assert_eq!(consensus(&m, &c, &t, Action::Down, Some(4), 1.0), Action::Down);
        assert_eq!(consensus(&m, &c, &t, Action::Down, Some(5), 1.0), Action::Right);
        assert_eq!(consensus(&[], &c, &t, Action::Left, None, 1.0), Action::Left);
    }

    #[test]
    fn unanimous_votes_ignore_prev() {
        for prev in Action::ALL {
            let (m, c, t) = shifted(3, -7.0, 2.0);
            assert_eq!(consensus(&m, &c, &t, prev, None, 1.0), Action::Left);
        }
    }
}
