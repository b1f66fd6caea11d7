//! Staged vote resolution: three member votes, then a group leader, a
//! second leader, and finally an expert, each consulted only when the
//! previous stage has no unique winner.

use serde::Serialize;

use super::records::AnnotationRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Escalation {
    Leader,
    SecondLeader,
    Expert,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Resolution {
    /// `stage` is 1 (members), 2 (+leader), 3 (+second leader) or 4 (expert).
    Decided { label: usize, stage: u8 },
    /// The next vote needed to continue is missing.
    Pending { needs: Escalation },
}

/// The label strictly more frequent than every other, if any.
pub fn unique_mode(votes: &[usize]) -> Option<usize> {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &v in votes {
        match counts.iter_mut().find(|(l, _)| *l == v) {
            Some((_, c)) => *c += 1,
            None => counts.push((v, 1)),
        }
    }
    let best = counts.iter().map(|&(_, c)| c).max()?;
    let mut winners = counts.iter().filter(|&&(_, c)| c == best);
    let first = winners.next()?.0;
    winners.next().is_none().then_some(first)
}

pub fn resolve_votes(
    members: [usize; 3],
    leader: Option<usize>,
    leader2: Option<usize>,
    expert: Option<usize>,
) -> Resolution {
    let mut votes = members.to_vec();
    if let Some(label) = unique_mode(&votes) {
        return Resolution::Decided { label, stage: 1 };
    }
    let stages = [(leader, Escalation::Leader), (leader2, Escalation::SecondLeader)];
    for (stage, (vote, role)) in (2u8..).zip(stages) {
        let Some(v) = vote else {
            return Resolution::Pending { needs: role };
        };
        votes.push(v);
        if let Some(label) = unique_mode(&votes) {
            return Resolution::Decided { label, stage };
        }
    }
    match expert {
        Some(label) => Resolution::Decided { label, stage: 4 },
        None => Resolution::Pending {
            needs: Escalation::Expert,
        },
    }
}

/// Resolve a record from its member labels and whichever escalation votes
/// it carries. Records must hold exactly three member labels.
pub fn resolve_label(r: &AnnotationRecord) -> Resolution {
    let members = [r.labels[0], r.labels[1], r.labels[2]];
    resolve_votes(members, r.leader_vote, r.leader2_vote, r.expert_vote)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staged_examples() {
        assert_eq!(resolve_votes([0, 0, 1], None, None, None), Resolution::Decided { label: 0, stage: 1 });
        assert_eq!(resolve_votes([0, 1, 2], Some(0), None, None), Resolution::Decided { label: 0, stage: 2 });
        assert_eq!(resolve_votes([0, 1, 2], Some(3), Some(3), None), Resolution::Decided { label: 3, stage: 3 });
        assert_eq!(
            resolve_votes([0, 1, 2], None, None, None),
            Resolution::Pending { needs: Escalation::Leader }
        );
        assert_eq!(
            resolve_votes([0, 1, 2], Some(3), Some(4), None),
            Resolution::Pending { needs: Escalation::Expert }
        );
        assert_eq!(resolve_votes([0, 1, 2], Some(3), Some(4), Some(5)), Resolution::Decided { label: 5, stage: 4 });
    }

    #[test]
    fn unique_mode_rejects_ties() {
        assert_eq!(unique_mode(&[1, 1, 2, 2]), None);
        assert_eq!(unique_mode(&[1, 1, 2, 2, 1]), Some(1));
        assert_eq!(unique_mode(&[]), None);
    }
}
