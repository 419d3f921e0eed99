use crate::memory::ReplicaId;
use crate::vm::ExternalizationEvent;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Unanimous(ExternalizationEvent),
    /// `supporters` are ascending; `minority` is every other voter,
    /// including replicas that never arrived.
    Majority {
        event: ExternalizationEvent,
        supporters: Vec<ReplicaId>,
        minority: Vec<ReplicaId>,
    },
    NoMajority,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteResult {
    pub verdict: Verdict,
    /// Distinct events with their supporter counts, in order of first
    /// appearance.
    pub tally: Vec<(ExternalizationEvent, usize)>,
}

/// Groups identical events. A replica with no event (hung) counts toward
/// N but supports nothing.
pub fn compare_and_vote(ballots: &[(ReplicaId, Option<ExternalizationEvent>)]) -> VoteResult {
    let n = ballots.len();
    let mut groups: Vec<(&ExternalizationEvent, Vec<ReplicaId>)> = Vec::new();
    for (id, ev) in ballots {
        let Some(ev) = ev else { continue };
        match groups.iter_mut().find(|(e, _)| *e == ev) {
            Some((_, ids)) => ids.push(*id),
            None => groups.push((ev, vec![*id])),
        }
    }
    let tally = groups
        .iter()
        .map(|(e, ids)| ((*e).clone(), ids.len()))
        .collect();
    let winner = groups.iter().find(|(_, ids)| 2 * ids.len() > n);
    let verdict = match winner {
        Some((ev, ids)) if ids.len() == n => Verdict::Unanimous((*ev).clone()),
        Some((ev, ids)) => {
            let mut supporters = ids.clone();
            supporters.sort();
            let mut minority: Vec<_> = ballots
                .iter()
                .map(|(id, _)| *id)
                .filter(|id| !ids.contains(id))
                .collect();
            minority.sort();
            Verdict::Majority {
                event: (*ev).clone(),
                supporters,
                minority,
            }
        }
        None => Verdict::NoMajority,
    };
    VoteResult { verdict, tally }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vm::{Digest, EventKind};

    fn ev(d: u64) -> ExternalizationEvent {
        ExternalizationEvent {
            kind: EventKind::Write {
                payload: b"hi".to_vec(),
            },
            digest: Digest(d),
        }
    }

    fn ballots(ds: &[Option<u64>]) -> Vec<(ReplicaId, Option<ExternalizationEvent>)> {
        ds.iter()
            .enumerate()
            .map(|(i, d)| (ReplicaId(i as u32), d.map(ev)))
            .collect()
    }

    #[test]
    fn unanimous() {
        let r = compare_and_vote(&ballots(&[Some(1), Some(1), Some(1)]));
        assert_eq!(r.verdict, Verdict::Unanimous(ev(1)));
        assert_eq!(r.tally, vec![(ev(1), 3)]);
    }

    #[test]
    fn two_against_one() {
        let r = compare_and_vote(&ballots(&[Some(1), Some(2), Some(1)]));
        assert_eq!(
            r.verdict,
            Verdict::Majority {
                event: ev(1),
                supporters: vec![ReplicaId(0), ReplicaId(2)],
                minority: vec![ReplicaId(1)],
            }
        );
    }

    #[test]
    fn dmr_split_has_no_majority() {
        assert_eq!(
            compare_and_vote(&ballots(&[Some(1), Some(2)])).verdict,
            Verdict::NoMajority
        );
        assert_eq!(
            compare_and_vote(&ballots(&[Some(1), None])).verdict,
            Verdict::NoMajority
        );
    }

    #[test]
    fn hung_replica_is_minority() {
        let r = compare_and_vote(&ballots(&[None, Some(4), Some(4)]));
        let Verdict::Majority { minority, .. } = r.verdict else {
            panic!("expected majority");
        };
        assert_eq!(minority, vec![ReplicaId(0)]);
    }

    #[test]
    fn kind_matters_not_just_digest() {
        let mut b = ballots(&[Some(1), Some(1), Some(1)]);
        b[2].1.as_mut().unwrap().kind = EventKind::Write {
            payload: b"ho".to_vec(),
        };
        let r = compare_and_vote(&b);
        assert!(matches!(r.verdict, Verdict::Majority { .. }));
        assert_eq!(r.tally.len(), 2);
    }

    #[test]
    fn single_and_three_way_split() {
        assert_eq!(
            compare_and_vote(&ballots(&[Some(9)])).verdict,
            Verdict::Unanimous(ev(9))
        );
        assert_eq!(
            compare_and_vote(&ballots(&[None])).verdict,
            Verdict::NoMajority
        );
        let r = compare_and_vote(&ballots(&[Some(1), Some(2), Some(3)]));
        assert_eq!(r.verdict, Verdict::NoMajority);
        assert_eq!(r.tally.iter().map(|t| t.1).sum::<usize>(), 3);
    }
}
