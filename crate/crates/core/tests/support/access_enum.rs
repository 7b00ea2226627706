//! Small-universe enumeration of the authorization model.

use std::collections::BTreeMap;

use qdh_core::access::{AccessControl, Action, DecisionBasis, Rights, Role};
use qdh_core::state::{Mutation, HubState};
use rand::Rng;

#[derive(Debug, Default)]
pub struct AccessReport {
    pub universes: usize,
    pub decisions: usize,
    pub decomposition_failures: Vec<String>,
    pub monotonicity_failures: Vec<String>,
    pub propagation_failures: Vec<String>,
    pub delete_failures: Vec<String>,
}

impl AccessReport {
    pub fn ok(&self) -> bool {
        self.decomposition_failures.is_empty()
            && self.monotonicity_failures.is_empty()
            && self.propagation_failures.is_empty()
            && self.delete_failures.is_empty()
    }
}

struct Universe {
    users: Vec<String>,
    /// user -> group index
    member_of: Vec<usize>,
    /// object -> (owning group index, public)
    objects: Vec<(usize, bool)>,
}

const ADMIN: &str = "admin";

fn build(u: &Universe, groups: usize, grants: &BTreeMap<(usize, usize), u8>) -> AccessControl {
    let mut ac = AccessControl::with_admins([ADMIN]);
    for g in 0..groups {
        let owner = u.member_of.iter().position(|&x| x == g).expect("every group has a member");
        ac.apply_create_group(&format!("g{g}"), &u.users[owner]);
    }
    for (i, user) in u.users.iter().enumerate() {
        if ac.group_of(user).is_none() {
            ac.apply_add_member(&format!("g{}", u.member_of[i]), user, Role::Student);
        }
    }
    for (o, (g, public)) in u.objects.iter().enumerate() {
        ac.apply_register_object(&format!("o{o}"), &format!("g{g}"));
        if *public {
            ac.apply_set_public(&format!("o{o}"), true);
        }
    }
    for ((s, o), bits) in grants {
        if *bits != 0 {
            ac.apply_grant(&u.users[*s], &format!("o{o}"), Rights::from_bits(*bits));
        }
    }
    ac
}

/// The decision rule written out directly from its definition.
fn expected(u: &Universe, grants: &BTreeMap<(usize, usize), u8>, s: usize, o: usize, a: Action) -> bool {
    let bit = match a {
        Action::Read => 1,
        Action::Write => 2,
        Action::Update => 4,
        Action::Delete => return false,
    };
    let (owner, public) = u.objects[o];
    u.member_of[s] == owner || grants.get(&(s, o)).is_some_and(|b| b & bit != 0) || (public && a == Action::Read)
}

fn decisions(ac: &AccessControl, u: &Universe) -> Vec<bool> {
    let mut out = Vec::new();
    for s in &u.users {
        for o in 0..u.objects.len() {
            for a in Action::ALL {
                out.push(ac.authorize(s, &format!("o{o}"), a).unwrap().allowed);
            }
        }
    }
    out
}

/// Enumerates group/user/object shapes up to 4 groups, 6 users and 8
/// objects; for each shape, `grant_samples` random grant matrices are
/// checked exhaustively over every (subject, object, action).
pub fn enumerate(rng: &mut impl Rng, grant_samples: usize) -> AccessReport {
    let mut report = AccessReport::default();
    for groups in 1..=4usize {
        for users in groups..=6usize {
            for objects in 1..=8usize {
                let member_of: Vec<usize> = (0..users).map(|i| if i < groups { i } else { rng.random_range(0..groups) }).collect();
                let universe = Universe {
                    users: (0..users).map(|i| format!("u{i}")).collect(),
                    member_of,
                    objects: (0..objects).map(|_| (rng.random_range(0..groups), rng.random_bool(0.25))).collect(),
                };
                report.universes += 1;
                for _ in 0..grant_samples {
                    check_universe(rng, &universe, groups, &mut report);
                }
            }
        }
    }
    report
}

fn check_universe(rng: &mut impl Rng, u: &Universe, groups: usize, report: &mut AccessReport) {
    let mut grants = BTreeMap::new();
    for s in 0..u.users.len() {
        for o in 0..u.objects.len() {
            if rng.random_bool(0.3) {
                grants.insert((s, o), rng.random_range(1..8u8));
            }
        }
    }
    let ac = build(u, groups, &grants);

    for (si, s) in u.users.iter().enumerate() {
        for o in 0..u.objects.len() {
            let oid = format!("o{o}");
            for a in Action::ALL {
                report.decisions += 1;
                let d = ac.authorize(s, &oid, a).unwrap();
                let parts = ac.authorize_group_only(s, &oid, a) || ac.authorize_discretionary_only(s, &oid, a) || ac.public_read(&oid, a);
                let want = expected(u, &grants, si, o, a);
                if d.allowed != parts || d.allowed != want {
                    report
                        .decomposition_failures
                        .push(format!("{s} {a:?} {oid}: allowed={} parts={parts} expected={want}", d.allowed));
                }
                let basis_ok = match (d.allowed, d.basis) {
                    (true, DecisionBasis::Group | DecisionBasis::Discretionary | DecisionBasis::Public) => true,
                    (false, DecisionBasis::DeniedDelete) => a == Action::Delete,
                    (false, DecisionBasis::DeniedDefault) => a != Action::Delete,
                    _ => false,
                };
                if !basis_ok {
                    report.decomposition_failures.push(format!("{s} {a:?} {oid}: basis {:?}", d.basis));
                }
                if a == Action::Delete && d.allowed {
                    report.delete_failures.push(format!("{s} may delete {oid}"));
                }
            }
        }
    }

    // One extra grant: nothing allowed becomes denied, and nobody else in
    // the grantee's group gains anything.
    let s = rng.random_range(0..u.users.len());
    let o = rng.random_range(0..u.objects.len());
    let bits = rng.random_range(1..8u8);
    let mut more = grants.clone();
    *more.entry((s, o)).or_default() |= bits;
    let after = build(u, groups, &more);
    let (before_d, after_d) = (decisions(&ac, u), decisions(&after, u));
    for (i, (b, a)) in before_d.iter().zip(&after_d).enumerate() {
        if *b && !*a {
            report.monotonicity_failures.push(format!("decision {i} flipped to denied after grant"));
        }
    }
    let per_user = u.objects.len() * Action::ALL.len();
    for (vi, v) in u.users.iter().enumerate() {
        if vi == s || u.member_of[vi] != u.member_of[s] {
            continue;
        }
        let range = vi * per_user..(vi + 1) * per_user;
        if before_d[range.clone()] != after_d[range] {
            report.propagation_failures.push(format!("grant to {} changed decisions of {v}", u.users[s]));
        }
    }

    // Roles are labels only.
    let mut relabeled = ac.clone();
    for (i, user) in u.users.iter().enumerate() {
        let g = format!("g{}", u.member_of[i]);
        if relabeled.group(&g).unwrap().owner != *user {
            relabeled.apply_add_member(&g, user, [Role::Researcher, Role::PhdStudent, Role::Student][i % 3]);
        }
    }
    if decisions(&relabeled, u) != before_d {
        report.decomposition_failures.push("role change altered decisions".into());
    }

    // No mutation path lets a non-admin remove or hide a sample.
    let mut state = HubState::with_admins([ADMIN]);
    state.access = ac;
    for user in &u.users {
        for o in 0..u.objects.len() {
            let oid = format!("o{o}");
            for m in [
                Mutation::Tombstone {
                    actor: user.clone(),
                    object: oid.clone(),
                },
                Mutation::PurgeObject {
                    actor: user.clone(),
                    path: oid.clone(),
                },
            ] {
                if state.prepare(m).is_ok() {
                    report.delete_failures.push(format!("{user} removed {oid}"));
                }
            }
        }
    }
}
